#include "meshmotion/pipeline.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace meshmotion;
namespace fs = std::filesystem;

namespace {

// Tiny dataset + tiny model: fast enough for unit-level pipeline checks.
struct Fixture {
  fs::path root;
  DatasetManifest manifest;

  Fixture() {
    root = fs::temp_directory_path() / "meshmotion_pipeline_test";
    if (!fs::exists(root / "manifest.json")) {
      fs::remove_all(root);
      DatasetConfig cfg;
      cfg.root = root.string();
      cfg.train_identities = 1;
      cfg.test_identities = 1;
      cfg.motions = {MotionKind::kArmRaise};
      cfg.frames = 10;
      cfg.seed = 11;
      manifest = make_dataset(cfg);
    } else {
      manifest = load_manifest((root / "manifest.json").string());
    }
  }
};

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.eigenpairs = 16;
  cfg.samples_per_frame = 128;
  cfg.extractor.widths = {6, 12, 12};
  cfg.extractor.hidden = 16;
  cfg.embedder.point_hidden = 16;
  cfg.embedder.point_layers = 2;
  cfg.embedder.code_dim = 8;
  cfg.embedder.gru_hidden = 8;
  cfg.embedder.gru_layers = 1;
  cfg.generator.hidden = 16;
  cfg.generator.hidden_layers = 2;
  cfg.verbose = false;
  cfg.checkpoint_every = 0;
  return cfg;
}

}  // namespace

TEST_CASE("train config round trip") {
  const fs::path p = fs::temp_directory_path() / "config_roundtrip.json";
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::kUnregistered;
  cfg.learning_rate = 3e-4;
  save_train_config(cfg, p.string());
  const TrainConfig loaded = load_train_config(p.string());
  CHECK(loaded.mode == TrainMode::kUnregistered);
  CHECK(loaded.learning_rate == doctest::Approx(3e-4));
  CHECK(loaded.extractor.widths == cfg.extractor.widths);
}

TEST_CASE("evaluate with a zero-initialized decoder equals the static baseline") {
  Fixture fx;
  Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.init_params();  // generator head is zero: rollout stays at the source
  const MetricsReport report = evaluate(ckpt, fx.manifest, "test");
  CHECK(report.mse == doctest::Approx(report.static_baseline_mse).epsilon(1e-12));
  CHECK(report.per_sequence.size() == 1);
}

TEST_CASE("evaluate rejects empty splits") {
  Fixture fx;
  Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.init_params();
  CHECK_THROWS_AS(evaluate(ckpt, fx.manifest, "nope"), ValidationError);
}

TEST_CASE("short training run: reproducible, loss logged, AIAP gated") {
  Fixture fx;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 5;
  cfg.weights.isometry_start_fraction = 0.6;
  const Checkpoint a = train(cfg, fx.manifest);
  const Checkpoint b = train(cfg, fx.manifest);
  REQUIRE(a.history.size() == 5);
  for (size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].loss.total ==
          doctest::Approx(b.history[e].loss.total).epsilon(1e-9));
    const bool active = (static_cast<double>(e) / cfg.epochs) >= 0.6;
    if (active)
      CHECK(a.history[e].loss.aiap > 0.0);
    else
      CHECK(a.history[e].loss.aiap == 0.0);
  }
  // Learning-rate schedule: decay every lr_step epochs.
  CHECK(a.history[0].lr == doctest::Approx(cfg.learning_rate));
  CHECK(a.history.back().lr ==
        doctest::Approx(cfg.learning_rate * std::pow(cfg.lr_decay, 5 / cfg.lr_step)));
}

TEST_CASE("batched and sequential training agree") {
  Fixture fx;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const Checkpoint seq = train(cfg, fx.manifest);
  cfg.batch = 4;
  const Checkpoint batched = train(cfg, fx.manifest);
  // One train sequence: batching cannot change the arithmetic.
  CHECK(seq.history.back().loss.total ==
        doctest::Approx(batched.history.back().loss.total).epsilon(1e-12));
}

TEST_CASE("checkpoint save/load round trip preserves evaluation bit-for-bit") {
  Fixture fx;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const fs::path p = fs::temp_directory_path() / "roundtrip.ckpt";
  const Checkpoint trained = train(cfg, fx.manifest, p.string());
  const Checkpoint loaded = load_checkpoint(p.string());
  CHECK(loaded.epoch == trained.epoch);
  CHECK(loaded.history.size() == trained.history.size());
  const MetricsReport a = evaluate(trained, fx.manifest, "test");
  const MetricsReport b = evaluate(loaded, fx.manifest, "test");
  CHECK(a.mse == b.mse);      // bit-identical
  CHECK(a.cosim == b.cosim);
}

TEST_CASE("registered training rejects varying topology") {
  Fixture fx;
  // Build an unregistered copy of the dataset.
  const fs::path root = fs::temp_directory_path() / "meshmotion_unreg_test";
  if (!fs::exists(root / "manifest.json")) {
    fs::remove_all(root);
    DatasetConfig dcfg;
    dcfg.root = root.string();
    dcfg.train_identities = 1;
    dcfg.test_identities = 1;
    dcfg.motions = {MotionKind::kArmRaise};
    dcfg.frames = 10;
    dcfg.seed = 12;
    dcfg.unregistered = true;
    make_dataset(dcfg);
  }
  const DatasetManifest manifest = load_manifest((root / "manifest.json").string());
  TrainConfig cfg = tiny_config();
  CHECK_THROWS_AS(train(cfg, manifest), ValidationError);

  SUBCASE("unregistered mode trains on it") {
    cfg.mode = TrainMode::kUnregistered;
    cfg.epochs = 2;
    const Checkpoint ckpt = train(cfg, manifest);
    CHECK(ckpt.history.size() == 2);
    CHECK(std::isfinite(ckpt.history.back().chamfer));
    const MetricsReport report = evaluate(ckpt, manifest, "test");
    CHECK(report.chamfer.has_value());
  }
}

TEST_CASE("robustness table: ORIGINAL row deviates by exactly zero") {
  Fixture fx;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const Checkpoint ckpt = train(cfg, fx.manifest);
  const auto rows = robustness_eval(ckpt, fx.manifest,
                                    {RemeshVariant::kDownsample2});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == RemeshVariant::kOriginal);
  CHECK(rows[0].mse_deviation == 0.0);
  CHECK(rows[1].mse_deviation >= 0.0);
  const fs::path csv = fs::temp_directory_path() / "robustness.csv";
  save_robustness_csv(rows, csv.string());
  CHECK(fs::exists(csv));
}

TEST_CASE("transfer runs end to end and validates its inputs") {
  Fixture fx;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  const Checkpoint ckpt = train(cfg, fx.manifest);
  const auto& rec = *fx.manifest.split("test")[0];
  const fs::path motion_dir = fs::path(fx.manifest.root) / rec.dir;
  const fs::path source = motion_dir / "frame_0000.obj";
  const fs::path out = fs::temp_directory_path() / "transfer_out";
  fs::remove_all(out);
  transfer(ckpt, source.string(), motion_dir.string(), out.string());
  CHECK(fs::exists(out / "frame_0000.obj"));
  CHECK(fs::exists(out / ("frame_000" + std::to_string(rec.frames - 1) + ".obj")));
  CHECK(fs::exists(out / "manifest.json"));

  SUBCASE("empty motion directory is rejected") {
    const fs::path empty = fs::temp_directory_path() / "empty_motion";
    fs::create_directories(empty);
    CHECK_THROWS_AS(transfer(ckpt, source.string(), empty.string(), out.string()),
                    ValidationError);
  }
  SUBCASE("disconnected source is rejected with a hint") {
    TriMesh two;
    two.vertices.resize(6, 3);
    two.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5, 6, 5, 5, 5, 6, 5;
    two.faces.resize(2, 3);
    two.faces << 0, 1, 2, 3, 4, 5;
    const fs::path bad = fs::temp_directory_path() / "disconnected.obj";
    save_mesh(two, bad.string());
    try {
      transfer(ckpt, bad.string(), motion_dir.string(), out.string());
      FAIL("expected error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("connected") != std::string::npos);
    }
  }
}

TEST_CASE("bench: empty resolution list gives an empty table") {
  Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.init_params();
  CHECK(bench_inference(ckpt, {}, 10).empty());
}

TEST_CASE("prepare_sequence normalizes by the first frame") {
  Fixture fx;
  const MotionSequence seq = load_sequence(fx.manifest, *fx.manifest.split("train")[0]);
  const PreparedSequence prep = prepare_sequence(seq);
  const Vec3 lo = prep.frames.frames[0].vertices.colwise().minCoeff().transpose();
  const Vec3 hi = prep.frames.frames[0].vertices.colwise().maxCoeff().transpose();
  CHECK((hi - lo).norm() == doctest::Approx(1.0).epsilon(1e-12));

  SUBCASE("whole-sequence translation is removed by normalization") {
    MotionSequence moved = seq;
    for (auto& f : moved.frames)
      f.vertices.rowwise() += RowVector::Constant(3, 2.5);
    const PreparedSequence prep2 = prepare_sequence(moved);
    for (int t = 0; t < prep.frames.frame_count(); ++t)
      CHECK((prep2.frames.frames[t].vertices - prep.frames.frames[t].vertices)
                .cwiseAbs()
                .maxCoeff() < 1e-12);
  }
}
