// meshmotion command-line interface.
//
// Exit codes: 0 success, 2 validation/input error, 3 numerical failure.
#include "meshmotion/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace mm = meshmotion;

namespace {

std::vector<mm::RemeshVariant> parse_variants(const std::string& csv) {
  std::vector<mm::RemeshVariant> out;
  std::string token;
  std::istringstream ss(csv);
  while (std::getline(ss, token, ','))
    if (!token.empty()) out.push_back(mm::remesh_variant_from_name(token));
  if (out.empty()) throw mm::ValidationError("no remesh variants given");
  return out;
}

std::vector<int> parse_ints(const std::string& csv) {
  std::vector<int> out;
  std::string token;
  std::istringstream ss(csv);
  while (std::getline(ss, token, ','))
    if (!token.empty()) out.push_back(std::stoi(token));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshmotion: rig-free motion prediction for unregistered meshes"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "dataset";
  int synth_train = 5, synth_test = 2, synth_frames = 30, synth_level = 0;
  std::uint64_t synth_seed = 7;
  bool synth_unregistered = false;
  std::string synth_motions = "arm_raise,knee_raise,walk";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--train-identities", synth_train);
  synth->add_option("--test-identities", synth_test);
  synth->add_option("--frames", synth_frames);
  synth->add_option("--level", synth_level, "resolution level 0/1/2");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--motions", synth_motions, "comma-separated kinds");
  synth->add_flag("--unregistered", synth_unregistered,
                  "independently remesh every frame after the first");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config, train_data, train_ckpt = "model.ckpt";
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_ckpt, "output checkpoint");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_json;
  eval->add_option("--ckpt", eval_ckpt)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--split", eval_split);
  eval->add_option("--json", eval_json, "write the report to this file");

  // robustness
  auto* robust = app.add_subcommand("robustness", "remeshing deviation table");
  std::string rb_ckpt, rb_data, rb_variants = "ds2,us2,vd", rb_csv;
  robust->add_option("--ckpt", rb_ckpt)->required();
  robust->add_option("--data", rb_data)->required();
  robust->add_option("--variants", rb_variants);
  robust->add_option("--csv", rb_csv, "write the table to this file");

  // transfer
  auto* trans = app.add_subcommand("transfer", "rig-free motion transfer");
  std::string tr_ckpt, tr_source, tr_motion, tr_out = "transfer_out";
  trans->add_option("--ckpt", tr_ckpt)->required();
  trans->add_option("--source", tr_source, "source mesh (OBJ/PLY)")->required();
  trans->add_option("--motion", tr_motion, "directory of target frames")->required();
  trans->add_option("--out", tr_out);

  // embed
  auto* embed = app.add_subcommand("embed", "export motion codes as CSV");
  std::string em_ckpt, em_motion, em_csv = "codes.csv";
  bool em_mds = false;
  embed->add_option("--ckpt", em_ckpt)->required();
  embed->add_option("--motion", em_motion, "directory of frames")->required();
  embed->add_option("--csv", em_csv);
  embed->add_flag("--mds", em_mds, "also write <csv>.mds.csv (2D projection)");

  // bench
  auto* bench = app.add_subcommand("bench", "inference timing table");
  std::string be_ckpt, be_res = "1000,4000,8000";
  int be_frames = 200;
  bench->add_option("--ckpt", be_ckpt)->required();
  bench->add_option("--resolutions", be_res);
  bench->add_option("--frames", be_frames);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      mm::DatasetConfig cfg;
      cfg.root = synth_out;
      cfg.train_identities = synth_train;
      cfg.test_identities = synth_test;
      cfg.frames = synth_frames;
      cfg.level = synth_level;
      cfg.seed = synth_seed;
      cfg.unregistered = synth_unregistered;
      cfg.motions.clear();
      std::istringstream ss(synth_motions);
      std::string token;
      while (std::getline(ss, token, ','))
        if (!token.empty()) cfg.motions.push_back(mm::motion_kind_from_name(token));
      const mm::DatasetManifest manifest = mm::make_dataset(cfg);
      std::printf("wrote %zu sequences under %s (manifest hash %s)\n",
                  manifest.sequences.size(), cfg.root.c_str(),
                  mm::hash_hex(mm::manifest_hash(manifest)).c_str());
    } else if (*train) {
      mm::TrainConfig cfg;
      if (!train_config.empty()) cfg = mm::load_train_config(train_config);
      const auto manifest = mm::load_manifest(train_data + "/manifest.json");
      if (manifest.unregistered && cfg.mode == mm::TrainMode::kRegistered)
        throw mm::ValidationError(
            "dataset is unregistered; set \"mode\": \"unregistered\" in the config");
      mm::train(cfg, manifest, train_ckpt);
      std::printf("checkpoint written to %s\n", train_ckpt.c_str());
    } else if (*eval) {
      const auto ckpt = mm::load_checkpoint(eval_ckpt);
      const auto manifest = mm::load_manifest(eval_data + "/manifest.json");
      const auto report = mm::evaluate(ckpt, manifest, eval_split);
      if (report.chamfer)
        std::printf("split %s: chamfer %.6e\n", eval_split.c_str(), *report.chamfer);
      else
        std::printf("split %s: mse %.6e cosim %.6e (static baseline mse %.6e)\n",
                    eval_split.c_str(), report.mse, report.cosim,
                    report.static_baseline_mse);
      for (const auto& m : report.per_sequence)
        std::printf("  %-28s mse %.6e cosim %.6e\n", m.name.c_str(), m.mse,
                    m.cosim);
      if (!eval_json.empty()) mm::save_metrics_json(report, eval_json);
    } else if (*robust) {
      const auto ckpt = mm::load_checkpoint(rb_ckpt);
      const auto manifest = mm::load_manifest(rb_data + "/manifest.json");
      const auto rows =
          mm::robustness_eval(ckpt, manifest, parse_variants(rb_variants));
      std::printf("%-10s %-12s %-12s %-10s %-10s\n", "variant", "mse", "cosim",
                  "mse_dev", "cosim_dev");
      for (const auto& r : rows)
        std::printf("%-10s %-12.5e %-12.5e %-9.2f%% %-9.2f%%\n",
                    mm::remesh_variant_name(r.variant), r.mse, r.cosim,
                    100.0 * r.mse_deviation, 100.0 * r.cosim_deviation);
      if (!rb_csv.empty()) mm::save_robustness_csv(rows, rb_csv);
    } else if (*trans) {
      const auto ckpt = mm::load_checkpoint(tr_ckpt);
      mm::transfer(ckpt, tr_source, tr_motion, tr_out);
      std::printf("rollout written to %s\n", tr_out.c_str());
    } else if (*embed) {
      const auto ckpt = mm::load_checkpoint(em_ckpt);
      namespace fs = std::filesystem;
      std::vector<std::string> files;
      if (fs::is_directory(em_motion))
        for (const auto& e : fs::directory_iterator(em_motion)) {
          const std::string ext = e.path().extension().string();
          if (ext == ".obj" || ext == ".ply") files.push_back(e.path().string());
        }
      std::sort(files.begin(), files.end());
      if (files.empty())
        throw mm::ValidationError("no mesh frames found in " + em_motion);
      mm::MotionSequence seq;
      for (const auto& f : files) seq.frames.push_back(mm::load_mesh(f));
      const auto [first, t] = mm::normalize(seq.frames[0]);
      for (auto& f : seq.frames) f.vertices = t.apply(f.vertices);
      const mm::MotionCode code = mm::embed_motion(
          seq, ckpt.embedder, ckpt.config.samples_per_frame, 424242);
      mm::write_motion_code_csv(code, em_csv);
      std::printf("wrote %d x %d codes to %s\n", code.length(), code.dim(),
                  em_csv.c_str());
      if (em_mds) {
        const auto polylines = mm::mds_project({code});
        mm::write_mds_csv(polylines, em_csv + ".mds.csv");
        std::printf("wrote MDS projection to %s.mds.csv\n", em_csv.c_str());
      }
    } else if (*bench) {
      const auto ckpt = mm::load_checkpoint(be_ckpt);
      const auto rows = mm::bench_inference(ckpt, parse_ints(be_res), be_frames);
      std::printf("%-12s %-8s %-12s %-12s %-12s\n", "resolution", "frames",
                  "build_s", "features_s", "rollout_s");
      for (const auto& r : rows)
        std::printf("%-12d %-8d %-12.4f %-12.4f %-12.4f\n", r.resolution,
                    r.frames, r.operator_build_s, r.feature_s, r.rollout_s);
    }
  } catch (const mm::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const mm::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const mm::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
