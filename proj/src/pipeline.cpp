#include "meshmotion/pipeline.hpp"

#include "meshmotion/backend.hpp"

#include <json.hpp>

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <utility>

namespace meshmotion {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config I/O
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const TrainConfig& c) {
  json j;
  j["version"] = 1;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["lr_step"] = c.lr_step;
  j["lr_decay"] = c.lr_decay;
  j["lambda_normal"] = c.weights.lambda_normal;
  j["lambda_isometry"] = c.weights.lambda_isometry;
  j["isometry_start_fraction"] = c.weights.isometry_start_fraction;
  j["mode"] = c.mode == TrainMode::kRegistered ? "registered" : "unregistered";
  j["batch"] = c.batch;
  j["clip_norm"] = c.clip_norm;
  j["checkpoint_every"] = c.checkpoint_every;
  j["seed"] = c.seed;
  j["eigenpairs"] = c.eigenpairs;
  j["samples_per_frame"] = c.samples_per_frame;
  j["teacher_forcing"] = c.teacher_forcing;
  j["threads"] = c.threads;
  j["extractor_widths"] = c.extractor.widths;
  j["extractor_hidden"] = c.extractor.hidden;
  j["embedder_point_hidden"] = c.embedder.point_hidden;
  j["embedder_point_layers"] = c.embedder.point_layers;
  j["embedder_code_dim"] = c.embedder.code_dim;
  j["embedder_gru_hidden"] = c.embedder.gru_hidden;
  j["embedder_gru_layers"] = c.embedder.gru_layers;
  j["generator_hidden"] = c.generator.hidden;
  j["generator_hidden_layers"] = c.generator.hidden_layers;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  if (j.value("version", 1) != 1)
    throw ValidationError("unsupported config version");
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_step = j.value("lr_step", c.lr_step);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.weights.lambda_normal = j.value("lambda_normal", c.weights.lambda_normal);
  c.weights.lambda_isometry =
      j.value("lambda_isometry", c.weights.lambda_isometry);
  c.weights.isometry_start_fraction =
      j.value("isometry_start_fraction", c.weights.isometry_start_fraction);
  const std::string mode = j.value("mode", "registered");
  if (mode == "registered")
    c.mode = TrainMode::kRegistered;
  else if (mode == "unregistered")
    c.mode = TrainMode::kUnregistered;
  else
    throw ValidationError("config: unknown mode '" + mode + "'");
  c.batch = j.value("batch", c.batch);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  c.eigenpairs = j.value("eigenpairs", c.eigenpairs);
  c.samples_per_frame = j.value("samples_per_frame", c.samples_per_frame);
  c.teacher_forcing = j.value("teacher_forcing", c.teacher_forcing);
  c.threads = j.value("threads", c.threads);
  if (j.contains("extractor_widths"))
    c.extractor.widths = j["extractor_widths"].get<std::vector<int>>();
  c.extractor.hidden = j.value("extractor_hidden", c.extractor.hidden);
  c.embedder.point_hidden = j.value("embedder_point_hidden", c.embedder.point_hidden);
  c.embedder.point_layers = j.value("embedder_point_layers", c.embedder.point_layers);
  c.embedder.code_dim = j.value("embedder_code_dim", c.embedder.code_dim);
  c.embedder.gru_hidden = j.value("embedder_gru_hidden", c.embedder.gru_hidden);
  c.embedder.gru_layers = j.value("embedder_gru_layers", c.embedder.gru_layers);
  c.generator.hidden = j.value("generator_hidden", c.generator.hidden);
  c.generator.hidden_layers =
      j.value("generator_hidden_layers", c.generator.hidden_layers);
  c.generator.feature_dim = c.extractor.widths.back();
  c.generator.code_dim = c.embedder.code_dim;
  if (c.epochs < 1 || c.learning_rate <= 0 || c.batch < 1 || c.lr_step < 1)
    throw ValidationError("config: rates and counts must be positive");
  return c;
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_train_config(const TrainConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << config_to_json(config).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

void Checkpoint::init_params() {
  config.generator.feature_dim = config.extractor.feature_dim();
  config.generator.code_dim = config.embedder.code_dim;
  extractor.cfg = config.extractor;
  embedder.cfg = config.embedder;
  generator.cfg = config.generator;
  extractor.init(hash_mix(config.seed, 101));
  embedder.init(hash_mix(config.seed, 202));
  generator.init(hash_mix(config.seed, 303));
}

std::vector<nn::Tensor*> Checkpoint::tensors() {
  std::vector<nn::Tensor*> out;
  for (nn::Tensor* t : extractor.tensors()) out.push_back(t);
  for (nn::Tensor* t : embedder.tensors()) out.push_back(t);
  for (nn::Tensor* t : generator.tensors()) out.push_back(t);
  return out;
}

std::vector<const nn::Tensor*> Checkpoint::tensors() const {
  std::vector<const nn::Tensor*> out;
  for (const nn::Tensor* t : extractor.tensors()) out.push_back(t);
  for (const nn::Tensor* t : embedder.tensors()) out.push_back(t);
  for (const nn::Tensor* t : generator.tensors()) out.push_back(t);
  return out;
}

namespace {
constexpr char kCkptMagic[8] = {'M', 'M', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["format_version"] = ckpt.format_version;
  header["epoch"] = ckpt.epoch;
  header["config"] = config_to_json(ckpt.config);
  json hist = json::array();
  for (const auto& h : ckpt.history)
    hist.push_back(json{{"epoch", h.epoch},
                        {"lr", h.lr},
                        {"total", h.loss.total},
                        {"mse", h.loss.mse},
                        {"normal", h.loss.normal},
                        {"aiap", h.loss.aiap},
                        {"chamfer", h.chamfer}});
  header["history"] = hist;
  header["param_hash"] = nn::tensors_hash(ckpt.tensors());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kCkptMagic, 8);
  const std::string hs = header.dump();
  const int64_t hlen = static_cast<int64_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), hlen);
  nn::write_tensors(out, ckpt.tensors());
  if (!out) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw ValidationError(path + ": not a checkpoint file");
  int64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": corrupt header: " + e.what());
  }
  Checkpoint ckpt;
  ckpt.format_version = header.at("format_version");
  if (ckpt.format_version != 1)
    throw ValidationError(path + ": unsupported checkpoint version");
  ckpt.config = config_from_json(header.at("config"));
  ckpt.epoch = header.at("epoch");
  for (const auto& h : header.at("history")) {
    EpochLog log;
    log.epoch = h.at("epoch");
    log.lr = h.at("lr");
    log.loss.total = h.at("total");
    log.loss.mse = h.at("mse");
    log.loss.normal = h.at("normal");
    log.loss.aiap = h.at("aiap");
    log.chamfer = h.at("chamfer");
    ckpt.history.push_back(log);
  }
  ckpt.init_params();
  nn::read_tensors(in, ckpt.tensors());
  ckpt.param_hash = nn::tensors_hash(std::as_const(ckpt).tensors());
  const std::uint64_t expected = header.at("param_hash");
  if (ckpt.param_hash != expected)
    throw ValidationError(path + ": parameter hash mismatch (corrupt file)");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

PreparedSequence prepare_sequence(MotionSequence sequence) {
  if (sequence.frames.empty())
    throw ValidationError("prepare_sequence: empty sequence");
  PreparedSequence out;
  out.name = sequence.name;
  auto [normalized_source, transform] = normalize(sequence.frames[0]);
  out.transform = transform;
  out.frames.name = sequence.name;
  out.frames.frames.reserve(sequence.frames.size());
  for (auto& f : sequence.frames) {
    TriMesh nf = f;
    nf.vertices = transform.apply(f.vertices);
    out.frames.frames.push_back(std::move(nf));
  }
  out.registered = out.frames.registered();
  return out;
}

namespace {

struct TrainSequence {
  PreparedSequence prep;
  std::shared_ptr<const SpectralOps> ops;
  EdgeList edges;
  std::vector<Matrix> truth;          // frames 1..T-1 positions (registered)
  std::vector<Matrix> target_clouds;  // frames 1..T-1 vertices (unregistered)
  std::uint64_t seed = 0;
};

double schedule_lr(const TrainConfig& c, int epoch) {
  return c.learning_rate * std::pow(c.lr_decay, epoch / c.lr_step);
}

// One sequence forward + backward; returns components. The scalar root is
// pre-scaled by inv_batch so merged gradients average over the batch.
LossComponents sequence_pass(ad::Tape& tape, TrainSequence& seq, Checkpoint& ckpt,
                             const TrainConfig& cfg, int epoch, double inv_batch,
                             double* chamfer_out) {
  const TriMesh& source = seq.prep.frames.frames[0];
  auto features = extract_features_ad(tape, source, *seq.ops, ckpt.extractor);

  const int targets = seq.prep.frames.frame_count() - 1;
  std::vector<Matrix> clouds;
  clouds.reserve(targets);
  for (int t = 1; t <= targets; ++t)
    clouds.push_back(sample_points(seq.prep.frames.frames[t],
                                   cfg.samples_per_frame,
                                   hash_mix(hash_mix(seq.seed, t), epoch)));
  auto code = embed_motion_ad(tape, clouds, ckpt.embedder);

  std::vector<ad::Var> positions;
  if (cfg.teacher_forcing && cfg.mode == TrainMode::kRegistered) {
    // Each step starts from the ground-truth previous frame.
    positions.reserve(targets);
    for (int t = 0; t < targets; ++t) {
      const Matrix& prev =
          t == 0 ? source.vertices : seq.truth[static_cast<size_t>(t) - 1];
      auto code_row =
          ad::broadcast_row(ad::slice_rows(code, t, 1), source.vertex_count());
      auto aug = ad::concat_cols({features, code_row, tape.constant(prev)});
      ad::Var h = aug;
      const int last = static_cast<int>(ckpt.generator.w.size()) - 1;
      for (int i = 0; i < last; ++i)
        h = ad::leaky_relu(ad::affine_stable(h, tape.param(ckpt.generator.w[i]),
                                             tape.param(ckpt.generator.b[i])),
                           ckpt.generator.cfg.leaky_slope);
      auto delta = ad::affine_stable(h, tape.param(ckpt.generator.w[last]),
                                     tape.param(ckpt.generator.b[last]));
      positions.push_back(ad::add(tape.constant(prev), delta));
    }
  } else {
    positions = rollout_ad(tape, source.vertices, features, code, ckpt.generator);
  }

  LossComponents comps;
  ad::Var loss;
  if (cfg.mode == TrainMode::kRegistered) {
    const double fraction = static_cast<double>(epoch) / cfg.epochs;
    loss = total_loss_ad(positions, seq.truth, source.faces, source.vertices,
                         seq.edges, cfg.weights, fraction, &comps);
    if (chamfer_out) *chamfer_out = 0.0;
  } else {
    loss = chamfer_sequence_loss(positions, seq.target_clouds);
    comps.total = loss.value()(0, 0);
    if (chamfer_out) *chamfer_out = comps.total;
  }
  if (!std::isfinite(comps.total))
    throw NumericalError("non-finite loss");
  tape.backward(ad::scale(loss, inv_batch));
  return comps;
}

}  // namespace

Checkpoint train(const TrainConfig& config, const DatasetManifest& manifest,
                 const std::string& out_path,
                 const std::function<void(const EpochLog&)>& on_epoch) {
  const auto records = manifest.split("train");
  if (records.empty()) throw ValidationError("train: empty train split");

  SpectralCache cache(64);
  std::vector<TrainSequence> sequences;
  for (const SequenceRecord* rec : records) {
    TrainSequence ts;
    ts.prep = prepare_sequence(load_sequence(manifest, *rec));
    ts.seed = rec->seed;
    if (config.mode == TrainMode::kRegistered) {
      if (!ts.prep.registered)
        throw ValidationError(
            "registered training requires constant per-sequence topology; "
            "sequence '" + rec->identity + "/" + rec->motion + "' varies");
      for (int t = 1; t < ts.prep.frames.frame_count(); ++t)
        ts.truth.push_back(ts.prep.frames.frames[t].vertices);
    } else {
      for (int t = 1; t < ts.prep.frames.frame_count(); ++t)
        ts.target_clouds.push_back(ts.prep.frames.frames[t].vertices);
    }
    ts.ops = cache.get_or_build(ts.prep.frames.frames[0], config.eigenpairs);
    ts.edges = edge_list(ts.prep.frames.frames[0]);
    sequences.push_back(std::move(ts));
  }

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.init_params();
  const std::vector<nn::Tensor*> params = ckpt.tensors();
  nn::Adam adam({});  // paper defaults; lr passed per step

  const int threads = config.threads > 0
                          ? config.threads
                          : std::max(1, omp_get_max_threads());
  Checkpoint last_good = ckpt;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = schedule_lr(config, epoch);
    LossComponents epoch_loss;
    double epoch_chamfer = 0.0;
    int steps = 0;
    try {
      for (size_t begin = 0; begin < sequences.size();
           begin += static_cast<size_t>(config.batch)) {
        const size_t end =
            std::min(sequences.size(), begin + static_cast<size_t>(config.batch));
        const int batch_n = static_cast<int>(end - begin);
        const double inv_batch = 1.0 / batch_n;
        for (nn::Tensor* t : params) t->zero_grad();

        std::vector<ad::Tape> tapes(batch_n);
        std::vector<LossComponents> comps(batch_n);
        std::vector<double> chamfers(batch_n, 0.0);
        std::vector<Checkpoint*> models(batch_n, &ckpt);
        // Parallel forward/backward with per-sequence model copies so that
        // bound-tensor gradient writes never race; merged in fixed order.
        std::vector<Checkpoint> copies;
        if (batch_n > 1) {
          copies.assign(batch_n - 1, ckpt);
          for (int i = 1; i < batch_n; ++i) models[i] = &copies[i - 1];
        }
        std::exception_ptr error;
#pragma omp parallel for num_threads(std::min(threads, batch_n)) schedule(dynamic)
        for (int i = 0; i < batch_n; ++i) {
          try {
            for (nn::Tensor* t : models[i]->tensors())
              if (models[i] != &ckpt) t->zero_grad();
            comps[i] = sequence_pass(tapes[i], sequences[begin + i], *models[i],
                                     config, epoch, inv_batch, &chamfers[i]);
          } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
          }
        }
        if (error) std::rethrow_exception(error);
        // Merge copy gradients into the master tensors in sequence order.
        for (int i = 1; i < batch_n; ++i) {
          const auto src = models[i]->tensors();
          for (size_t t = 0; t < params.size(); ++t) params[t]->grad += src[t]->grad;
        }
        nn::clip_grad_norm(params, config.clip_norm);
        adam.step(params, lr);
        for (int i = 0; i < batch_n; ++i) {
          epoch_loss.total += comps[i].total;
          epoch_loss.mse += comps[i].mse;
          epoch_loss.normal += comps[i].normal;
          epoch_loss.aiap += comps[i].aiap;
          epoch_chamfer += chamfers[i];
          ++steps;
        }
      }
    } catch (const NumericalError&) {
      if (!out_path.empty()) {
        save_checkpoint(last_good, out_path);
        throw NumericalError(
            "training diverged at epoch " + std::to_string(epoch) +
            "; last good checkpoint written to " + out_path);
      }
      throw;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.loss.total = epoch_loss.total / steps;
    log.loss.mse = epoch_loss.mse / steps;
    log.loss.normal = epoch_loss.normal / steps;
    log.loss.aiap = epoch_loss.aiap / steps;
    log.chamfer = epoch_chamfer / steps;
    ckpt.history.push_back(log);
    ckpt.epoch = epoch + 1;
    last_good = ckpt;
    if (on_epoch) on_epoch(log);
    if (config.verbose && (epoch % 10 == 0 || epoch + 1 == config.epochs))
      std::fprintf(stderr, "[epoch %4d] lr %.3e loss %.6e\n", epoch, lr,
                   log.loss.total);
    if (!out_path.empty() && config.checkpoint_every > 0 &&
        (epoch + 1) % config.checkpoint_every == 0)
      save_checkpoint(ckpt, out_path);
  }
  ckpt.param_hash = nn::tensors_hash(std::as_const(ckpt).tensors());
  if (!out_path.empty()) save_checkpoint(ckpt, out_path);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

struct EvalResult {
  std::vector<Matrix> predicted;  // frames 1..T-1, normalized space
  PreparedSequence prep;
};

EvalResult run_model(const Checkpoint& ckpt, const DatasetManifest& manifest,
                     const SequenceRecord& rec, SpectralCache& cache) {
  EvalResult out;
  out.prep = prepare_sequence(load_sequence(manifest, rec));
  const TriMesh& source = out.prep.frames.frames[0];
  const auto ops = cache.get_or_build(source, ckpt.config.eigenpairs);
  const FeatureField features = extract_features(source, *ops, ckpt.extractor);
  MotionSequence targets;
  targets.frames.assign(out.prep.frames.frames.begin() + 1,
                        out.prep.frames.frames.end());
  const MotionCode code =
      embed_motion(targets, ckpt.embedder, ckpt.config.samples_per_frame,
                   hash_mix(rec.seed, 424242));
  const DeformationRollout roll = rollout(source, features, code, ckpt.generator);
  out.predicted.assign(roll.positions.begin() + 1, roll.positions.end());
  return out;
}

}  // namespace

MetricsReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                       const std::string& split) {
  const auto records = manifest.split(split);
  if (records.empty())
    throw ValidationError("evaluate: split '" + split + "' is empty");
  SpectralCache cache(64);
  MetricsReport report;
  const bool unreg = manifest.unregistered;
  for (const SequenceRecord* rec : records) {
    EvalResult r = run_model(ckpt, manifest, *rec, cache);
    SequenceMetrics m;
    m.name = rec->identity + "/" + rec->motion;
    const TriMesh& source = r.prep.frames.frames[0];
    if (unreg) {
      std::vector<Matrix> targets;
      for (int t = 1; t < r.prep.frames.frame_count(); ++t)
        targets.push_back(r.prep.frames.frames[t].vertices);
      m.chamfer = chamfer_sequence_loss(r.predicted, targets);
    } else {
      std::vector<Matrix> truth;
      std::vector<Matrix> statics;
      for (int t = 1; t < r.prep.frames.frame_count(); ++t) {
        truth.push_back(r.prep.frames.frames[t].vertices);
        statics.push_back(source.vertices);
      }
      m.mse = mse_loss(r.predicted, truth);
      m.cosim = normal_loss(r.predicted, truth, source.faces);
      m.static_baseline_mse = mse_loss(statics, truth);
    }
    report.per_sequence.push_back(m);
  }
  const double n = static_cast<double>(report.per_sequence.size());
  double chamfer_sum = 0.0;
  for (const auto& m : report.per_sequence) {
    report.mse += m.mse / n;
    report.cosim += m.cosim / n;
    report.static_baseline_mse += m.static_baseline_mse / n;
    chamfer_sum += m.chamfer / n;
  }
  if (unreg) report.chamfer = chamfer_sum;
  return report;
}

// ---------------------------------------------------------------------------
// Robustness protocol
// ---------------------------------------------------------------------------

std::vector<RobustnessRow> robustness_eval(
    const Checkpoint& ckpt, const DatasetManifest& manifest,
    const std::vector<RemeshVariant>& variants) {
  const auto records = manifest.split("test");
  if (records.empty()) throw ValidationError("robustness_eval: empty test split");
  if (manifest.unregistered)
    throw ValidationError("robustness_eval requires registered ground truth");

  SpectralCache cache(64);
  std::vector<RemeshVariant> all = {RemeshVariant::kOriginal};
  for (RemeshVariant v : variants)
    if (v != RemeshVariant::kOriginal) all.push_back(v);

  // Per-sequence reusable pieces.
  struct Item {
    PreparedSequence prep;
    MotionCode code;
  };
  std::vector<Item> items;
  for (const SequenceRecord* rec : records) {
    Item it;
    it.prep = prepare_sequence(load_sequence(manifest, *rec));
    MotionSequence targets;
    targets.frames.assign(it.prep.frames.frames.begin() + 1,
                          it.prep.frames.frames.end());
    it.code = embed_motion(targets, ckpt.embedder, ckpt.config.samples_per_frame,
                           hash_mix(rec->seed, 424242));
    items.push_back(std::move(it));
  }

  std::vector<RobustnessRow> rows;
  double mse_orig = 0.0, cosim_orig = 0.0;
  for (RemeshVariant variant : all) {
    double mse_acc = 0.0, cosim_acc = 0.0;
    for (const Item& it : items) {
      const TriMesh& source = it.prep.frames.frames[0];
      const TriMesh rs = remesh(source, variant, 1234);
      const auto ops = cache.get_or_build(rs, ckpt.config.eigenpairs);
      const FeatureField features = extract_features(rs, *ops, ckpt.extractor);
      const DeformationRollout roll = rollout(rs, features, it.code, ckpt.generator);

      // Ground truth transferred to the remeshed vertices: each remeshed
      // vertex inherits the displacement curve of its nearest source vertex.
      const std::vector<int> corr = nearest_correspondence(rs, source);
      std::vector<Matrix> truth;
      std::vector<Matrix> pred;
      for (int t = 1; t < it.prep.frames.frame_count(); ++t) {
        const Matrix& gt = it.prep.frames.frames[t].vertices;
        Matrix frame(rs.vertex_count(), 3);
        for (int v = 0; v < rs.vertex_count(); ++v) {
          const int s = corr[v];
          frame.row(v) = rs.vertices.row(v) +
                         (gt.row(s) - source.vertices.row(s));
        }
        truth.push_back(std::move(frame));
        pred.push_back(roll.positions[t]);
      }
      mse_acc += mse_loss(pred, truth) / items.size();
      cosim_acc += normal_loss(pred, truth, rs.faces) / items.size();
    }
    RobustnessRow row;
    row.variant = variant;
    row.mse = mse_acc;
    row.cosim = cosim_acc;
    if (variant == RemeshVariant::kOriginal) {
      mse_orig = mse_acc;
      cosim_orig = cosim_acc;
      row.mse_deviation = 0.0;
      row.cosim_deviation = 0.0;
    } else {
      row.mse_deviation = relative_deviation(mse_orig, mse_acc);
      row.cosim_deviation = relative_deviation(cosim_orig, cosim_acc);
    }
    rows.push_back(row);
  }
  return rows;
}

void save_robustness_csv(const std::vector<RobustnessRow>& rows,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "variant,mse,cosim,mse_deviation,cosim_deviation\n";
  for (const auto& r : rows)
    out << remesh_variant_name(r.variant) << "," << r.mse << "," << r.cosim
        << "," << r.mse_deviation << "," << r.cosim_deviation << "\n";
}

// ---------------------------------------------------------------------------
// Motion transfer
// ---------------------------------------------------------------------------

void transfer(const Checkpoint& ckpt, const std::string& source_mesh_path,
              const std::string& target_sequence_dir, const std::string& out_dir) {
  const TriMesh raw_source = load_mesh(source_mesh_path);
  auto [source, transform] = normalize(raw_source);

  std::vector<std::string> frame_files;
  if (fs::is_directory(target_sequence_dir)) {
    for (const auto& e : fs::directory_iterator(target_sequence_dir)) {
      const std::string ext = e.path().extension().string();
      if (ext == ".obj" || ext == ".ply") frame_files.push_back(e.path().string());
    }
    std::sort(frame_files.begin(), frame_files.end());
  }
  if (frame_files.empty())
    throw ValidationError("transfer: no mesh frames found in " +
                          target_sequence_dir);
  if (frame_files.size() < 2)
    throw ValidationError(
        "transfer: need at least 2 frames (frame 0 is the reference pose)");

  MotionSequence target;
  target.name = target_sequence_dir;
  for (const auto& f : frame_files) target.frames.push_back(load_mesh(f));
  // Normalize the target motion by its own first frame.
  const auto [t0, ttrans] = normalize(target.frames[0]);
  (void)t0;
  for (auto& f : target.frames) f.vertices = ttrans.apply(f.vertices);

  std::shared_ptr<const SpectralOps> ops;
  try {
    SpectralCache cache(4);
    ops = cache.get_or_build(source, ckpt.config.eigenpairs);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) +
                          " (motion transfer needs a single connected source "
                          "mesh; remove floating components and retry)");
  }
  const FeatureField features = extract_features(source, *ops, ckpt.extractor);
  MotionSequence targets;
  targets.frames.assign(target.frames.begin() + 1, target.frames.end());
  const MotionCode code = embed_motion(
      targets, ckpt.embedder, ckpt.config.samples_per_frame, 424242);
  const DeformationRollout roll = rollout(source, features, code, ckpt.generator);

  fs::create_directories(out_dir);
  for (size_t t = 0; t < roll.positions.size(); ++t) {
    TriMesh frame = source;
    frame.vertices = transform.invert(roll.positions[t]);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.obj", t);
    save_mesh(frame, (fs::path(out_dir) / name).string());
  }
  json manifest;
  manifest["frame_count"] = roll.positions.size();
  manifest["source_file"] = source_mesh_path;
  manifest["checkpoint_id"] = hash_hex(nn::tensors_hash(ckpt.tensors()));
  manifest["normalization"] = {
      {"translation",
       {transform.translation.x(), transform.translation.y(),
        transform.translation.z()}},
      {"scale", transform.scale}};
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Bench
// ---------------------------------------------------------------------------

std::vector<BenchRow> bench_inference(const Checkpoint& ckpt,
                                      const std::vector<int>& resolutions,
                                      int frames) {
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  std::vector<BenchRow> rows;
  for (int res : resolutions) {
    BenchRow row;
    row.resolution = res;
    row.frames = frames;
    auto [mesh, transform] = normalize(make_uv_sphere(res));
    (void)transform;

    auto t0 = clock::now();
    const SpectralOps ops = build_operators(mesh, ckpt.config.eigenpairs);
    auto t1 = clock::now();
    row.operator_build_s = seconds(t0, t1);
    const FeatureField features = extract_features(mesh, ops, ckpt.extractor);
    auto t2 = clock::now();
    row.feature_s = seconds(t1, t2);

    Rng rng(99);
    std::normal_distribution<double> gauss(0.0, 0.5);
    MotionCode code;
    code.values.resize(frames, ckpt.config.embedder.code_dim);
    for (Eigen::Index i = 0; i < code.values.size(); ++i)
      *(code.values.data() + i) = gauss(rng);

    rollout(mesh, features, code, ckpt.generator);  // warm-up
    double acc = 0.0;
    for (int run = 0; run < 3; ++run) {
      auto a = clock::now();
      rollout(mesh, features, code, ckpt.generator);
      acc += seconds(a, clock::now());
    }
    row.rollout_s = acc / 3.0;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Export helpers
// ---------------------------------------------------------------------------

void write_motion_code_csv(const MotionCode& code, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  for (int t = 0; t < code.length(); ++t) {
    for (int c = 0; c < code.dim(); ++c)
      out << code.values(t, c) << (c + 1 == code.dim() ? "" : ",");
    out << "\n";
  }
}

void write_mds_csv(const std::vector<Matrix>& polylines, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "motion,frame,x,y\n";
  out.precision(17);
  for (size_t m = 0; m < polylines.size(); ++m)
    for (Eigen::Index t = 0; t < polylines[m].rows(); ++t)
      out << m << "," << t << "," << polylines[m](t, 0) << ","
          << polylines[m](t, 1) << "\n";
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
  json j;
  j["mse"] = report.mse;
  j["cosim"] = report.cosim;
  j["static_baseline_mse"] = report.static_baseline_mse;
  if (report.chamfer) j["chamfer"] = *report.chamfer;
  json per = json::array();
  for (const auto& m : report.per_sequence)
    per.push_back(json{{"name", m.name},
                       {"mse", m.mse},
                       {"cosim", m.cosim},
                       {"chamfer", m.chamfer},
                       {"static_baseline_mse", m.static_baseline_mse}});
  j["per_sequence"] = per;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace meshmotion
