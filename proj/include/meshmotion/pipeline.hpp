// End-to-end training, evaluation, robustness protocol, motion transfer and
// inference benchmarking.
#pragma once

#include "meshmotion/embedding.hpp"
#include "meshmotion/extractor.hpp"
#include "meshmotion/generator.hpp"
#include "meshmotion/losses.hpp"
#include "meshmotion/remesh.hpp"
#include "meshmotion/synthetic.hpp"

#include <functional>
#include <optional>
#include <string>

namespace meshmotion {

enum class TrainMode { kRegistered, kUnregistered };

struct TrainConfig {
  int epochs = 200;               // 500 at full scale, 200 desk default
  double learning_rate = 1e-3;
  int lr_step = 5;                // epochs per decay step
  double lr_decay = 0.99;
  LossWeights weights;
  TrainMode mode = TrainMode::kRegistered;
  int batch = 1;                  // sequences per gradient step
  double clip_norm = 1.0;
  int checkpoint_every = 50;      // epochs; 0 disables periodic saves
  std::uint64_t seed = 1;
  int eigenpairs = 64;            // k
  int samples_per_frame = 1024;
  bool teacher_forcing = false;   // default off: free rollout
  int threads = 0;                // 0 = hardware default
  bool verbose = true;

  ExtractorConfig extractor;
  EmbedderConfig embedder;
  GeneratorConfig generator;
};

TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& config, const std::string& path);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossComponents loss;  // mse/normal/aiap are zero in unregistered mode
  double chamfer = 0.0;
};

struct Checkpoint {
  int format_version = 1;
  TrainConfig config;
  int epoch = 0;
  ExtractorParams extractor;
  EmbedderParams embedder;
  GeneratorParams generator;
  std::vector<EpochLog> history;
  std::uint64_t param_hash = 0;

  void init_params();
  std::vector<nn::Tensor*> tensors();
  std::vector<const nn::Tensor*> tensors() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Trains on the manifest's train split. On divergence the last finite-loss
// checkpoint is written to `out_path` (when given) before the error is thrown.
Checkpoint train(const TrainConfig& config, const DatasetManifest& manifest,
                 const std::string& out_path = "",
                 const std::function<void(const EpochLog&)>& on_epoch = {});

MetricsReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                       const std::string& split);

struct RobustnessRow {
  RemeshVariant variant;
  double mse = 0.0;
  double cosim = 0.0;
  double mse_deviation = 0.0;    // Delta_rel vs ORIGINAL
  double cosim_deviation = 0.0;
};

std::vector<RobustnessRow> robustness_eval(const Checkpoint& ckpt,
                                           const DatasetManifest& manifest,
                                           const std::vector<RemeshVariant>& variants);
void save_robustness_csv(const std::vector<RobustnessRow>& rows,
                         const std::string& path);

// Normalize source, embed the target motion (frames after the first), roll
// out, denormalize and write frame_%04d.obj + manifest.json into out_dir.
void transfer(const Checkpoint& ckpt, const std::string& source_mesh_path,
              const std::string& target_sequence_dir, const std::string& out_dir);

struct BenchRow {
  int resolution = 0;
  int frames = 0;
  double operator_build_s = 0.0;
  double feature_s = 0.0;
  double rollout_s = 0.0;  // mean of 3 runs
};

std::vector<BenchRow> bench_inference(const Checkpoint& ckpt,
                                      const std::vector<int>& resolutions,
                                      int frames);

// Shared helpers (also used by tests and the CLI).
struct PreparedSequence {
  MotionSequence frames;        // normalized by the frame-0 transform
  NormalizeTransform transform;
  std::string name;
  bool registered = false;
};
PreparedSequence prepare_sequence(MotionSequence sequence);

void write_motion_code_csv(const MotionCode& code, const std::string& path);
void write_mds_csv(const std::vector<Matrix>& polylines, const std::string& path);
void save_metrics_json(const MetricsReport& report, const std::string& path);

}  // namespace meshmotion
