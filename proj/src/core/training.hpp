#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"

namespace pskn {

// Optimizer and loop settings; the defaults are the reference recipe.
struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool cosine_decay = true;         // anneal the rate across epochs
  double min_learning_rate = 1e-5;  // cosine floor
  std::size_t n_points = 1024;
  AugmentConfig augment;            // applied to the train split only
  std::string cache_dir;

  void validate() const;  // ConfigError on any bad field
};

// Learning rate for one epoch: half-cosine from learning_rate down to the
// floor, hitting it exactly at the last epoch; constant when decay is off.
double learning_rate_at(const TrainConfig& cfg, std::size_t epoch);

// Adam moment buffers, one pair per parameter tensor, plus the shared step
// counter that drives bias correction.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

AdamState make_adam_state(const Parameters& params);

// One bias-corrected Adam update from the gradients currently stored on the
// parameter tensors; a missing gradient buffer counts as zero. Throws
// ShapeError when the state does not line up with the parameters.
void adam_step(Parameters& params, AdamState& state, const TrainConfig& cfg,
               double learning_rate);

struct EvalResult {
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Overall accuracy is diagonal mass over total; mean class accuracy averages
// per-class recall over the classes that actually appear.
EvalResult metrics_from_confusion(
    std::vector<std::vector<std::size_t>> confusion);

// Square table with a class-name header row and column; names beyond the
// given list fall back to classN.
std::string confusion_csv(const EvalResult& result,
                          const std::vector<std::string>& classes);

struct EvalOptions {
  std::size_t batch_size = 32;
  std::size_t n_points = 1024;
  std::uint64_t seed = 0;
  std::string cache_dir;
};

// Eval-mode pass over one split, never augmented. The confusion matrix is
// n_classes square even when the split misses some classes.
EvalResult evaluate(const DatasetIndex& index, Split split,
                    const ModelConfig& mcfg, Parameters& params,
                    const EvalOptions& opts);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_oa = 0.0;
  double eval_oa = 0.0;
  double eval_macc = 0.0;
};

std::string train_log_csv(const std::vector<EpochLog>& log);

struct TrainResult {
  Parameters params;       // after the last epoch
  Parameters best_params;  // highest eval overall accuracy
  EvalResult best_eval;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

// Full loop: per epoch a seeded shuffle, augmentation, forward, cross
// entropy, backward, Adam; then an eval pass on the test split (the train
// split when no test entries exist) that decides the best parameters.
// Bit-identical for identical inputs and seed. A non-empty out_dir receives
// train_log.csv plus best.ckpt and last.ckpt; progress, when set, gets one
// line per epoch.
TrainResult train(const DatasetIndex& index, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::string& out_dir = "",
                  std::ostream* progress = nullptr);

// Deep copy: fresh storage for every tensor and stat buffer.
Parameters clone_parameters(const Parameters& params);

// Checkpoint container: PSKN magic, a version word, the serialized model
// config, then named tensors and running stats as little-endian 64-bit
// floats. Corrupt or short files raise CheckpointError.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const Parameters& params);

struct Checkpoint {
  ModelConfig config;
  Parameters params;
};

Checkpoint load_checkpoint(const std::string& path);

struct AblationRow {
  std::string label;
  EvalResult eval;
};

// Trains one model per variant on identical seeds and splits and reports
// each best checkpoint's eval metrics. kind selects the sweep:
// "augmentation" runs rows none, all, anisotropic_scaling, jitter, rotation,
// translation; "skip_mode" runs concatenation and addition.
std::vector<AblationRow> run_ablation(const std::string& kind,
                                      const DatasetIndex& index,
                                      const ModelConfig& mcfg,
                                      const TrainConfig& tcfg,
                                      const std::string& out_dir = "",
                                      std::ostream* progress = nullptr);

// mode,oa,macc rows, accuracies in percent.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace pskn
