#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ppsvae/data.hpp"
#include "ppsvae/objective.hpp"

namespace ppsvae {

struct TrainConfig {
  Posterior variant = Posterior::Independent;
  int M = 8;
  int latent_dim = 16;
  double learning_rate = 2e-4;
  bool amsgrad = true;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// When > 0, gradients are rescaled so their global L2 norm is at most this.
  double grad_clip_norm = 0.0;
  int epochs = 1;
  /// When > 0, training stops after this many steps regardless of epochs.
  int max_steps = 0;
  int batch_size = 64;
  double tau_start = 1.0;
  double tau_end = 0.5;
  std::uint64_t seed = 0;
  std::string dataset = "synth_shapes";
  std::string data_root;
  int checkpoint_every = 0;
  int log_every = 10;

  // synthetic data
  int synth_n = 4096;
  int synth_height = 16;
  int synth_width = 16;
  int synth_classes = 3;

  // network shape
  int net_width = 32;
  int blocks = 3;
  int kernel_size = 7;
  int expansion = 2;
  bool normalize = true;
  Padding padding = Padding::Zero;

  void validate() const;
  /// Canonical `key = value` text; parse_train_config(to_text()) round-trips.
  std::string to_text() const;
  ModelConfig model_config(int channels, int height, int width) const;
  SamplingOptions sampling(double tau) const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys and
/// malformed values raise UsageError naming the key.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

/// tau at a step of a run with total_steps steps, linear from start to end.
double tau_at(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

/// Training data named by the config (synthetic or loaded from data_root).
Dataset training_dataset(const TrainConfig& config);
/// The named split of the config's dataset. Synthetic test images come from
/// a seed stream disjoint from the training one; n > 0 truncates or sizes it.
Dataset dataset_split(const TrainConfig& config, const std::string& split, int n = 0);

struct AdamState {
  std::int64_t t = 0;
  std::vector<Tensor> m, v, v_max;
};

/// AdamW (decoupled weight decay) with optional AMSGrad.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay, bool amsgrad);
  void step(ParamSet& params);
  const AdamState& state() const { return state_; }
  void set_state(AdamState s) { state_ = std::move(s); }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  bool amsgrad_;
  AdamState state_;
};

double grad_norm(const ParamSet& params);
void scale_grads(ParamSet& params, double factor);

struct Checkpoint {
  static constexpr char kMagic[9] = "PPSVAECK";
  static constexpr std::uint32_t kVersion = 1;

  std::string kind = "ppsvae";  // or "vae"
  std::string config_text;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> arrays;
  AdamState optimizer;

  /// Data shape the model was built for.
  int channels = 1, height = 16, width = 16;

  void capture(const ParamSet& params);
  /// Copies arrays into params; names and shapes must match exactly.
  void restore(ParamSet& params) const;
};

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "checkpoint");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model described by a PPS-VAE checkpoint.
ModelParams model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* config_out = nullptr);

struct MetricsRow {
  std::int64_t step = 0;
  ElboBreakdown mean;  // batch means
  double grad_norm = 0.0;
  double tau = 0.0;
  double seconds = 0.0;
};

std::string metrics_json(const MetricsRow& row);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty -> nothing written
  /// Stops after this step even if the config runs longer (resume tests).
  std::int64_t stop_after = -1;
  std::function<void(const MetricsRow&)> on_log;
};

struct TrainResult {
  Checkpoint final;
  std::vector<MetricsRow> metrics;
  std::int64_t total_steps = 0;
};

std::int64_t total_steps(const TrainConfig& config, int dataset_size);

/// Trains PPS-VAE on ds. Starts from `resume` when given.
TrainResult train(const TrainConfig& config, const Dataset& ds, const TrainOptions& options = {},
                  const Checkpoint* resume = nullptr);

/// Window means of a sequence (the trailing partial window is dropped).
std::vector<double> window_means(const std::vector<double>& values, std::size_t window);

}  // namespace ppsvae
