#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blnet/engine.hpp"
#include "blnet/graph.hpp"
#include "blnet/tensor.hpp"

namespace blnet {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double base_lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  Precision precision = Precision::F32;
  // Written after the last epoch when non-empty.
  std::string checkpoint_path;

  // Throws InvalidArgument.
  void check() const;
  // Applies one "key=value" assignment. Throws InvalidArgument for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
};

// Key-value text: one "key = value" per line, '#' starts a comment.
TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);

// 0.5 * base_lr * (1 + cos(pi * epoch / total_epochs)).
double cosine_lr(int epoch, int total_epochs, double base_lr);

template <typename T>
struct SgdState {
  ParamStore<T> velocity;
};

// Nesterov: v <- mu v + (g + wd w); w <- w - lr (g + wd w + mu v).
// Plain momentum: v <- mu v + (g + wd w); w <- w - lr v.
// Running statistics are left untouched.
template <typename T>
void sgd_step(ParamStore<T>& params, const ParamStore<T>& grads, SgdState<T>& state, double lr, double momentum,
              double weight_decay, bool nesterov);

bool is_trainable_weight(std::string_view name);

struct SyntheticDataset {
  int classes = 0;
  TensorShape sample;  // batch extent is 1
  std::vector<double> values;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  template <typename T>
  Tensor<T> batch(std::span<const std::size_t> indices) const;
};

// Balanced, deterministic per seed. Each class has its own colored blob
// position and oriented stripe texture; samples add jitter and noise.
SyntheticDataset make_synthetic_dataset(int classes, int samples_per_class, int64_t image_size, uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  // Eval-mode accuracy over the full training set after the epoch.
  double train_accuracy = 0.0;
  // Accuracy of the train-mode predictions seen during the epoch.
  double online_accuracy = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::string checkpoint;

  std::string to_csv() const;
  bool operator==(const TrainHistory&) const = default;
};

// Mini-batch SGD with the cosine schedule. Throws DivergenceDetected on a
// non-finite loss.
template <typename T>
TrainHistory train(const Graph& graph, const TrainConfig& config, const SyntheticDataset& data,
                   ParamStore<T>* final_params = nullptr);
// Dispatches on config.precision.
TrainHistory train(const Graph& graph, const TrainConfig& config, const SyntheticDataset& data);

template <typename T>
double accuracy(const Engine<T>& engine, const ParamStore<T>& params, const SyntheticDataset& data,
                std::size_t batch_size = 64);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Coordinates whose +-eps perturbation flipped a ReLU input sign; excluded
  // because the objective is not differentiable across that interval.
  std::size_t skipped_kinks = 0;
  std::string worst;  // "node/weight[index]" or "input[index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
  std::string summary() const;
};

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t coordinates = 256;
  uint64_t seed = 7;
  Mode mode = Mode::Train;
  bool include_input = true;
};

// Central differences of a random linear projection of the graph output on a
// random subset of trainable weights and input values. Relative error is
// |a - n| / max(|a|, |n|, 1e-7).
GradCheckReport gradient_check(const Graph& graph, const TensorShape& input_shape, Precision precision,
                               const GradCheckOptions& options = {});

}  // namespace blnet
