// Copyright 2026 The mformer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Toy-scale training, evaluation, attention export and whole-model gradient
// checks.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mformer/model.hpp"

namespace mformer {

/// Class prototypes plus Gaussian noise. Sample i has label i % classes.
template <typename T = float>
struct SyntheticDataset {
  std::size_t classes = 0;
  std::size_t resolution = 0;
  std::vector<Tensor<T>> prototypes;  // [3, res, res] each
  Tensor<T> images;                   // [N, 3, res, res]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  /// Images and labels of the given sample indices.
  std::pair<Tensor<T>, std::vector<int>> batch(std::span<const std::size_t> indices) const;
};

/// Throws ArgumentError when classes < 2, n_per_class == 0 or res == 0.
template <typename T = float>
SyntheticDataset<T> make_synthetic(std::size_t classes, std::size_t n_per_class, std::size_t res,
                                   double noise_sigma, std::uint64_t seed);

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Steps of the cosine schedule; the rate stays at its floor (zero) after.
  std::size_t horizon = 1000;
};

/// Optimizer hyper-parameters of the published variants (lr, weight decay,
/// dropout before the last FC). Not used as toy defaults.
struct TrainPreset {
  double lr;
  double weight_decay;
  double dropout;
};
std::optional<TrainPreset> published_preset(std::string_view variant);

/// Cosine-decayed rate: base at step 0, zero at `horizon` and beyond.
double cosine_lr(double base, std::size_t step, std::size_t horizon);

/// Decoupled-weight-decay Adam state over one model's parameters.
template <typename T>
class AdamW {
 public:
  AdamW(Model<T>& model, AdamWConfig config);

  /// Applies one update from the gradients accumulated in each parameter.
  void step();
  double current_lr() const { return cosine_lr(config_.lr, step_, config_.horizon); }
  std::size_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }

 private:
  Model<T>& model_;
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

/// Cross-entropy forward, backward and one optimizer update. Returns the loss
/// before the update. Throws DivergenceError on a non-finite loss, leaving the
/// parameters untouched.
template <typename T>
double train_step(Model<T>& model, AdamW<T>& opt, const Tensor<T>& images,
                  std::span<const int> labels, std::mt19937_64& rng);

/// Argmax accuracy in eval mode. Throws ArgumentError on an empty dataset.
template <typename T>
double evaluate(Model<T>& model, const SyntheticDataset<T>& data, std::size_t batch = 64);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  AdamWConfig optim{.lr = 2e-3, .weight_decay = 0.01, .horizon = 2000};
  std::uint64_t seed = 0;
  /// Accuracy over the training set is added to the log every this many
  /// steps and at the last step; zero disables it.
  std::size_t eval_every = 0;
};

struct MetricsRecord {
  std::size_t step;
  double lr;
  double loss;
  std::optional<double> accuracy;
};

/// `step,lr,loss[,acc]`
std::string format_metrics(const MetricsRecord& r);
inline constexpr std::string_view kMetricsHeader = "step,lr,loss,acc";

/// Runs `config.steps` updates on shuffled mini-batches. `log` receives one
/// record per step.
template <typename T>
std::vector<MetricsRecord> train(Model<T>& model, const SyntheticDataset<T>& data,
                                 const TrainConfig& config,
                                 const std::function<void(const MetricsRecord&)>& log = {});

/// Mean of `values[begin, end)`.
double window_mean(const std::vector<double>& values, std::size_t begin, std::size_t end);

enum class Direction { kToFormer, kToMobile };
std::string_view direction_name(Direction d);

struct AttentionRow {
  std::size_t block;
  Direction direction;
  std::size_t head;
  std::size_t token;
  std::size_t y;
  std::size_t x;
  double weight;
};

/// Every attention weight of every bridged block for one image [1, 3, H, W],
/// in eval mode. Blocks keep their spec index.
template <typename T>
std::vector<AttentionRow> export_attention(Model<T>& model, const Tensor<T>& image);

inline constexpr std::string_view kAttentionHeader = "block,direction,head,token,y,x,weight";
void write_attention_csv(std::ostream& out, const std::vector<AttentionRow>& rows);

/// Largest deviation from one of any normalized row, per direction.
struct RowSumError {
  double to_former = 0;
  double to_mobile = 0;
  std::size_t rows = 0;
};
RowSumError attention_row_error(const std::vector<AttentionRow>& rows);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  /// Entries sampled per parameter tensor (all when the tensor is smaller).
  std::size_t samples = 24;
  double eps = 1e-5;
  /// Gradients below this magnitude are compared in absolute terms.
  double floor = 1e-5;
  double param_scale = 0.5;
  /// Relative gap between one-sided slopes taken as a branch switch.
  double kink_tolerance = 1e-2;
  /// Retries at shifted points (shift = nudge * eps * attempt) before an
  /// entry is scored as is.
  std::size_t max_nudges = 4;
  double nudge = 10.0;
  /// Inputs are redrawn (up to max_draws times) until no activation input
  /// lies closer than this to a branch switch.
  double min_margin = 1e-4;
  std::size_t max_draws = 50;
};

struct GradcheckGroup {
  std::string name;
  std::size_t checked = 0;
  /// Entries re-checked at a shifted point after a branch switch.
  std::size_t nudged = 0;
  double max_error = 0;
};

struct GradcheckResult {
  std::vector<GradcheckGroup> groups;
  double max_error = 0;
  std::string worst;
  /// Distance of the closest activation input to a branch switch.
  double kink_margin = 0;
  std::size_t draws = 0;
};

/// Compares backward() against central differences for the mean-logit loss of
/// a 64-bit model with randomized parameters (train-mode normalization).
GradcheckResult gradcheck_model(const ModelSpec& spec, const GradcheckOptions& options = {});

extern template struct SyntheticDataset<float>;
extern template class AdamW<float>;

}  // namespace mformer
