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

#include "mformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <map>
#include <ostream>
#include <tuple>

#include <fmt/format.h>

#include "mformer/gradcheck.hpp"

namespace mformer {

template <typename T>
std::pair<Tensor<T>, std::vector<int>> SyntheticDataset<T>::batch(
    std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ArgumentError("batch: no indices");
  const std::size_t per = 3 * resolution * resolution;
  Tensor<T> out({indices.size(), 3, resolution, resolution});
  std::vector<int> labs;
  labs.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ArgumentError("batch: index out of range");
    std::copy_n(images.ptr() + indices[i] * per, per, out.ptr() + i * per);
    labs.push_back(labels[indices[i]]);
  }
  return {std::move(out), std::move(labs)};
}

template <typename T>
SyntheticDataset<T> make_synthetic(std::size_t classes, std::size_t n_per_class, std::size_t res,
                                   double noise_sigma, std::uint64_t seed) {
  if (classes < 2) throw ArgumentError("make_synthetic: need at least two classes");
  if (n_per_class == 0 || res == 0) throw ArgumentError("make_synthetic: empty dataset");
  if (!(noise_sigma >= 0)) throw ArgumentError("make_synthetic: noise sigma must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  SyntheticDataset<T> d;
  d.classes = classes;
  d.resolution = res;
  const std::size_t per = 3 * res * res;
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor<T> p({3, res, res});
    for (T& v : p.data()) v = static_cast<T>(normal(rng));
    d.prototypes.push_back(std::move(p));
  }
  const std::size_t n = classes * n_per_class;
  d.images = Tensor<T>({n, 3, res, res});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    d.labels.push_back(static_cast<int>(c));
    T* dst = d.images.ptr() + i * per;
    const T* src = d.prototypes[c].ptr();
    for (std::size_t j = 0; j < per; ++j) dst[j] = src[j] + static_cast<T>(noise_sigma * normal(rng));
  }
  return d;
}

std::optional<TrainPreset> published_preset(std::string_view variant) {
  if (variant == "26M") return TrainPreset{8e-4, 0.08, 0.1};
  if (variant == "52M" || variant == "96M") return TrainPreset{8e-4, 0.10, 0.2};
  if (variant == "151M") return TrainPreset{9e-4, 0.10, 0.2};
  if (variant == "214M") return TrainPreset{9e-4, 0.15, 0.2};
  if (variant == "294M" || variant == "508M") return TrainPreset{1e-3, 0.20, 0.3};
  return std::nullopt;
}

double cosine_lr(double base, std::size_t step, std::size_t horizon) {
  if (horizon == 0 || step >= horizon) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(horizon);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
AdamW<T>::AdamW(Model<T>& model, AdamWConfig config) : model_(model), config_(config) {
  if (config_.lr < 0 || config_.weight_decay < 0 || config_.eps <= 0) {
    throw ArgumentError("AdamW: learning rate and weight decay must be non-negative, eps positive");
  }
  if (config_.beta1 < 0 || config_.beta1 >= 1 || config_.beta2 < 0 || config_.beta2 >= 1) {
    throw ArgumentError("AdamW: betas must lie in [0, 1)");
  }
  for (const auto& p : model_.parameters()) {
    m_.emplace_back(p.value.size(), T(0));
    v_.emplace_back(p.value.size(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  const double lr = current_lr();
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  auto& params = model_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = params[k];
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* m = m_[k].data();
    T* v = v_[k].data();
    const double decay = p.decay ? lr * config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = static_cast<T>(b1 * m[i] + (1 - b1) * g[i]);
      v[i] = static_cast<T>(b2 * v[i] + (1 - b2) * double(g[i]) * g[i]);
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      w[i] = static_cast<T>(w[i] - decay * w[i] - lr * update);
    }
  }
}

template <typename T>
double train_step(Model<T>& model, AdamW<T>& opt, const Tensor<T>& images,
                  std::span<const int> labels, std::mt19937_64& rng) {
  for (auto& p : model.parameters()) p.zero_grad();
  Tape<T> tape;
  nn::Context<T> ctx{tape, Mode::kTrain, &rng};
  Var<T> loss = ops::cross_entropy(model.forward(ctx, tape.constant(images)), labels);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) {
    throw DivergenceError("training loss became " + std::to_string(value) + " at step " +
                          std::to_string(opt.steps_taken()));
  }
  tape.backward(loss);
  opt.step();
  return value;
}

template <typename T>
double evaluate(Model<T>& model, const SyntheticDataset<T>& data, std::size_t batch) {
  if (data.size() == 0) throw ArgumentError("evaluate: empty dataset");
  if (batch == 0) throw ArgumentError("evaluate: batch must be positive");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    idx.resize(std::min(batch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto [images, labels] = data.batch(idx);
    Tape<T> tape({.grad_enabled = false});
    nn::Context<T> ctx{tape, Mode::kEval};
    const Tensor<T> logits = model.forward(ctx, tape.constant(std::move(images))).value();
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = logits.ptr() + r * k;
      const auto best = std::max_element(row, row + k) - row;
      correct += best == labels[r];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string format_metrics(const MetricsRecord& r) {
  std::string out = fmt::format("{},{:.6g},{:.6f}", r.step, r.lr, r.loss);
  if (r.accuracy) out += fmt::format(",{:.4f}", *r.accuracy);
  return out;
}

template <typename T>
std::vector<MetricsRecord> train(Model<T>& model, const SyntheticDataset<T>& data,
                                 const TrainConfig& config,
                                 const std::function<void(const MetricsRecord&)>& log) {
  if (config.batch == 0 || config.batch > data.size()) {
    throw ArgumentError("train: batch must lie in [1, dataset size]");
  }
  AdamW<T> opt(model, config.optim);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<MetricsRecord> history;
  history.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + config.batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    auto [images, labels] = data.batch(std::span(order).subspan(cursor, config.batch));
    cursor += config.batch;
    MetricsRecord rec{step, opt.current_lr(), 0.0, std::nullopt};
    rec.loss = train_step(model, opt, images, labels, rng);
    const bool last = step + 1 == config.steps;
    if (config.eval_every && ((step + 1) % config.eval_every == 0 || last)) {
      rec.accuracy = evaluate(model, data);
    }
    if (log) log(rec);
    history.push_back(rec);
  }
  return history;
}

double window_mean(const std::vector<double>& values, std::size_t begin, std::size_t end) {
  end = std::min(end, values.size());
  if (begin >= end) throw ArgumentError("window_mean: empty window");
  return std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(begin),
                         values.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

std::string_view direction_name(Direction d) {
  return d == Direction::kToFormer ? "mobile_to_former" : "former_to_mobile";
}

template <typename T>
std::vector<AttentionRow> export_attention(Model<T>& model, const Tensor<T>& image) {
  if (image.shape().size() != 4 || image.dim(0) != 1) {
    throw ShapeError("export_attention: expected one image [1, 3, H, W], got " +
                     to_string(image.shape()));
  }
  Tape<T> tape({.grad_enabled = false});
  nn::Context<T> ctx{tape, Mode::kEval};
  ForwardTrace<T> trace;
  trace.record_attention = true;
  model.forward(ctx, tape.constant(image), &trace);
  std::vector<AttentionRow> rows;
  for (const auto& [block, maps] : trace.attention) {
    {
      // [1, H, M, L]
      const auto& rec = maps.to_former;
      const std::size_t heads = rec.weights.dim(1), m = rec.weights.dim(2), l = rec.weights.dim(3);
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t t = 0; t < m; ++t) {
          for (std::size_t p = 0; p < l; ++p) {
            rows.push_back({block, Direction::kToFormer, h, t, p / rec.width, p % rec.width,
                            static_cast<double>(rec.weights[(h * m + t) * l + p])});
          }
        }
      }
    }
    // [1, H, L, M]
    const auto& rec = maps.to_mobile;
    const std::size_t heads = rec.weights.dim(1), l = rec.weights.dim(2), m = rec.weights.dim(3);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t p = 0; p < l; ++p) {
        for (std::size_t t = 0; t < m; ++t) {
          rows.push_back({block, Direction::kToMobile, h, t, p / rec.width, p % rec.width,
                          static_cast<double>(rec.weights[(h * l + p) * m + t])});
        }
      }
    }
  }
  return rows;
}

void write_attention_csv(std::ostream& out, const std::vector<AttentionRow>& rows) {
  out << kAttentionHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{:.9g}\n", r.block, direction_name(r.direction), r.head,
                       r.token, r.y, r.x, r.weight);
  }
}

RowSumError attention_row_error(const std::vector<AttentionRow>& rows) {
  // Rows are keyed by (block, direction, head, token) over pixels for the
  // local-to-global side and by (block, direction, head, pixel) over tokens
  // for the other.
  std::map<std::tuple<std::size_t, int, std::size_t, std::size_t, std::size_t>, double> sums;
  for (const auto& r : rows) {
    if (r.direction == Direction::kToFormer) {
      sums[{r.block, 0, r.head, r.token, 0}] += r.weight;
    } else {
      sums[{r.block, 1, r.head, r.y, r.x}] += r.weight;
    }
  }
  RowSumError e;
  e.rows = sums.size();
  for (const auto& [key, s] : sums) {
    double& slot = std::get<1>(key) == 0 ? e.to_former : e.to_mobile;
    slot = std::max(slot, std::abs(s - 1.0));
  }
  return e;
}

GradcheckResult gradcheck_model(const ModelSpec& spec, const GradcheckOptions& options) {
  Model<double> model(spec, options.seed);
  randomize_parameters(model, options.seed + 1, options.param_scale);
  std::mt19937_64 rng(options.seed + 2);
  std::normal_distribution<double> normal;
  const std::size_t res = spec.input_res();
  Tensor<double> images({options.batch, 3, res, res});
  GradcheckResult result;
  // Redraw the inputs until every activation sits clear of its branch switch.
  do {
    for (double& v : images.data()) v = normal(rng);
    Tape<double> tape({.grad_enabled = false, .track_kinks = true});
    nn::Context<double> ctx{tape, Mode::kTrain};
    model.forward(ctx, tape.constant(images));
    result.kink_margin = tape.kink_margin();
    ++result.draws;
  } while (result.kink_margin < options.min_margin && result.draws < options.max_draws);
  auto loss_value = [&]() {
    Tape<double> tape({.grad_enabled = false});
    nn::Context<double> ctx{tape, Mode::kTrain};
    return ops::mean(model.forward(ctx, tape.constant(images))).value()[0];
  };
  auto backward = [&]() {
    for (auto& p : model.parameters()) p.zero_grad();
    Tape<double> tape;
    nn::Context<double> ctx{tape, Mode::kTrain};
    tape.backward(ops::mean(model.forward(ctx, tape.constant(images))));
  };
  backward();
  const double eps = options.eps;
  const double base = loss_value();
  for (auto& p : model.parameters()) {
    GradcheckGroup g{p.name, 0, 0, 0.0};
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > options.samples) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.samples);
    }
    for (std::size_t i : idx) {
      const double saved = p.value[i];
      double analytic = p.grad[i];
      double mid = base;
      double err = 0;
      for (std::size_t attempt = 0;; ++attempt) {
        const double at = p.value[i];
        p.value[i] = at + eps;
        const double up = loss_value();
        p.value[i] = at - eps;
        const double down = loss_value();
        p.value[i] = at;
        const double right = (up - mid) / eps, left = (mid - down) / eps;
        err = relative_error(analytic, (up - down) / (2 * eps), options.floor);
        // Diverging one-sided slopes mean an activation switched branch
        // inside [at - eps, at + eps]; move the point and check there.
        const bool kink = std::abs(right - left) > options.kink_tolerance *
                                                       std::max({std::abs(right), std::abs(left), options.floor});
        if (!kink || attempt == options.max_nudges) break;
        ++g.nudged;
        p.value[i] = saved + options.nudge * eps * static_cast<double>(attempt + 1) *
                                 (attempt % 2 == 0 ? 1.0 : -1.0);
        backward();
        analytic = p.grad[i];
        mid = loss_value();
      }
      if (p.value[i] != saved) {
        p.value[i] = saved;
        backward();
      }
      g.max_error = std::max(g.max_error, err);
      ++g.checked;
    }
    if (g.max_error >= result.max_error) {
      result.max_error = g.max_error;
      result.worst = g.name;
    }
    result.groups.push_back(std::move(g));
  }
  return result;
}

template struct SyntheticDataset<float>;
template struct SyntheticDataset<double>;
template SyntheticDataset<float> make_synthetic(std::size_t, std::size_t, std::size_t, double, std::uint64_t);
template SyntheticDataset<double> make_synthetic(std::size_t, std::size_t, std::size_t, double, std::uint64_t);
template class AdamW<float>;
template class AdamW<double>;
template double train_step(Model<float>&, AdamW<float>&, const Tensor<float>&, std::span<const int>,
                           std::mt19937_64&);
template double train_step(Model<double>&, AdamW<double>&, const Tensor<double>&,
                           std::span<const int>, std::mt19937_64&);
template double evaluate(Model<float>&, const SyntheticDataset<float>&, std::size_t);
template double evaluate(Model<double>&, const SyntheticDataset<double>&, std::size_t);
template std::vector<MetricsRecord> train(Model<float>&, const SyntheticDataset<float>&, const TrainConfig&,
                                          const std::function<void(const MetricsRecord&)>&);
template std::vector<AttentionRow> export_attention(Model<float>&, const Tensor<float>&);
template std::vector<AttentionRow> export_attention(Model<double>&, const Tensor<double>&);

}  // namespace mformer
