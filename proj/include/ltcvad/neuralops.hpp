#pragma once

// Dense-layer primitives, AdamW, the warmup+cosine schedule and a
// central-difference gradient checker. All training math is float64.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace ltcvad {

using Vec = std::vector<double>;
using ParamSpans = std::vector<std::span<double>>;
using ConstParamSpans = std::vector<std::span<const double>>;

/// Fully-connected layer y = W x + b with W stored row-major (out x in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vec weights;
  Vec bias;

  DenseLayer() = default;
  /// Zero-initialized layer.
  DenseLayer(std::size_t in_dim, std::size_t out_dim);

  double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }

  ParamSpans parameters();
  ConstParamSpans parameters() const;

  /// Throws ShapeError on inconsistent shapes, Error on non-finite entries.
  void validate() const;

  bool operator==(const DenseLayer&) const = default;
};

/// Uniform in [-a, a], a = sqrt(6 / (in + out)); bias zero.
DenseLayer glorot_uniform(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng);

Vec dense_forward(const DenseLayer& layer, std::span<const double> x);

struct DenseGradients {
  DenseLayer grad;  // same shape as the layer, holds dL/dW and dL/db
  Vec grad_x;
};

DenseGradients dense_backward(const DenseLayer& layer, std::span<const double> x,
                              std::span<const double> upstream);

/// Accumulating variant used by the trainers: grad += dL/d(W,b), and
/// grad_x (if non-null) receives dL/dx (overwritten).
void dense_backward_into(const DenseLayer& layer, std::span<const double> x,
                         std::span<const double> upstream, DenseLayer& grad, Vec* grad_x);

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

/// Numerically stable logistic function.
double logistic(double z);

/// Abnormal-class probability from (normal, abnormal) logits.
double softmax_binary(double logit_normal, double logit_abnormal);

/// Softmax over an arbitrary logit vector (max-subtracted).
Vec softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Decoupled-weight-decay Adam. Moments are created lazily on the first step
/// and must keep the same shapes afterwards.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(const ParamSpans& params, const ConstParamSpans& grads, double lr);

  std::uint64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<Vec> first_moment_;
  std::vector<Vec> second_moment_;
  std::uint64_t step_ = 0;
};

struct LrSchedule {
  int warmup_epochs = 5;
  int total_epochs = 30;
  double lr_max = 1e-5;
  double lr_min = 0.0;

  void validate() const;
};

/// Linear warmup 0 -> lr_max, then cosine lr_max -> lr_min. `epoch` may be
/// fractional; trainers pass epoch + fraction-of-epoch-completed.
double schedule_lr(const LrSchedule& sched, double epoch);

/// Max over coordinates of |analytic - numeric| / max(1, |numeric|), numeric
/// by central differences. `params` are perturbed in place and restored.
double grad_check(const std::function<double()>& fn, const ParamSpans& params,
                  const ConstParamSpans& analytic, double h = 1e-5);

// ---------------------------------------------------------------------------
// Seed derivation. Every random stream in the project is derived from a base
// seed plus a tag, so independent consumers never share generator state.

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t i);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t i,
                          std::uint64_t j);

/// Uniform double in [0, 1) from 53 random bits; independent of the standard
/// library's distribution implementations.
double uniform01(std::mt19937_64& rng);
double uniform(std::mt19937_64& rng, double lo, double hi);
/// Standard normal via Box-Muller.
double standard_normal(std::mt19937_64& rng);
/// Uniform integer in [0, n).
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);
/// Fisher-Yates shuffle using uniform_index.
template <typename T>
void shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

double dot(std::span<const double> a, std::span<const double> b);
Vec widen(std::span<const float> values);

}  // namespace ltcvad
