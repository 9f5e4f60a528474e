#include "ltcvad/neuralops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ltcvad/error.hpp"

namespace ltcvad {

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim)
    : in(in_dim), out(out_dim), weights(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

ParamSpans DenseLayer::parameters() { return {std::span<double>(weights), std::span<double>(bias)}; }

ConstParamSpans DenseLayer::parameters() const {
  return {std::span<const double>(weights), std::span<const double>(bias)};
}

void DenseLayer::validate() const {
  if (weights.size() != in * out || bias.size() != out) {
    throw ShapeError("dense layer shape mismatch");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(weights.begin(), weights.end(), finite) ||
      !std::all_of(bias.begin(), bias.end(), finite)) {
    throw Error("non-finite parameter");
  }
}

DenseLayer glorot_uniform(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng) {
  DenseLayer layer(in_dim, out_dim);
  const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  for (double& v : layer.weights) v = uniform(rng, -a, a);
  return layer;
}

Vec dense_forward(const DenseLayer& layer, std::span<const double> x) {
  if (x.size() != layer.in) throw ShapeError("shape mismatch: dense input");
  Vec y(layer.bias);
  for (std::size_t r = 0; r < layer.out; ++r) {
    const double* row = layer.weights.data() + r * layer.in;
    double acc = 0.0;
    for (std::size_t c = 0; c < layer.in; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
  return y;
}

void dense_backward_into(const DenseLayer& layer, std::span<const double> x,
                         std::span<const double> upstream, DenseLayer& grad, Vec* grad_x) {
  if (x.size() != layer.in || upstream.size() != layer.out) {
    throw ShapeError("shape mismatch: dense backward");
  }
  if (grad.in != layer.in || grad.out != layer.out) {
    throw ShapeError("shape mismatch: gradient buffer");
  }
  for (std::size_t r = 0; r < layer.out; ++r) {
    const double g = upstream[r];
    grad.bias[r] += g;
    if (g == 0.0) continue;
    double* grow = grad.weights.data() + r * layer.in;
    for (std::size_t c = 0; c < layer.in; ++c) grow[c] += g * x[c];
  }
  if (grad_x != nullptr) {
    grad_x->assign(layer.in, 0.0);
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double g = upstream[r];
      if (g == 0.0) continue;
      const double* row = layer.weights.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) (*grad_x)[c] += g * row[c];
    }
  }
}

DenseGradients dense_backward(const DenseLayer& layer, std::span<const double> x,
                              std::span<const double> upstream) {
  DenseGradients out{DenseLayer(layer.in, layer.out), {}};
  dense_backward_into(layer, x, upstream, out.grad, &out.grad_x);
  return out;
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softmax_binary(double logit_normal, double logit_abnormal) {
  if (!std::isfinite(logit_normal) || !std::isfinite(logit_abnormal)) {
    throw Error("non-finite logits");
  }
  const double m = std::max(logit_normal, logit_abnormal);
  const double en = std::exp(logit_normal - m);
  const double ea = std::exp(logit_abnormal - m);
  return ea / (en + ea);
}

Vec softmax(std::span<const double> logits) {
  Vec p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

// ---------------------------------------------------------------------------

void AdamW::step(const ParamSpans& params, const ConstParamSpans& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("shape mismatch: adamw tensors");
  if (lr < 0.0) throw Error("negative learning rate");
  if (first_moment_.empty()) {
    for (const auto& p : params) {
      first_moment_.emplace_back(p.size(), 0.0);
      second_moment_.emplace_back(p.size(), 0.0);
    }
  }
  if (first_moment_.size() != params.size()) throw ShapeError("shape mismatch: adamw state");

  ++step_;
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    Vec& m = first_moment_[k];
    Vec& v = second_moment_[k];
    if (p.size() != g.size() || p.size() != m.size()) {
      throw ShapeError("shape mismatch: adamw tensor");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      const double adaptive = m_hat / (std::sqrt(v_hat) + config_.epsilon);
      p[i] -= lr * (adaptive + config_.weight_decay * p[i]);
    }
  }
}

void LrSchedule::validate() const {
  if (warmup_epochs < 1 || total_epochs < 1) throw ConfigError("schedule epochs must be positive");
  if (warmup_epochs > total_epochs) throw ConfigError("warmup_epochs exceeds total_epochs");
  if (!(lr_max > 0.0) || lr_min < 0.0) throw ConfigError("invalid learning-rate bounds");
}

double schedule_lr(const LrSchedule& sched, double epoch) {
  sched.validate();
  const double warmup = sched.warmup_epochs;
  const double total = sched.total_epochs;
  if (!(epoch >= 0.0) || epoch > total) throw Error("epoch out of range");
  if (epoch <= warmup) return sched.lr_max * (epoch / warmup);
  const double progress = (epoch - warmup) / (total - warmup);
  return sched.lr_min +
         0.5 * (sched.lr_max - sched.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

double grad_check(const std::function<double()>& fn, const ParamSpans& params,
                  const ConstParamSpans& analytic, double h) {
  if (params.size() != analytic.size()) throw ShapeError("shape mismatch: grad_check");
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto a = analytic[k];
    if (p.size() != a.size()) throw ShapeError("shape mismatch: grad_check tensor");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double plus = fn();
      p[i] = saved - h;
      const double minus = fn();
      p[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw Error("non-finite evaluation in grad_check");
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = std::abs(a[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(base, h);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t i) {
  return mix_seed(derive_seed(base, tag), i);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t i,
                          std::uint64_t j) {
  return mix_seed(derive_seed(base, tag, i), j);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw Error("uniform_index over empty range");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r = rng();
  while (r >= limit) r = rng();
  return static_cast<std::size_t>(r % bound);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("shape mismatch: dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vec widen(std::span<const float> values) { return Vec(values.begin(), values.end()); }

}  // namespace ltcvad
