#ifndef IRISLOC_OPTIM_HPP
#define IRISLOC_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/rng.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of a single parameter at timestep t (t >= 1).
/// A missing gradient is treated as zero.
template <typename T>
void adam_step(Tensor<T>& param, AdamMoments<T>& state, std::int64_t t, const AdamConfig& cfg) {
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), T{0});
    state.v.assign(param.size(), T{0});
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw ShapeError("adam_step: state has " + std::to_string(state.m.size()) +
                     " entries, parameter " + describe(param.shape()));
  }
  const auto grad = param.grad();
  if (!grad.empty() && grad.size() != param.size()) {
    throw ShapeError("adam_step: gradient size does not match parameter " + describe(param.shape()));
  }
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T correction2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);
  auto data = param.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const T g = grad.empty() ? T{0} : grad[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    const T m_hat = state.m[i] / correction1;
    const T v_hat = state.v[i] / correction2;
    data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
void sgd_step(Tensor<T>& param, double lr) {
  const auto grad = param.grad();
  if (grad.empty()) return;
  if (grad.size() != param.size()) {
    throw ShapeError("sgd_step: gradient size does not match parameter " + describe(param.shape()));
  }
  const T step = static_cast<T>(lr);
  auto data = param.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] -= step * grad[i];
}

/// Adam over a fixed list of parameters. The timestep advances on every call,
/// including calls where all gradients are zero.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::span<Tensor<T>* const> params) {
    if (moments_.empty()) moments_.resize(params.size());
    if (moments_.size() != params.size()) {
      throw ShapeError("Adam: parameter list changed size between steps");
    }
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], moments_[i], t_, cfg_);
  }

  std::int64_t timestep() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<AdamMoments<T>> moments_;
  std::int64_t t_ = 0;
};

/// He-normal initialisation: N(0, 2/fan_in) from the library generator.
template <typename T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw ValidationError("he_init: fan_in must be at least 1");
  Tensor<T> out(std::move(shape));
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : out.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return out;
}

}  // namespace irisloc

#endif  // IRISLOC_OPTIM_HPP
