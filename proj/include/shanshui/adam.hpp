#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "shanshui/parameters.hpp"

namespace shanshui::nn {

// Optimizer groups: G and F share one, each discriminator has its own.
enum class ParamGroup { generators = 0, d_a = 1, d_b = 2 };

inline ParamGroup group_of(Net net) {
  switch (net) {
    case Net::G:
    case Net::F: return ParamGroup::generators;
    case Net::D_A: return ParamGroup::d_a;
    case Net::D_B: return ParamGroup::d_b;
  }
  return ParamGroup::generators;
}

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moments for every parameter plus a step count per group.
template <typename Scalar>
struct AdamState {
  ParameterSet<Scalar> m;
  ParameterSet<Scalar> v;
  std::array<std::int64_t, 3> steps{0, 0, 0};

  AdamState() = default;
  explicit AdamState(const ParameterSet<Scalar>& like)
      : m(like.zeros_like()), v(like.zeros_like()) {}
};

// One bias-corrected Adam step on the tensors of `group`.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads,
               AdamState<Scalar>& state, ParamGroup group, double lr,
               const AdamConfig& cfg) {
  const std::int64_t t = ++state.steps[static_cast<int>(group)];
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar step = static_cast<Scalar>(lr / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (group_of(params.spec(i).owner) != group) continue;
    const auto g = grads.value(i).array();
    auto m = state.m.value(i).array();
    auto v = state.v.value(i).array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    params.value(i).array() -= step * m / ((v * inv_c2).sqrt() + eps);
  }
}

}  // namespace shanshui::nn
