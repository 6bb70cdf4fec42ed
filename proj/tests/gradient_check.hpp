#pragma once

// Central-difference check of the generator objective's parameter gradients.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "shanshui/losses.hpp"
#include "test_support.hpp"

namespace shanshui::testing {

struct GradientCheckReport {
  int sampled = 0;
  int failed = 0;
  double max_relative_error = 0.0;
  std::string worst;  // "name[index]" of the worst entry
};

// Relative error |a - n| / max(|a|, |n|); entries whose true gradient is
// below the floor are compared on that floor instead, so round-off in the
// differencing cannot dominate a vanishing gradient.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Tiny configuration: 16x16 inputs, G/F with 8 base filters and one residual
// block, discriminators with 8 base filters and two downsampling layers (the
// smallest stack whose patch grid is non-empty at 16x16 is 2 layers).
inline nn::ModelConfig gradient_check_config() { return {{8, 1}, {8, 2}}; }

inline GradientCheckReport check_generator_gradients(int min_samples, std::uint64_t seed,
                                                     double tolerance = 1e-4) {
  const nn::ModelConfig cfg = gradient_check_config();
  auto params = nn::init_parameters<double>(cfg.generator, cfg.discriminator, seed);
  // Non-trivial scales, offsets, biases and discriminator outputs.
  Rng rng = make_rng(seed, 3);
  perturb(params, 0.1, rng);
  const auto a = random_image<double>(16, 16, rng);
  const auto b = random_image<double>(16, 16, rng);
  const nn::LossWeights weights{};

  auto grads = params.zeros_like();
  nn::generator_total_loss(params, a, b, weights, &grads);

  // One entry from every generator tensor, then uniform draws over all
  // generator entries.
  std::vector<std::size_t> gen_tensors;
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;
  Eigen::Index gen_entries = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!nn::is_generator(params.spec(i).owner)) continue;
    gen_tensors.push_back(i);
    gen_entries += params.value(i).size();
    picks.emplace_back(i, static_cast<Eigen::Index>(
                              uniform_index(rng, static_cast<std::uint64_t>(params.value(i).size()))));
  }
  while (static_cast<int>(picks.size()) < min_samples) {
    auto flat = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(gen_entries)));
    for (std::size_t i : gen_tensors) {
      if (flat < params.value(i).size()) {
        picks.emplace_back(i, flat);
        break;
      }
      flat -= params.value(i).size();
    }
  }

  GradientCheckReport report;
  const double h = 1e-5;
  for (const auto& [tensor, entry] : picks) {
    double& v = params.value(tensor).data()[entry];
    const double saved = v;
    v = saved + h;
    const double up = nn::generator_total_loss(params, a, b, weights).total;
    v = saved - h;
    const double down = nn::generator_total_loss(params, a, b, weights).total;
    v = saved;
    const double numeric = (up - down) / (2 * h);
    const double err = relative_error(grads.value(tensor).data()[entry], numeric);
    ++report.sampled;
    if (err >= tolerance) ++report.failed;
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst = params.spec(tensor).name + "[" + std::to_string(entry) + "]";
    }
  }
  return report;
}

}  // namespace shanshui::testing
