#include "shanshui/networks.hpp"

#include <vector>

namespace shanshui::nn {

namespace {

constexpr int kDiscKernel = 4;

std::vector<int> discriminator_strides(const DiscriminatorConfig& cfg) {
  std::vector<int> strides(cfg.n_downsample_layers, 2);
  strides.push_back(1);
  strides.push_back(1);
  return strides;
}

}  // namespace

int patch_grid_size(const DiscriminatorConfig& cfg, int input) {
  int size = input;
  for (int stride : discriminator_strides(cfg)) {
    const int padded = size + 2;
    if (padded < kDiscKernel) return 0;
    size = conv_output_size(padded, kDiscKernel, stride);
  }
  return size;
}

int discriminator_receptive_field(const DiscriminatorConfig& cfg) {
  const auto strides = discriminator_strides(cfg);
  int field = 1;
  for (auto it = strides.rbegin(); it != strides.rend(); ++it) {
    field = field * *it + (kDiscKernel - *it);
  }
  return field;
}

int min_discriminator_input(const DiscriminatorConfig& cfg) {
  int n = 1;
  while (patch_grid_size(cfg, n) < 1) ++n;
  return n;
}

}  // namespace shanshui::nn
