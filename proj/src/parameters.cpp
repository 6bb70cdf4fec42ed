#include "shanshui/parameters.hpp"

#include <algorithm>

namespace shanshui::nn {

void GeneratorConfig::validate() const {
  if (base_filters < 8) throw DomainError("generator base_filters must be >= 8");
  if (n_res_blocks < 1) throw DomainError("generator n_res_blocks must be >= 1");
}

void DiscriminatorConfig::validate() const {
  if (base_filters < 8) throw DomainError("discriminator base_filters must be >= 8");
  if (n_downsample_layers < 1) {
    throw DomainError("discriminator n_downsample_layers must be >= 1");
  }
}

const char* net_name(Net net) {
  switch (net) {
    case Net::G: return "G";
    case Net::F: return "F";
    case Net::D_A: return "D_A";
    case Net::D_B: return "D_B";
  }
  return "?";
}

Eigen::Index ParamSpec::cols() const {
  Eigen::Index n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

Layout::Layout(const ModelConfig& config) : config_(config) {
  config_.generator.validate();
  config_.discriminator.validate();
  build_generator(Net::G);
  build_generator(Net::F);
  build_discriminator(Net::D_A);
  build_discriminator(Net::D_B);
}

int Layout::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int Layout::add_param(std::string name, std::vector<int> shape, Net owner,
                      ParamSpec::Init init) {
  const int idx = static_cast<int>(params_.size());
  index_.emplace(name, idx);
  params_.push_back({std::move(name), std::move(shape), owner, init});
  return idx;
}

void Layout::build_generator(Net net) {
  const GeneratorConfig& cfg = config_.generator;
  const std::string prefix = std::string(net_name(net)) + ".";
  auto& ops = ops_[static_cast<int>(net)];
  using Init = ParamSpec::Init;

  // conv [+ bias when unnormalized] [+ norm] + activation
  auto conv_block = [&](const std::string& name, int in, int out, int k, int stride,
                        bool transpose) {
    LayerOp conv{transpose ? OpKind::conv_transpose : OpKind::conv, k, stride};
    if (transpose) {
      conv.pad = 1;
      conv.output_padding = 1;
      conv.weight = add_param(prefix + name + ".convt.weight", {in, out, k, k}, net,
                              Init::normal);
      if (!cfg.instance_norm)
        conv.bias = add_param(prefix + name + ".convt.bias", {out}, net, Init::zeros);
    } else {
      conv.weight =
          add_param(prefix + name + ".conv.weight", {out, in, k, k}, net, Init::normal);
      if (!cfg.instance_norm)
        conv.bias = add_param(prefix + name + ".conv.bias", {out}, net, Init::zeros);
    }
    ops.push_back(conv);
    if (cfg.instance_norm) {
      LayerOp norm{OpKind::instance_norm};
      norm.weight = add_param(prefix + name + ".norm.scale", {out}, net, Init::ones);
      norm.bias = add_param(prefix + name + ".norm.offset", {out}, net, Init::zeros);
      ops.push_back(norm);
    }
  };
  auto push = [&](OpKind kind, int pad = 0) {
    LayerOp op{kind};
    op.pad = pad;
    ops.push_back(op);
  };

  const int ngf = cfg.base_filters;
  push(OpKind::reflect_pad, 3);
  conv_block("in", 3, ngf, 7, 1, false);
  push(OpKind::relu);
  for (int i = 0; i < 2; ++i) {
    const int mult = 1 << i;
    push(OpKind::zero_pad, 1);
    conv_block("down" + std::to_string(i + 1), ngf * mult, ngf * mult * 2, 3, 2, false);
    push(OpKind::relu);
  }
  const int width = ngf * 4;
  for (int r = 0; r < cfg.n_res_blocks; ++r) {
    const std::string name = "res" + std::to_string(r);
    push(OpKind::skip_begin);
    push(OpKind::reflect_pad, 1);
    conv_block(name + ".1", width, width, 3, 1, false);
    push(OpKind::relu);
    push(OpKind::reflect_pad, 1);
    conv_block(name + ".2", width, width, 3, 1, false);
    push(OpKind::skip_end);
  }
  for (int i = 0; i < 2; ++i) {
    const int mult = 1 << (2 - i);
    conv_block("up" + std::to_string(i + 1), ngf * mult, ngf * mult / 2, 3, 2, true);
    push(OpKind::relu);
  }
  push(OpKind::reflect_pad, 3);
  LayerOp out{OpKind::conv, 7, 1};
  out.weight = add_param(prefix + "out.conv.weight", {3, ngf, 7, 7}, net, Init::normal);
  out.bias = add_param(prefix + "out.conv.bias", {3}, net, Init::zeros);
  ops.push_back(out);
  push(OpKind::tanh);
}

void Layout::build_discriminator(Net net) {
  const DiscriminatorConfig& cfg = config_.discriminator;
  const std::string prefix = std::string(net_name(net)) + ".";
  auto& ops = ops_[static_cast<int>(net)];
  using Init = ParamSpec::Init;
  constexpr int k = 4;

  auto layer = [&](const std::string& name, int in, int out, int stride, bool norm,
                   bool activate) {
    LayerOp pad{OpKind::zero_pad};
    pad.pad = 1;
    ops.push_back(pad);
    LayerOp conv{OpKind::conv, k, stride};
    conv.weight = add_param(prefix + name + ".conv.weight", {out, in, k, k}, net,
                            Init::normal);
    if (!norm) conv.bias = add_param(prefix + name + ".conv.bias", {out}, net, Init::zeros);
    ops.push_back(conv);
    if (norm) {
      LayerOp n{OpKind::instance_norm};
      n.weight = add_param(prefix + name + ".norm.scale", {out}, net, Init::ones);
      n.bias = add_param(prefix + name + ".norm.offset", {out}, net, Init::zeros);
      ops.push_back(n);
    }
    if (activate) ops.push_back(LayerOp{OpKind::leaky_relu});
  };

  const int ndf = cfg.base_filters;
  const int layers = cfg.n_downsample_layers;
  layer("layer0", 3, ndf, 2, false, true);
  int filters = ndf;
  for (int n = 1; n < layers; ++n) {
    const int next = ndf * std::min(1 << n, 8);
    layer("layer" + std::to_string(n), filters, next, 2, true, true);
    filters = next;
  }
  const int next = ndf * std::min(1 << layers, 8);
  layer("layer" + std::to_string(layers), filters, next, 1, true, true);
  layer("head", next, 1, 1, false, false);
}

}  // namespace shanshui::nn
