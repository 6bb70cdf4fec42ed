#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "shanshui/ops.hpp"
#include "shanshui/random.hpp"

namespace shanshui::nn {

struct GeneratorConfig {
  int base_filters = 64;
  int n_res_blocks = 9;
  bool instance_norm = true;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  int base_filters = 64;
  int n_downsample_layers = 3;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

// Residual block count used for a given training resolution.
inline int default_res_blocks(int image_size) { return image_size >= 256 ? 9 : 6; }

struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  bool operator==(const ModelConfig&) const = default;
};

// G: sketch -> painting, F: painting -> sketch; D_A judges sketches,
// D_B judges paintings.
enum class Net { G, F, D_A, D_B };

const char* net_name(Net net);

enum class OpKind {
  reflect_pad,
  zero_pad,
  conv,
  conv_transpose,
  instance_norm,
  relu,
  leaky_relu,
  tanh,
  skip_begin,
  skip_end
};

struct LayerOp {
  OpKind kind;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int output_padding = 0;
  int weight = -1;  // parameter index; scale for instance_norm
  int bias = -1;    // parameter index; offset for instance_norm
};

struct ParamSpec {
  std::string name;
  std::vector<int> shape;  // checkpoint layout: conv [out,in,k,k], convT [in,out,k,k]
  Net owner;
  enum class Init { normal, ones, zeros } init;

  Eigen::Index rows() const { return shape[0]; }
  Eigen::Index cols() const;
};

// Op sequences for the four networks and the parameters they reference.
class Layout {
 public:
  explicit Layout(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamSpec>& params() const { return params_; }
  const std::vector<LayerOp>& ops(Net net) const { return ops_[static_cast<int>(net)]; }
  int find(const std::string& name) const;  // -1 when absent

 private:
  int add_param(std::string name, std::vector<int> shape, Net owner,
                ParamSpec::Init init);
  void build_generator(Net net);
  void build_discriminator(Net net);

  ModelConfig config_;
  std::vector<ParamSpec> params_;
  std::map<std::string, int> index_;
  std::vector<LayerOp> ops_[4];
};

// All named learnable tensors of the four networks. Each tensor is stored as
// a rows x cols matrix (rows = first shape dimension).
template <typename Scalar>
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(const ModelConfig& config)
      : layout_(std::make_shared<const Layout>(config)) {
    for (const auto& spec : layout_->params()) {
      values_.push_back(RowMatrix<Scalar>::Zero(spec.rows(), spec.cols()));
    }
  }

  const Layout& layout() const { return *layout_; }
  const ModelConfig& config() const { return layout_->config(); }
  std::size_t size() const { return values_.size(); }

  RowMatrix<Scalar>& value(std::size_t i) { return values_[i]; }
  const RowMatrix<Scalar>& value(std::size_t i) const { return values_[i]; }
  RowMatrix<Scalar>& value(const std::string& name) { return values_.at(checked(name)); }
  const RowMatrix<Scalar>& value(const std::string& name) const {
    return values_.at(checked(name));
  }
  const ParamSpec& spec(std::size_t i) const { return layout_->params()[i]; }

  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    for (auto& v : out.values_) v.setZero();
    return out;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out(config());
    for (std::size_t i = 0; i < size(); ++i) out.value(i) = values_[i].template cast<Other>();
    return out;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.allFinite()) return false;
    return true;
  }

  bool operator==(const ParameterSet& o) const {
    if (!(config() == o.config())) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (values_[i] != o.values_[i]) return false;
    return true;
  }

 private:
  std::size_t checked(const std::string& name) const {
    const int i = layout_->find(name);
    if (i < 0) throw DomainError("unknown parameter " + name);
    return static_cast<std::size_t>(i);
  }

  std::shared_ptr<const Layout> layout_;
  std::vector<RowMatrix<Scalar>> values_;
};

inline constexpr double kInitStd = 0.02;

// Conv weights ~ Normal(0, 0.02), normalization scales 1, offsets and biases 0.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const GeneratorConfig& g_cfg,
                                     const DiscriminatorConfig& d_cfg,
                                     std::uint64_t seed) {
  g_cfg.validate();
  d_cfg.validate();
  ParameterSet<Scalar> params(ModelConfig{g_cfg, d_cfg});
  Rng rng = make_rng(seed, 0x1217);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = params.value(i);
    switch (params.spec(i).init) {
      case ParamSpec::Init::normal:
        for (Eigen::Index k = 0; k < v.size(); ++k)
          v.data()[k] = static_cast<Scalar>(kInitStd * standard_normal(rng));
        break;
      case ParamSpec::Init::ones:
        v.setOnes();
        break;
      case ParamSpec::Init::zeros:
        v.setZero();
        break;
    }
  }
  return params;
}

}  // namespace shanshui::nn
