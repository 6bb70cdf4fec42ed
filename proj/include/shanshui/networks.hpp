#pragma once

#include <vector>

#include "shanshui/parameters.hpp"

namespace shanshui::nn {

// Activations recorded by a forward pass, consumed by backprop_network.
template <typename Scalar>
struct Trace {
  std::vector<Tensor3<Scalar>> inputs;  // input of op i
  std::vector<InstanceNormCache<Scalar>> norms;
  Tensor3<Scalar> output;
};

template <typename Scalar>
Tensor3<Scalar> run_network(const ParameterSet<Scalar>& params, Net net,
                            const Tensor3<Scalar>& x, Trace<Scalar>* trace = nullptr) {
  const auto& ops = params.layout().ops(net);
  if (trace) {
    trace->inputs.clear();
    trace->inputs.reserve(ops.size());
    trace->norms.assign(ops.size(), {});
  }
  std::vector<Tensor3<Scalar>> skips;
  Tensor3<Scalar> cur = x;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const LayerOp& op = ops[i];
    if (trace) trace->inputs.push_back(cur);
    const RowMatrix<Scalar>* bias = op.bias >= 0 ? &params.value(op.bias) : nullptr;
    switch (op.kind) {
      case OpKind::reflect_pad: cur = reflect_pad(cur, op.pad); break;
      case OpKind::zero_pad: cur = zero_pad(cur, op.pad); break;
      case OpKind::conv:
        cur = conv2d(cur, params.value(op.weight), bias, op.kernel, op.stride);
        break;
      case OpKind::conv_transpose:
        cur = conv_transpose2d(cur, params.value(op.weight), bias, op.kernel,
                               op.stride, op.pad, op.output_padding);
        break;
      case OpKind::instance_norm:
        cur = instance_norm(cur, params.value(op.weight), params.value(op.bias),
                            trace ? &trace->norms[i] : nullptr);
        break;
      case OpKind::relu: cur = relu(std::move(cur)); break;
      case OpKind::leaky_relu: cur = leaky_relu(std::move(cur)); break;
      case OpKind::tanh: cur = nn::tanh(std::move(cur)); break;
      case OpKind::skip_begin: skips.push_back(cur); break;
      case OpKind::skip_end:
        cur.data += skips.back().data;
        skips.pop_back();
        break;
    }
  }
  if (trace) trace->output = cur;
  return cur;
}

// Backpropagates dy through a recorded pass. Parameter gradients accumulate
// into grads when non-null; the returned tensor is the input gradient (empty
// when want_input_grad is false).
template <typename Scalar>
Tensor3<Scalar> backprop_network(const ParameterSet<Scalar>& params, Net net,
                                 const Trace<Scalar>& trace, Tensor3<Scalar> dy,
                                 std::type_identity_t<ParameterSet<Scalar>>* grads,
                                 bool want_input_grad = true) {
  const auto& ops = params.layout().ops(net);
  std::vector<Tensor3<Scalar>> skip_grads;
  auto grad_of = [&](int idx) -> RowMatrix<Scalar>* {
    return (grads && idx >= 0) ? &grads->value(idx) : nullptr;
  };
  for (std::size_t n = ops.size(); n-- > 0;) {
    const LayerOp& op = ops[n];
    const Tensor3<Scalar>& x = trace.inputs[n];
    const bool need_dx = want_input_grad || n > 0;
    switch (op.kind) {
      case OpKind::reflect_pad: dy = reflect_pad_backward(dy, op.pad); break;
      case OpKind::zero_pad: dy = zero_pad_backward(dy, op.pad); break;
      case OpKind::conv: {
        Tensor3<Scalar> dx;
        conv2d_backward(x, params.value(op.weight), op.kernel, op.stride, dy,
                        need_dx ? &dx : nullptr, grad_of(op.weight), grad_of(op.bias));
        dy = std::move(dx);
        break;
      }
      case OpKind::conv_transpose: {
        Tensor3<Scalar> dx;
        conv_transpose2d_backward(x, params.value(op.weight), op.kernel, op.stride,
                                  op.pad, dy, need_dx ? &dx : nullptr,
                                  grad_of(op.weight), grad_of(op.bias));
        dy = std::move(dx);
        break;
      }
      case OpKind::instance_norm:
        dy = instance_norm_backward(dy, trace.norms[n], params.value(op.weight),
                                    grad_of(op.weight), grad_of(op.bias));
        break;
      case OpKind::relu: dy = relu_backward(x, std::move(dy)); break;
      case OpKind::leaky_relu: dy = leaky_relu_backward(x, std::move(dy)); break;
      case OpKind::tanh:
        // Output of the tanh op is the input of the next op, or the trace output.
        dy = tanh_backward(n + 1 < ops.size() ? trace.inputs[n + 1] : trace.output,
                           std::move(dy));
        break;
      case OpKind::skip_end: skip_grads.push_back(dy); break;
      case OpKind::skip_begin:
        dy.data += skip_grads.back().data;
        skip_grads.pop_back();
        break;
    }
  }
  return dy;
}

inline bool is_generator(Net net) { return net == Net::G || net == Net::F; }

template <typename Scalar>
void check_generator_input(const TensorImage<Scalar>& x) {
  if (x.channels != 3) throw ShapeError("generator input must have 3 channels");
  if (x.height % 4 != 0 || x.width % 4 != 0) {
    throw ShapeError("generator input " + std::to_string(x.height) + "x" +
                     std::to_string(x.width) + " is not divisible by 4");
  }
  // The bottleneck plane must admit the residual blocks' reflection padding.
  if (x.height < 8 || x.width < 8) {
    throw ShapeError("generator input must be at least 8x8");
  }
}

template <typename Scalar>
TensorImage<Scalar> generator_forward(const ParameterSet<Scalar>& params, Net which,
                                      const TensorImage<Scalar>& x,
                                      Trace<Scalar>* trace = nullptr) {
  if (!is_generator(which)) throw DomainError("generator_forward needs G or F");
  check_generator_input(x);
  return run_network(params, which, x, trace);
}

// Spatial size of the patch grid for a square side, or <= 0 when the input
// is too small for the stack.
int patch_grid_size(const DiscriminatorConfig& cfg, int input);
int discriminator_receptive_field(const DiscriminatorConfig& cfg);
int min_discriminator_input(const DiscriminatorConfig& cfg);

template <typename Scalar>
PatchScoreMap<Scalar> discriminator_forward(const ParameterSet<Scalar>& params,
                                            Net which, const TensorImage<Scalar>& x,
                                            Trace<Scalar>* trace = nullptr) {
  if (is_generator(which)) throw DomainError("discriminator_forward needs D_A or D_B");
  if (x.channels != 3) throw ShapeError("discriminator input must have 3 channels");
  const auto& cfg = params.config().discriminator;
  if (patch_grid_size(cfg, x.height) < 1 || patch_grid_size(cfg, x.width) < 1) {
    throw ShapeError("discriminator input " + std::to_string(x.height) + "x" +
                     std::to_string(x.width) + " below minimum " +
                     std::to_string(min_discriminator_input(cfg)));
  }
  return run_network(params, which, x, trace);
}

}  // namespace shanshui::nn
