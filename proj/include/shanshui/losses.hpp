#pragma once

#include "shanshui/networks.hpp"

namespace shanshui::nn {

struct LossWeights {
  double lambda_cycle = 10.0;
  double lambda_identity = 0.5;  // fraction of lambda_cycle

  void validate() const {
    if (!(lambda_cycle >= 0.0)) throw DomainError("lambda_cycle must be >= 0");
    if (!(lambda_identity >= 0.0)) throw DomainError("lambda_identity must be >= 0");
  }
};

// mean over patches of (score - target)^2
template <typename Scalar>
Scalar lsgan_loss(const PatchScoreMap<Scalar>& scores, Scalar target) {
  return (scores.data.array() - target).square().mean();
}

template <typename Scalar>
PatchScoreMap<Scalar> lsgan_loss_grad(const PatchScoreMap<Scalar>& scores,
                                      Scalar target, Scalar scale = Scalar(1)) {
  PatchScoreMap<Scalar> g = scores;
  g.data = ((scores.data.array() - target) *
            (Scalar(2) * scale / static_cast<Scalar>(scores.size())))
               .matrix();
  return g;
}

template <typename Scalar>
Scalar mean_abs_diff(const TensorImage<Scalar>& a, const TensorImage<Scalar>& b) {
  require_same_shape(a, b, "mean_abs_diff");
  return (a.data - b.data).cwiseAbs().mean();
}

// Gradient of coef * mean|target - pred| with respect to pred.
template <typename Scalar>
TensorImage<Scalar> l1_grad(const TensorImage<Scalar>& target,
                            const TensorImage<Scalar>& pred, Scalar coef) {
  TensorImage<Scalar> g = pred;
  g.data = ((pred.data - target.data).array().sign() *
            (coef / static_cast<Scalar>(pred.size())))
               .matrix();
  return g;
}

template <typename Scalar>
Scalar cycle_weight(const LossWeights& w) {
  return static_cast<Scalar>(w.lambda_cycle);
}

template <typename Scalar>
Scalar identity_weight(const LossWeights& w) {
  return static_cast<Scalar>(w.lambda_identity * w.lambda_cycle);
}

// lambda_cycle * mean|x - x_rec|
template <typename Scalar>
Scalar cycle_consistency_loss(const TensorImage<Scalar>& x,
                              const TensorImage<Scalar>& x_rec, const LossWeights& w) {
  return cycle_weight<Scalar>(w) * mean_abs_diff(x, x_rec);
}

// lambda_identity * lambda_cycle * mean|y - g(y)|
template <typename Scalar>
Scalar identity_loss(const TensorImage<Scalar>& y, const TensorImage<Scalar>& g_of_y,
                     const LossWeights& w) {
  return identity_weight<Scalar>(w) * mean_abs_diff(y, g_of_y);
}

template <typename Scalar>
struct GeneratorLossTerms {
  Scalar adversarial_g = 0;  // lsgan(D_B(G(a)), 1)
  Scalar adversarial_f = 0;  // lsgan(D_A(F(b)), 1)
  Scalar cycle_a = 0;        // a -> G -> F
  Scalar cycle_b = 0;        // b -> F -> G
  Scalar identity_g = 0;     // b vs G(b)
  Scalar identity_f = 0;     // a vs F(a)

  Scalar total() const {
    return adversarial_g + adversarial_f + cycle_a + cycle_b + identity_g + identity_f;
  }
};

template <typename Scalar>
struct GeneratorLoss {
  GeneratorLossTerms<Scalar> terms;
  Scalar total = 0;
  TensorImage<Scalar> fake_b;  // G(a)
  TensorImage<Scalar> fake_a;  // F(b)
};

// Full generator objective for one sketch a and one painting b. When grads is
// non-null the G and F gradients, times grad_scale, are accumulated into it;
// discriminator entries are left untouched.
template <typename Scalar>
GeneratorLoss<Scalar> generator_total_loss(const ParameterSet<Scalar>& params,
                                           const TensorImage<Scalar>& a,
                                           const TensorImage<Scalar>& b,
                                           const LossWeights& weights,
                                           ParameterSet<Scalar>* grads = nullptr,
                                           Scalar grad_scale = Scalar(1)) {
  weights.validate();
  const bool backward = grads != nullptr;
  const Scalar lc = cycle_weight<Scalar>(weights);
  const Scalar li = identity_weight<Scalar>(weights);
  GeneratorLoss<Scalar> out;
  Trace<Scalar> t_fake_b, t_rec_a, t_dis_b, t_fake_a, t_rec_b, t_dis_a;
  auto traced = [&](Trace<Scalar>& t) -> Trace<Scalar>* { return backward ? &t : nullptr; };

  out.fake_b = generator_forward(params, Net::G, a, traced(t_fake_b));
  const TensorImage<Scalar> rec_a =
      generator_forward(params, Net::F, out.fake_b, traced(t_rec_a));
  const PatchScoreMap<Scalar> score_b =
      discriminator_forward(params, Net::D_B, out.fake_b, traced(t_dis_b));
  out.fake_a = generator_forward(params, Net::F, b, traced(t_fake_a));
  const TensorImage<Scalar> rec_b =
      generator_forward(params, Net::G, out.fake_a, traced(t_rec_b));
  const PatchScoreMap<Scalar> score_a =
      discriminator_forward(params, Net::D_A, out.fake_a, traced(t_dis_a));

  auto& terms = out.terms;
  terms.adversarial_g = lsgan_loss(score_b, Scalar(1));
  terms.adversarial_f = lsgan_loss(score_a, Scalar(1));
  terms.cycle_a = cycle_consistency_loss(a, rec_a, weights);
  terms.cycle_b = cycle_consistency_loss(b, rec_b, weights);

  Trace<Scalar> t_idt_g, t_idt_f;
  TensorImage<Scalar> idt_g, idt_f;
  if (li != Scalar(0)) {
    idt_g = generator_forward(params, Net::G, b, traced(t_idt_g));
    idt_f = generator_forward(params, Net::F, a, traced(t_idt_f));
    terms.identity_g = identity_loss(b, idt_g, weights);
    terms.identity_f = identity_loss(a, idt_f, weights);
  }
  out.total = terms.total();
  if (!backward) return out;

  // a -> G -> fake_b, which feeds both D_B and F.
  TensorImage<Scalar> d_fake_b = backprop_network(
      params, Net::D_B, t_dis_b, lsgan_loss_grad(score_b, Scalar(1), grad_scale), nullptr);
  d_fake_b.data += backprop_network(params, Net::F, t_rec_a,
                                    l1_grad(a, rec_a, lc * grad_scale), grads)
                       .data;
  backprop_network(params, Net::G, t_fake_b, std::move(d_fake_b), grads, false);

  TensorImage<Scalar> d_fake_a = backprop_network(
      params, Net::D_A, t_dis_a, lsgan_loss_grad(score_a, Scalar(1), grad_scale), nullptr);
  d_fake_a.data += backprop_network(params, Net::G, t_rec_b,
                                    l1_grad(b, rec_b, lc * grad_scale), grads)
                       .data;
  backprop_network(params, Net::F, t_fake_a, std::move(d_fake_a), grads, false);

  if (li != Scalar(0)) {
    backprop_network(params, Net::G, t_idt_g, l1_grad(b, idt_g, li * grad_scale), grads,
                     false);
    backprop_network(params, Net::F, t_idt_f, l1_grad(a, idt_f, li * grad_scale), grads,
                     false);
  }
  return out;
}

// 0.5 * [lsgan(real_scores, 1) + lsgan(fake_scores, 0)]
template <typename Scalar>
Scalar discriminator_objective(const PatchScoreMap<Scalar>& real_scores,
                               const PatchScoreMap<Scalar>& fake_scores) {
  return Scalar(0.5) * (lsgan_loss(real_scores, Scalar(1)) + lsgan_loss(fake_scores, Scalar(0)));
}

// discriminator_objective(D(real), D(fake)); accumulates the gradient of
// the discriminator's own parameters when grads is non-null.
template <typename Scalar>
Scalar discriminator_total_loss(const ParameterSet<Scalar>& params, Net which,
                                const TensorImage<Scalar>& real,
                                const TensorImage<Scalar>& fake,
                                ParameterSet<Scalar>* grads = nullptr,
                                Scalar grad_scale = Scalar(1)) {
  const Scalar half(0.5);
  Trace<Scalar> t_real, t_fake;
  const auto s_real = discriminator_forward(params, which, real, grads ? &t_real : nullptr);
  const auto s_fake = discriminator_forward(params, which, fake, grads ? &t_fake : nullptr);
  const Scalar loss = discriminator_objective(s_real, s_fake);
  if (grads) {
    backprop_network(params, which, t_real,
                     lsgan_loss_grad(s_real, Scalar(1), half * grad_scale), grads, false);
    backprop_network(params, which, t_fake,
                     lsgan_loss_grad(s_fake, Scalar(0), half * grad_scale), grads, false);
  }
  return loss;
}

}  // namespace shanshui::nn
