#include "fluencygan/losses.hpp"

namespace fluencygan {

namespace {

template <typename S>
Var<S> clamped_log(Var<S> scores) {
  return log(clamp(scores, static_cast<S>(kScoreFloor), static_cast<S>(1.0 - kScoreFloor)));
}

}  // namespace

template <typename S>
Var<S> loss_ae(Var<S> logits, std::span<const int> targets) {
  return cross_entropy(logits, targets, -1);
}

template <typename S>
Var<S> loss_dg(Var<S> fake_scores) {
  return mean(clamped_log(fake_scores));
}

template <typename S>
Var<S> loss_df(Var<S> real_scores) {
  return mean(clamped_log(real_scores));
}

template <typename S>
Var<S> loss_generator(Var<S> l_ae, Var<S> l_dg, S lambda) {
  return sub(l_ae, scale(l_dg, lambda));
}

template <typename S>
Var<S> loss_discriminator(Var<S> real_scores, Var<S> fake_scores) {
  // 1 - D(G(s)), clamped through the same bounds
  auto fake_complement = add_scalar(scale(fake_scores, S(-1)), S(1));
  return scale(add(loss_df(real_scores), mean(clamped_log(fake_complement))), S(-1));
}

#define FLUENCYGAN_INSTANTIATE_LOSSES(S)                                 \
  template Var<S> loss_ae<S>(Var<S>, std::span<const int>);              \
  template Var<S> loss_dg<S>(Var<S>);                                    \
  template Var<S> loss_df<S>(Var<S>);                                    \
  template Var<S> loss_generator<S>(Var<S>, Var<S>, S);                  \
  template Var<S> loss_discriminator<S>(Var<S>, Var<S>);

FLUENCYGAN_INSTANTIATE_LOSSES(float)
FLUENCYGAN_INSTANTIATE_LOSSES(double)

}  // namespace fluencygan
