#pragma once

#include <span>

#include "fluencygan/ops.hpp"

namespace fluencygan {

/// Scores are clamped to [kScoreFloor, 1 - kScoreFloor] before any log.
inline constexpr double kScoreFloor = 1e-7;

/// Reconstruction loss: mean over non-ignored rows of -log softmax(logits)[target].
template <typename S>
Var<S> loss_ae(Var<S> logits, std::span<const int> targets);

/// Mean of log D(G(s)) over the batch of generated-sample scores.
template <typename S>
Var<S> loss_dg(Var<S> fake_scores);

/// Mean of log D(x) over the batch of fluent-sample scores.
template <typename S>
Var<S> loss_df(Var<S> real_scores);

/// L_G = L_AE - lambda * L_DG.
template <typename S>
Var<S> loss_generator(Var<S> l_ae, Var<S> l_dg, S lambda);

/// -[mean log D(x) + mean log(1 - D(G(s)))].
template <typename S>
Var<S> loss_discriminator(Var<S> real_scores, Var<S> fake_scores);

}  // namespace fluencygan
