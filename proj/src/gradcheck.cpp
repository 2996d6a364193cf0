#include "fluencygan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fluencygan/discriminator.hpp"
#include "fluencygan/losses.hpp"

namespace fluencygan::gradcheck {
namespace {

using T = Tensor<double>;
using V = Var<double>;
using G = Graph<double>;

T random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero in magnitude, random sign.
T away_from_zero(const Shape& shape, Rng& rng, double min_abs = 0.1, double max_abs = 1.0) {
  T t(shape);
  for (auto& v : t.values()) {
    v = rng.uniform(min_abs, max_abs) * (rng.below(2) ? 1.0 : -1.0);
  }
  return t;
}

/// Shuffled, well-separated values so no max/argmax tie flips under eps.
T distinct_values(const Shape& shape, Rng& rng) {
  T t(shape);
  std::vector<double> values(static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = 0.05 * static_cast<double>(i) + rng.uniform(0.0, 0.01);
  }
  for (std::size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[rng.below(i)]);
  std::copy(values.begin(), values.end(), t.values().begin());
  return t;
}

/// loss = sum(out * R) for a fixed random R of out's shape.
V project(V out, std::uint64_t seed) {
  Rng rng(seed);
  T weights(out.shape());
  for (auto& v : weights.values()) v = rng.uniform(-1.0, 1.0);
  return sum(mul(out, out.graph().constant(weights)));
}

int rand_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

}  // namespace

double relative_error(const std::vector<Tensor<double>>& inputs, const LossBuilder& loss,
                      double eps) {
  std::vector<RowMatrix<double>> analytic;
  {
    G graph;
    std::vector<V> leaves;
    for (const auto& t : inputs) leaves.push_back(graph.leaf(t));
    graph.backward(loss(graph, leaves));
    for (const auto& l : leaves) analytic.push_back(l.grad());
  }
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    G graph;
    graph.set_grad_enabled(false);
    std::vector<V> leaves;
    for (const auto& t : xs) leaves.push_back(graph.constant(t));
    return loss(graph, leaves).item();
  };
  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (Eigen::Index j = 0; j < xs[i].size(); ++j) {
      const double orig = xs[i][j];
      xs[i][j] = orig + eps;
      const double up = evaluate(xs);
      xs[i][j] = orig - eps;
      const double down = evaluate(xs);
      xs[i][j] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i].data()[j];
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-8});
  return std::sqrt(diff_sq) / denom;
}

std::vector<Report> op_suite(std::uint64_t seed, int instances) {
  struct Case {
    std::string name;
    std::function<std::pair<std::vector<T>, LossBuilder>(Rng&, std::uint64_t)> make;
  };
  std::vector<Case> cases;

  cases.push_back({"matmul", [](Rng& rng, std::uint64_t s) {
                     const int m = rand_int(rng, 2, 4), k = rand_int(rng, 2, 5),
                               n = rand_int(rng, 1, 3);
                     return std::pair{std::vector<T>{random_tensor({m, k}, rng),
                                                     random_tensor({k, n}, rng)},
                                      LossBuilder([s](G&, const std::vector<V>& x) {
                                        return project(matmul(x[0], x[1]), s);
                                      })};
                   }});
  using Binary = V (*)(V, V);
  const std::vector<std::pair<std::string, Binary>> binaries = {
      {"add", &add<double>}, {"sub", &sub<double>}, {"mul", &mul<double>}, {"div", &div<double>}};
  for (const auto& [name, fn] : binaries) {
    for (const char* mode : {"same", "row", "col", "scalar"}) {
      cases.push_back({name + "/" + mode, [fn = fn, mode = std::string(mode), is_div = name == "div"](
                                              Rng& rng, std::uint64_t s) {
                         const int r = rand_int(rng, 2, 4), c = rand_int(rng, 2, 4);
                         Shape bs = mode == "same"  ? Shape{r, c}
                                    : mode == "row" ? Shape{1, c}
                                    : mode == "col" ? Shape{r, 1}
                                                    : Shape{1};
                         T b = is_div ? away_from_zero(bs, rng, 0.5, 2.0) : random_tensor(bs, rng);
                         return std::pair{std::vector<T>{random_tensor({r, c}, rng), b},
                                          LossBuilder([fn, s](G&, const std::vector<V>& x) {
                                            return project(fn(x[0], x[1]), s);
                                          })};
                       }});
    }
  }
  using Unary = V (*)(V);
  const std::vector<std::tuple<std::string, Unary, double, double>> unaries = {
      {"tanh", &tanh<double>, -2.0, 2.0},   {"sigmoid", &sigmoid<double>, -3.0, 3.0},
      {"relu", &relu<double>, 0.0, 0.0},    {"log", &log<double>, 0.3, 2.0},
      {"exp", &exp<double>, -1.0, 1.0},     {"sum", &sum<double>, -1.0, 1.0},
      {"mean", &mean<double>, -1.0, 1.0},   {"max_pool_over_time", &max_pool_over_time<double>, 0, 0}};
  for (const auto& [name, fn, lo, hi] : unaries) {
    cases.push_back({name, [fn = fn, lo = lo, hi = hi, name = name](Rng& rng, std::uint64_t s) {
                       T x;
                       if (name == "relu") {
                         x = away_from_zero({3, 4}, rng);
                       } else if (name == "max_pool_over_time") {
                         x = distinct_values({rand_int(rng, 1, 3), rand_int(rng, 2, 5), 3}, rng);
                       } else {
                         x = random_tensor({rand_int(rng, 1, 4), rand_int(rng, 2, 5)}, rng, lo, hi);
                       }
                       return std::pair{std::vector<T>{x},
                                        LossBuilder([fn, s](G&, const std::vector<V>& v) {
                                          return project(fn(v[0]), s);
                                        })};
                     }});
  }
  cases.push_back({"scale/add_scalar", [](Rng& rng, std::uint64_t s) {
                     return std::pair{std::vector<T>{random_tensor({3, 3}, rng)},
                                      LossBuilder([s](G&, const std::vector<V>& x) {
                                        return project(add_scalar(scale(x[0], -1.7), 0.4), s);
                                      })};
                   }});
  cases.push_back({"clamp", [](Rng& rng, std::uint64_t s) {
                     T x = random_tensor({3, 4}, rng, -1.0, 1.0);
                     // keep every entry at least 0.05 away from the bounds +-0.5
                     for (auto& v : x.values()) {
                       if (std::abs(std::abs(v) - 0.5) < 0.05) v = v > 0 ? 0.2 : -0.8;
                     }
                     return std::pair{std::vector<T>{x},
                                      LossBuilder([s](G&, const std::vector<V>& v) {
                                        return project(clamp(v[0], -0.5, 0.5), s);
                                      })};
                   }});
  for (int axis : {-1, 0}) {
    cases.push_back({axis < 0 ? "softmax/last" : "softmax/axis0", [axis](Rng& rng, std::uint64_t s) {
                       return std::pair{std::vector<T>{random_tensor({rand_int(rng, 2, 4), rand_int(rng, 2, 5)}, rng, -2, 2)},
                                        LossBuilder([s, axis](G&, const std::vector<V>& x) {
                                          return project(softmax(x[0], axis), s);
                                        })};
                     }});
  }
  cases.push_back({"gumbel_softmax", [](Rng& rng, std::uint64_t s) {
                     const Shape shape{rand_int(rng, 2, 4), rand_int(rng, 3, 6)};
                     T noise = sample_gumbel<double>(shape, rng);
                     const double tau = rng.uniform(0.5, 2.0);
                     return std::pair{std::vector<T>{random_tensor(shape, rng, -2, 2)},
                                      LossBuilder([s, noise, tau](G&, const std::vector<V>& x) {
                                        return project(gumbel_softmax(x[0], tau, noise), s);
                                      })};
                   }});
  for (bool batched : {false, true}) {
    cases.push_back({batched ? "conv1d/batched" : "conv1d", [batched](Rng& rng, std::uint64_t s) {
                       const int b = rand_int(rng, 2, 3), l = rand_int(rng, 4, 6),
                                 e = rand_int(rng, 2, 3), k = rand_int(rng, 1, 3),
                                 f = rand_int(rng, 1, 3);
                       Shape in = batched ? Shape{b, l, e} : Shape{l, e};
                       return std::pair{std::vector<T>{random_tensor(in, rng),
                                                       random_tensor({k, e, f}, rng),
                                                       random_tensor({f}, rng)},
                                        LossBuilder([s](G&, const std::vector<V>& x) {
                                          return project(conv1d(x[0], x[1], x[2]), s);
                                        })};
                     }});
  }
  for (int axis : {-1, 0}) {
    cases.push_back({axis < 0 ? "concat/cols" : "concat/rows", [axis](Rng& rng, std::uint64_t s) {
                       const int r = rand_int(rng, 2, 3), c = rand_int(rng, 2, 3);
                       Shape second = axis < 0 ? Shape{r, c + 1} : Shape{r + 1, c};
                       return std::pair{std::vector<T>{random_tensor({r, c}, rng), random_tensor(second, rng)},
                                        LossBuilder([s, axis](G&, const std::vector<V>& x) {
                                          return project(concat<double>({x[0], x[1], x[0]}, axis), s);
                                        })};
                     }});
  }
  cases.push_back({"slice_cols/slice_rows", [](Rng& rng, std::uint64_t s) {
                     return std::pair{std::vector<T>{random_tensor({4, 5}, rng)},
                                      LossBuilder([s](G&, const std::vector<V>& x) {
                                        return project(add(slice_cols(x[0], 1, 3), slice_cols(slice_rows(x[0], 0, 4), 2, 3)), s);
                                      })};
                   }});
  cases.push_back({"gather_rows/embedding_lookup", [](Rng& rng, std::uint64_t s) {
                     const int v = rand_int(rng, 3, 6);
                     std::vector<int> rows;
                     for (int i = 0; i < 5; ++i) rows.push_back(static_cast<int>(rng.below(v)));
                     rows.push_back(-1);
                     rows.push_back(rows.front());
                     return std::pair{std::vector<T>{random_tensor({v, 3}, rng)},
                                      LossBuilder([s, rows](G&, const std::vector<V>& x) {
                                        std::vector<int> ids(rows.begin(), rows.end() - 2);
                                        return add(project(gather_rows<double>(x[0], rows), s),
                                                   project(embedding_lookup<double>(x[0], ids), s + 1));
                                      })};
                   }});
  cases.push_back({"embedding_lookup/distribution", [](Rng& rng, std::uint64_t s) {
                     const int v = rand_int(rng, 3, 6);
                     return std::pair{std::vector<T>{random_tensor({v, 4}, rng), random_tensor({3, v}, rng, 0, 1)},
                                      LossBuilder([s](G&, const std::vector<V>& x) {
                                        return project(embedding_lookup(x[0], x[1]), s);
                                      })};
                   }});
  cases.push_back({"reshape", [](Rng& rng, std::uint64_t s) {
                     return std::pair{std::vector<T>{random_tensor({2, 6}, rng)},
                                      LossBuilder([s](G&, const std::vector<V>& x) {
                                        return project(tanh(reshape(x[0], {3, 2, 2})), s);
                                      })};
                   }});
  cases.push_back({"layer_norm", [](Rng& rng, std::uint64_t s) {
                     const int d = rand_int(rng, 3, 6);
                     return std::pair{std::vector<T>{random_tensor({rand_int(rng, 1, 4), d}, rng, -2, 2),
                                                     random_tensor({d}, rng, 0.5, 1.5), random_tensor({d}, rng)},
                                      LossBuilder([s](G&, const std::vector<V>& x) {
                                        return project(layer_norm(x[0], x[1], x[2]), s);
                                      })};
                   }});
  cases.push_back({"dropout", [](Rng& rng, std::uint64_t s) {
                     const std::uint64_t mask_seed = rng();
                     return std::pair{std::vector<T>{random_tensor({3, 5}, rng)},
                                      LossBuilder([s, mask_seed](G&, const std::vector<V>& x) {
                                        Rng mask_rng(mask_seed);
                                        return project(dropout(x[0], 0.3, mask_rng), s);
                                      })};
                   }});
  cases.push_back({"cross_entropy", [](Rng& rng, std::uint64_t) {
                     const int n = rand_int(rng, 3, 5), v = rand_int(rng, 3, 6);
                     std::vector<int> targets;
                     for (int i = 0; i < n; ++i) targets.push_back(static_cast<int>(rng.below(v)));
                     targets.back() = 0;
                     return std::pair{std::vector<T>{random_tensor({n, v}, rng, -2, 2)},
                                      LossBuilder([targets](G&, const std::vector<V>& x) {
                                        return cross_entropy<double>(x[0], targets, 0);
                                      })};
                   }});
  cases.push_back({"additive_attention", [](Rng& rng, std::uint64_t s) {
                     const int b = rand_int(rng, 1, 3), t = rand_int(rng, 2, 4), a = 3, h = 2;
                     std::vector<std::uint8_t> mask(static_cast<std::size_t>(t * b), 1);
                     for (int bb = 0; bb < b; ++bb) {
                       if (rng.below(2)) mask[static_cast<std::size_t>((t - 1) * b + bb)] = 0;
                     }
                     return std::pair{std::vector<T>{random_tensor({t * b, a}, rng), random_tensor({b, a}, rng),
                                                     random_tensor({a, 1}, rng, -2, 2), random_tensor({t * b, h}, rng)},
                                      LossBuilder([s, mask, b](G&, const std::vector<V>& x) {
                                        return project(additive_attention<double>(x[0], x[1], x[2], x[3], mask, b), s);
                                      })};
                   }});
  for (bool causal : {false, true}) {
    cases.push_back({causal ? "multi_head_attention/causal" : "multi_head_attention",
                     [causal](Rng& rng, std::uint64_t s) {
                       const int b = rand_int(rng, 1, 2), t = rand_int(rng, 2, 4), heads = 2, d = 4;
                       const int tq = causal ? t : rand_int(rng, 1, 3);
                       std::vector<std::uint8_t> mask(static_cast<std::size_t>(b * t), 1);
                       if (t > 2 && rng.below(2)) mask.back() = 0;
                       return std::pair{std::vector<T>{random_tensor({b * tq, d}, rng), random_tensor({b * t, d}, rng),
                                                       random_tensor({b * t, d}, rng)},
                                        LossBuilder([s, mask, b, heads, causal](G&, const std::vector<V>& x) {
                                          return project(multi_head_attention<double>(x[0], x[1], x[2], b, heads, mask, causal), s);
                                        })};
                     }});
  }

  std::vector<Report> reports;
  Rng rng(seed);
  for (const auto& c : cases) {
    Report r{c.name, instances, 0.0, 1e-3};
    for (int i = 0; i < instances; ++i) {
      auto [inputs, builder] = c.make(rng, rng());
      r.max_rel_error = std::max(r.max_rel_error, relative_error(inputs, builder));
    }
    reports.push_back(r);
  }
  return reports;
}

namespace {

// Small model sizes keep the finite-difference sweep over every parameter cheap.
ModelDims composite_dims() {
  ModelDims d;
  d.vocab_size = 11;
  d.max_len = 7;
  d.embed = 4;
  d.hidden = 5;
  d.model_dim = 8;
  d.heads = 2;
  d.ff_dim = 6;
  d.layers = 1;
  d.dropout = 0.0;
  d.disc_embed = 4;
  d.disc_filters = 3;
  d.disc_hidden = 4;
  return d;
}

// ||analytic - numeric|| / max(...) over every entry of the given parameter
// sets for the scalar produced by `loss`.
double parameter_rel_error(const std::vector<ParameterSet<double>*>& sets,
                           const std::function<V(G&)>& loss, double eps) {
  for (auto* set : sets) set->zero_grad();
  {
    G graph;
    graph.backward(loss(graph));
  }
  auto evaluate = [&] {
    G graph;
    graph.set_grad_enabled(false);
    return loss(graph).item();
  };
  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  for (auto* set : sets) {
    for (auto& [name, t] : set->entries()) {
      for (Eigen::Index j = 0; j < t.size(); ++j) {
        const double orig = t[j];
        t[j] = orig + eps;
        const double up = evaluate();
        t[j] = orig - eps;
        const double down = evaluate();
        t[j] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        const double analytic = t.grad().data()[j];
        diff_sq += (analytic - numeric) * (analytic - numeric);
        a_sq += analytic * analytic;
        n_sq += numeric * numeric;
      }
    }
  }
  return std::sqrt(diff_sq) / std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-8});
}

}  // namespace

std::vector<Report> composite_suite(std::uint64_t seed, int instances) {
  std::vector<Report> reports;
  for (auto kind : {GeneratorKind::kLstm, GeneratorKind::kTransformer}) {
    Report report{"composite L_G (" + std::string(generator_kind_name(kind)) + ")", 0, 0.0, 1e-2};
    for (int i = 0; i < instances; ++i) {
      const auto dims = composite_dims();
      Rng rng(Rng::derive(seed, 0xc0, static_cast<std::uint64_t>(kind), i));
      auto gen = make_generator<double>(kind, dims, rng());
      Discriminator<double> disc(dims, rng());
      // wider than the default init so the check is not dominated by tiny gradients
      gen->params().init_uniform(rng, -0.5, 0.5);
      disc.params().init_uniform(rng, -0.5, 0.5);

      // two sentences, the second shorter and padded
      std::vector<int> ids(static_cast<std::size_t>(2 * dims.max_len), kPad);
      const int lengths[2] = {dims.max_len, dims.max_len - 2};
      for (int b = 0; b < 2; ++b) {
        ids[static_cast<std::size_t>(b * dims.max_len)] = kBos;
        for (int t = 1; t + 1 < lengths[b]; ++t) {
          ids[static_cast<std::size_t>(b * dims.max_len + t)] =
              kFirstTokenId + static_cast<int>(rng.below(dims.vocab_size - kFirstTokenId));
        }
        ids[static_cast<std::size_t>(b * dims.max_len + lengths[b] - 1)] = kEos;
      }
      const auto batch = TokenBatch::from_flat(2, dims.max_len, ids);
      const auto targets = batch.next_token_targets();
      const auto noise = sample_gumbel<double>({2 * (dims.max_len - 1), dims.vocab_size}, rng);
      const double lambda = 0.5;

      auto loss = [&](G& g) {
        auto out = gen->decode_train(g, batch, batch, 0.7, noise, nullptr);
        auto l_ae = loss_ae(out.logits, std::span<const int>(targets));
        auto l_dg = loss_dg(disc.score(g, disc.generated_input(g, out.soft_tokens, batch)));
        return loss_generator(l_ae, l_dg, lambda);
      };
      const double err = parameter_rel_error({&gen->params(), &disc.params()}, loss, 1e-5);
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.instances;
    }
    reports.push_back(report);
  }
  return reports;
}

}  // namespace fluencygan::gradcheck
