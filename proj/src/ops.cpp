#include "fluencygan/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace fluencygan {
namespace {

template <typename S>
using Mat = RowMatrix<S>;

enum class Broadcast { kSame, kRow, kCol, kScalar };

template <typename S>
Broadcast broadcast_mode(const char* op, const Var<S>& a, const Var<S>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) return Broadcast::kSame;
  if (bv.rows() == 1 && bv.cols() == 1) return Broadcast::kScalar;
  if (bv.rows() == 1 && bv.cols() == av.cols()) return Broadcast::kRow;
  if (bv.cols() == 1 && bv.rows() == av.rows()) return Broadcast::kCol;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) +
                       " to " + shape_string(a.shape()));
}

template <typename S>
Mat<S> expand(const Mat<S>& b, Broadcast mode, Eigen::Index rows, Eigen::Index cols) {
  switch (mode) {
    case Broadcast::kSame:
      return b;
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    case Broadcast::kCol:
      return b.replicate(1, cols);
    case Broadcast::kScalar:
      return Mat<S>::Constant(rows, cols, b(0, 0));
  }
  return b;
}

template <typename S>
Mat<S> reduce(const Mat<S>& g, Broadcast mode) {
  switch (mode) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kCol:
      return g.rowwise().sum();
    case Broadcast::kScalar:
      return Mat<S>::Constant(1, 1, g.sum());
  }
  return g;
}

template <typename S>
void softmax_rows_inplace(Mat<S>& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const S m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

template <typename S>
Mat<S> softmax_rows_backward(const Mat<S>& y, const Mat<S>& g) {
  Mat<S> dot = (g.array() * y.array()).rowwise().sum();
  return (y.array() * (g.array() - dot.replicate(1, g.cols()).array())).matrix();
}

// Three-dimensional view helpers for sequence ops.
struct SeqShape {
  int batch;
  int length;
  int width;
  bool batched;
};

template <typename S>
SeqShape seq_shape(const char* op, const Var<S>& x) {
  const auto& s = x.shape();
  if (s.size() == 2) return {1, s[0], s[1], false};
  if (s.size() == 3) return {s[0], s[1], s[2], true};
  throw DimensionError(std::string(op) + ": expected [L, E] or [B, L, E], got " +
                       shape_string(s));
}

}  // namespace

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (b.shape().size() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  Shape shape = a.shape();
  shape.back() = static_cast<int>(bv.cols());
  Mat<S> out = av * bv;
  const int ia = a.id(), ib = b.id();
  return a.graph().record(std::move(shape), std::move(out), {ia, ib},
                          [ia, ib](Graph<S>& g, const Mat<S>& dy) {
                            if (g.wants_grad(ia)) g.accumulate(ia, dy * g.value(ib).transpose());
                            if (g.wants_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * dy);
                          });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  const Broadcast mode = broadcast_mode("add", a, b);
  const auto& av = a.value();
  Mat<S> out = av + expand<S>(b.value(), mode, av.rows(), av.cols());
  const int ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), {ia, ib},
                          [ia, ib, mode](Graph<S>& g, const Mat<S>& dy) {
                            g.accumulate(ia, dy);
                            if (g.wants_grad(ib)) g.accumulate(ib, reduce<S>(dy, mode));
                          });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  const Broadcast mode = broadcast_mode("sub", a, b);
  const auto& av = a.value();
  Mat<S> out = av - expand<S>(b.value(), mode, av.rows(), av.cols());
  const int ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), {ia, ib},
                          [ia, ib, mode](Graph<S>& g, const Mat<S>& dy) {
                            g.accumulate(ia, dy);
                            if (g.wants_grad(ib)) g.accumulate(ib, reduce<S>(-dy, mode));
                          });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  const Broadcast mode = broadcast_mode("mul", a, b);
  const auto& av = a.value();
  Mat<S> out = av.cwiseProduct(expand<S>(b.value(), mode, av.rows(), av.cols()));
  const int ia = a.id(), ib = b.id();
  return a.graph().record(
      a.shape(), std::move(out), {ia, ib}, [ia, ib, mode](Graph<S>& g, const Mat<S>& dy) {
        const auto& av = g.value(ia);
        if (g.wants_grad(ia)) {
          g.accumulate(ia, dy.cwiseProduct(expand<S>(g.value(ib), mode, av.rows(), av.cols())));
        }
        if (g.wants_grad(ib)) g.accumulate(ib, reduce<S>(dy.cwiseProduct(av), mode));
      });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  const Broadcast mode = broadcast_mode("div", a, b);
  const auto& av = a.value();
  Mat<S> out = av.cwiseQuotient(expand<S>(b.value(), mode, av.rows(), av.cols()));
  const int ia = a.id(), ib = b.id();
  return a.graph().record(
      a.shape(), std::move(out), {ia, ib}, [ia, ib, mode](Graph<S>& g, const Mat<S>& dy) {
        const auto& av = g.value(ia);
        const Mat<S> bb = expand<S>(g.value(ib), mode, av.rows(), av.cols());
        if (g.wants_grad(ia)) g.accumulate(ia, dy.cwiseQuotient(bb));
        if (g.wants_grad(ib)) {
          Mat<S> d = -(dy.array() * av.array() / (bb.array() * bb.array())).matrix();
          g.accumulate(ib, reduce<S>(d, mode));
        }
      });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  const int ia = a.id();
  return a.graph().record(a.shape(), a.value() * factor, {ia},
                          [ia, factor](Graph<S>& g, const Mat<S>& dy) {
                            g.accumulate(ia, dy * factor);
                          });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S offset) {
  const int ia = a.id();
  Mat<S> out = (a.value().array() + offset).matrix();
  return a.graph().record(a.shape(), std::move(out), {ia},
                          [ia](Graph<S>& g, const Mat<S>& dy) { g.accumulate(ia, dy); });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  const int ia = a.id();
  Mat<S> out = a.value().array().tanh().matrix();
  auto& graph = a.graph();
  const int iy = static_cast<int>(graph.size());
  return graph.record(a.shape(), std::move(out), {ia}, [ia, iy](Graph<S>& g, const Mat<S>& dy) {
    const auto& y = g.value(iy);
    g.accumulate(ia, (dy.array() * (S(1) - y.array().square())).matrix());
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  const int ia = a.id();
  Mat<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  auto& graph = a.graph();
  const int iy = static_cast<int>(graph.size());
  return graph.record(a.shape(), std::move(out), {ia}, [ia, iy](Graph<S>& g, const Mat<S>& dy) {
    const auto& y = g.value(iy);
    g.accumulate(ia, (dy.array() * y.array() * (S(1) - y.array())).matrix());
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  const int ia = a.id();
  Mat<S> out = a.value().cwiseMax(S(0));
  return a.graph().record(a.shape(), std::move(out), {ia}, [ia](Graph<S>& g, const Mat<S>& dy) {
    const auto& x = g.value(ia);
    g.accumulate(ia, (x.array() > S(0)).select(dy, S(0)));
  });
}

template <typename S>
Var<S> log(Var<S> a) {
  const int ia = a.id();
  Mat<S> out = a.value().array().log().matrix();
  return a.graph().record(a.shape(), std::move(out), {ia}, [ia](Graph<S>& g, const Mat<S>& dy) {
    g.accumulate(ia, dy.cwiseQuotient(g.value(ia)));
  });
}

template <typename S>
Var<S> exp(Var<S> a) {
  const int ia = a.id();
  Mat<S> out = a.value().array().exp().matrix();
  auto& graph = a.graph();
  const int iy = static_cast<int>(graph.size());
  return graph.record(a.shape(), std::move(out), {ia}, [ia, iy](Graph<S>& g, const Mat<S>& dy) {
    g.accumulate(ia, dy.cwiseProduct(g.value(iy)));
  });
}

template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  const int ia = a.id();
  Mat<S> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.graph().record(a.shape(), std::move(out), {ia},
                          [ia, lo, hi](Graph<S>& g, const Mat<S>& dy) {
                            const auto& x = g.value(ia);
                            g.accumulate(ia, (x.array() > lo && x.array() < hi).select(dy, S(0)));
                          });
}

template <typename S>
Var<S> sum(Var<S> a) {
  const int ia = a.id();
  Mat<S> out = Mat<S>::Constant(1, 1, a.value().sum());
  return a.graph().record({1}, std::move(out), {ia}, [ia](Graph<S>& g, const Mat<S>& dy) {
    const auto& x = g.value(ia);
    g.accumulate(ia, Mat<S>::Constant(x.rows(), x.cols(), dy(0, 0)));
  });
}

template <typename S>
Var<S> mean(Var<S> a) {
  const auto n = static_cast<S>(a.value().size());
  return scale(sum(a), S(1) / n);
}

template <typename S>
Var<S> softmax(Var<S> x, int axis) {
  const int ndim = static_cast<int>(x.shape().size());
  if (axis < 0) axis += ndim;
  const bool rows = axis == ndim - 1;
  if (!rows && !(ndim == 2 && axis == 0)) {
    throw ParameterError("softmax: unsupported axis " + std::to_string(axis) + " for shape " +
                         shape_string(x.shape()));
  }
  Mat<S> out = rows ? Mat<S>(x.value()) : Mat<S>(x.value().transpose());
  softmax_rows_inplace(out);
  if (!rows) out.transposeInPlace();
  auto& graph = x.graph();
  const int ix = x.id();
  const int iy = static_cast<int>(graph.size());
  return graph.record(x.shape(), std::move(out), {ix},
                      [ix, iy, rows](Graph<S>& g, const Mat<S>& dy) {
                        const auto& y = g.value(iy);
                        if (rows) {
                          g.accumulate(ix, softmax_rows_backward<S>(y, dy));
                        } else {
                          Mat<S> yt = y.transpose(), gt = dy.transpose();
                          g.accumulate(ix, softmax_rows_backward<S>(yt, gt).transpose());
                        }
                      });
}

template <typename S>
Var<S> gumbel_softmax(Var<S> logits, S tau, const Tensor<S>& noise) {
  if (!(tau > S(0))) {
    throw ParameterError("gumbel_softmax: temperature must be positive, got " +
                         std::to_string(tau));
  }
  const auto& lv = logits.value();
  if (noise.matrix().rows() != lv.rows() || noise.matrix().cols() != lv.cols()) {
    throw DimensionError("gumbel_softmax: noise shape " + shape_string(noise.shape()) +
                         " differs from logits " + shape_string(logits.shape()));
  }
  Mat<S> out = ((lv + noise.matrix()).array() / tau).matrix();
  softmax_rows_inplace(out);
  auto& graph = logits.graph();
  const int ix = logits.id();
  const int iy = static_cast<int>(graph.size());
  return graph.record(logits.shape(), std::move(out), {ix},
                      [ix, iy, tau](Graph<S>& g, const Mat<S>& dy) {
                        g.accumulate(ix, softmax_rows_backward<S>(g.value(iy), dy) / tau);
                      });
}

template <typename S>
Tensor<S> sample_gumbel(const Shape& shape, Rng& rng) {
  Tensor<S> t(shape);
  for (auto& v : t.values()) v = static_cast<S>(rng.gumbel());
  return t;
}

template <typename S>
Var<S> conv1d(Var<S> input, Var<S> kernel, Var<S> bias) {
  const SeqShape in = seq_shape("conv1d", input);
  const auto& ks = kernel.shape();
  if (ks.size() != 3 || ks[1] != in.width) {
    throw DimensionError("conv1d: kernel " + shape_string(ks) + " incompatible with input " +
                         shape_string(input.shape()));
  }
  const int width = ks[0];
  const int filters = ks[2];
  if (bias.value().size() != filters) {
    throw DimensionError("conv1d: bias " + shape_string(bias.shape()) + " for " +
                         std::to_string(filters) + " filters");
  }
  if (in.length < width) {
    throw DimensionError("conv1d: sequence length " + std::to_string(in.length) +
                         " shorter than kernel width " + std::to_string(width) + " (input " +
                         shape_string(input.shape()) + ", kernel " + shape_string(ks) + ")");
  }
  const int out_len = in.length - width + 1;
  const int window = width * in.width;

  // Rows t..t+k-1 of one sequence are contiguous, so each window is a
  // contiguous run of k*E scalars.
  const auto& x = input.value();
  Mat<S> cols(static_cast<Eigen::Index>(in.batch) * out_len, window);
  for (int b = 0; b < in.batch; ++b) {
    for (int t = 0; t < out_len; ++t) {
      const S* src = x.data() + (static_cast<Eigen::Index>(b) * in.length + t) * in.width;
      cols.row(static_cast<Eigen::Index>(b) * out_len + t) =
          Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(src, window);
    }
  }
  const Eigen::Map<const Mat<S>> kmat(kernel.value().data(), window, filters);
  Mat<S> out = cols * kmat;
  out.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value().data(),
                                                                         filters);

  Shape shape = in.batched ? Shape{in.batch, out_len, filters} : Shape{out_len, filters};
  const int ii = input.id(), ik = kernel.id(), ib = bias.id();
  return input.graph().record(
      std::move(shape), std::move(out), {ii, ik, ib},
      [ii, ik, ib, in, out_len, window, filters, cols = std::move(cols)](Graph<S>& g,
                                                                         const Mat<S>& dy) {
        if (g.wants_grad(ik)) {
          Mat<S> dk = cols.transpose() * dy;
          g.accumulate(ik, Eigen::Map<const Mat<S>>(dk.data(), g.value(ik).rows(),
                                                    g.value(ik).cols()));
        }
        if (g.wants_grad(ib)) {
          Mat<S> db = dy.colwise().sum();
          g.accumulate(ib, Eigen::Map<const Mat<S>>(db.data(), g.value(ib).rows(),
                                                    g.value(ib).cols()));
        }
        if (g.wants_grad(ii)) {
          const Eigen::Map<const Mat<S>> kmat(g.value(ik).data(), window, filters);
          Mat<S> dcols = dy * kmat.transpose();
          const auto& x = g.value(ii);
          Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
          for (int b = 0; b < in.batch; ++b) {
            for (int t = 0; t < out_len; ++t) {
              S* dst = dx.data() + (static_cast<Eigen::Index>(b) * in.length + t) * in.width;
              Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(dst, window) +=
                  dcols.row(static_cast<Eigen::Index>(b) * out_len + t);
            }
          }
          g.accumulate(ii, dx);
        }
      });
}

template <typename S>
Var<S> max_pool_over_time(Var<S> input) {
  const SeqShape in = seq_shape("max_pool_over_time", input);
  const auto& x = input.value();
  Mat<S> out(in.batch, in.width);
  std::vector<int> argmax(static_cast<std::size_t>(in.batch) * in.width);
  for (int b = 0; b < in.batch; ++b) {
    for (int f = 0; f < in.width; ++f) {
      int best = 0;
      S best_val = x(static_cast<Eigen::Index>(b) * in.length, f);
      for (int t = 1; t < in.length; ++t) {
        const S v = x(static_cast<Eigen::Index>(b) * in.length + t, f);
        if (v > best_val) {
          best_val = v;
          best = t;
        }
      }
      out(b, f) = best_val;
      argmax[static_cast<std::size_t>(b) * in.width + f] = b * in.length + best;
    }
  }
  Shape shape = in.batched ? Shape{in.batch, in.width} : Shape{in.width};
  const int ii = input.id();
  return input.graph().record(std::move(shape), std::move(out), {ii},
                              [ii, in, argmax = std::move(argmax)](Graph<S>& g, const Mat<S>& dy) {
                                const auto& x = g.value(ii);
                                Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
                                for (int b = 0; b < in.batch; ++b) {
                                  for (int f = 0; f < in.width; ++f) {
                                    dx(argmax[static_cast<std::size_t>(b) * in.width + f], f) +=
                                        dy(b, f);
                                  }
                                }
                                g.accumulate(ii, dx);
                              });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::vector<int> ids;
  std::vector<Eigen::Index> extents;
  const auto& first = parts.front().value();
  Eigen::Index total = 0;
  const bool cols = axis != 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (cols ? v.rows() != first.rows() : v.cols() != first.cols()) {
      throw DimensionError("concat: " + shape_string(p.shape()) + " incompatible with " +
                           shape_string(parts.front().shape()));
    }
    ids.push_back(p.id());
    extents.push_back(cols ? v.cols() : v.rows());
    total += extents.back();
  }
  Mat<S> out = cols ? Mat<S>(first.rows(), total) : Mat<S>(total, first.cols());
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].value();
    if (cols) {
      out.middleCols(offset, extents[i]) = v;
    } else {
      out.middleRows(offset, extents[i]) = v;
    }
    offset += extents[i];
  }
  Shape shape;
  if (cols) {
    shape = parts.front().shape();
    shape.back() = static_cast<int>(total);
  } else {
    shape = {static_cast<int>(total), static_cast<int>(first.cols())};
  }
  return parts.front().graph().record(
      std::move(shape), std::move(out), ids,
      [ids, extents, cols](Graph<S>& g, const Mat<S>& dy) {
        Eigen::Index offset = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (g.wants_grad(ids[i])) {
            if (cols) {
              g.accumulate(ids[i], dy.middleCols(offset, extents[i]));
            } else {
              g.accumulate(ids[i], dy.middleRows(offset, extents[i]));
            }
          }
          offset += extents[i];
        }
      });
}

template <typename S>
Var<S> slice_cols(Var<S> a, int start, int count) {
  const auto& av = a.value();
  if (start < 0 || count <= 0 || start + count > av.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.shape()));
  }
  Shape shape = a.shape();
  shape.back() = count;
  const int ia = a.id();
  return a.graph().record(std::move(shape), av.middleCols(start, count), {ia},
                          [ia, start, count](Graph<S>& g, const Mat<S>& dy) {
                            const auto& x = g.value(ia);
                            Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
                            dx.middleCols(start, count) = dy;
                            g.accumulate(ia, dx);
                          });
}

template <typename S>
Var<S> slice_rows(Var<S> a, int start, int count) {
  const auto& av = a.value();
  if (start < 0 || count <= 0 || start + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.shape()));
  }
  const int ia = a.id();
  return a.graph().record({count, static_cast<int>(av.cols())}, av.middleRows(start, count),
                          {ia}, [ia, start, count](Graph<S>& g, const Mat<S>& dy) {
                            const auto& x = g.value(ia);
                            Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
                            dx.middleRows(start, count) = dy;
                            g.accumulate(ia, dx);
                          });
}

template <typename S>
Var<S> gather_rows(Var<S> a, std::span<const int> rows) {
  const auto& av = a.value();
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < -1 || r >= av.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " outside " +
                           shape_string(a.shape()));
    }
    if (r < 0) {
      out.row(static_cast<Eigen::Index>(i)).setZero();
    } else {
      out.row(static_cast<Eigen::Index>(i)) = av.row(r);
    }
  }
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return a.graph().record({static_cast<int>(rows.size()), static_cast<int>(av.cols())},
                          std::move(out), {ia},
                          [ia, idx = std::move(idx)](Graph<S>& g, const Mat<S>& dy) {
                            const auto& x = g.value(ia);
                            Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              if (idx[i] >= 0) dx.row(idx[i]) += dy.row(static_cast<Eigen::Index>(i));
                            }
                            g.accumulate(ia, dx);
                          });
}

template <typename S>
Var<S> reshape(Var<S> a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  const auto& av = a.value();
  Mat<S> out = Eigen::Map<const Mat<S>>(av.data(), shape_rows(shape), shape_cols(shape));
  const int ia = a.id();
  return a.graph().record(std::move(shape), std::move(out), {ia},
                          [ia](Graph<S>& g, const Mat<S>& dy) {
                            const auto& x = g.value(ia);
                            g.accumulate(ia, Eigen::Map<const Mat<S>>(dy.data(), x.rows(), x.cols()));
                          });
}

template <typename S>
Var<S> embedding_lookup(Var<S> table, std::span<const int> ids) {
  const auto vocab = table.value().rows();
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw DimensionError("embedding_lookup: id " + std::to_string(id) + " outside table " +
                           shape_string(table.shape()));
    }
  }
  return gather_rows(table, ids);
}

template <typename S>
Var<S> embedding_lookup(Var<S> table, Var<S> distribution) {
  if (distribution.value().cols() != table.value().rows()) {
    throw DimensionError("embedding_lookup: distribution " + shape_string(distribution.shape()) +
                         " over table " + shape_string(table.shape()));
  }
  return matmul(distribution, table);
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
  const auto& xv = x.value();
  const auto d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: scale " + shape_string(gamma.shape()) + " / shift " +
                         shape_string(beta.shape()) + " for input " + shape_string(x.shape()));
  }
  Mat<S> mu = xv.rowwise().mean();
  Mat<S> centered = xv - mu.replicate(1, d);
  Mat<S> inv_std =
      ((centered.array().square().rowwise().sum() / S(d)) + eps).rsqrt().matrix();
  Mat<S> xhat = (centered.array() * inv_std.replicate(1, d).array()).matrix();
  const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> gv(gamma.value().data(), d);
  const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bv(beta.value().data(), d);
  Mat<S> out = (xhat.array().rowwise() * gv.array()).matrix();
  out.rowwise() += bv;
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      x.shape(), std::move(out), {ix, ig, ib},
      [ix, ig, ib, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<S>& g,
                                                                            const Mat<S>& dy) {
        if (g.wants_grad(ig)) {
          Mat<S> dg = (dy.array() * xhat.array()).colwise().sum();
          g.accumulate(ig, Eigen::Map<const Mat<S>>(dg.data(), g.value(ig).rows(),
                                                    g.value(ig).cols()));
        }
        if (g.wants_grad(ib)) {
          Mat<S> db = dy.colwise().sum();
          g.accumulate(ib, Eigen::Map<const Mat<S>>(db.data(), g.value(ib).rows(),
                                                    g.value(ib).cols()));
        }
        if (g.wants_grad(ix)) {
          const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> gv(g.value(ig).data(), d);
          Mat<S> dxhat = (dy.array().rowwise() * gv.array()).matrix();
          Mat<S> m1 = dxhat.rowwise().mean();
          Mat<S> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
          Mat<S> dx = ((dxhat - m1.replicate(1, d)).array() -
                       xhat.array() * m2.replicate(1, d).array()) *
                      inv_std.replicate(1, d).array();
          g.accumulate(ix, dx);
        }
      });
}

template <typename S>
Var<S> dropout(Var<S> x, S p, Rng& rng) {
  if (p < S(0) || p >= S(1)) throw ParameterError("dropout: rate must lie in [0, 1)");
  if (p == S(0)) return x;
  const auto& xv = x.value();
  Mat<S> mask(xv.rows(), xv.cols());
  const S keep_scale = S(1) / (S(1) - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? S(0) : keep_scale;
  }
  Mat<S> out = xv.cwiseProduct(mask);
  const int ix = x.id();
  return x.graph().record(x.shape(), std::move(out), {ix},
                          [ix, mask = std::move(mask)](Graph<S>& g, const Mat<S>& dy) {
                            g.accumulate(ix, dy.cwiseProduct(mask));
                          });
}

template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> targets, int ignore_index) {
  const auto& lv = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  Mat<S> probs = lv;
  softmax_rows_inplace(probs);
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= lv.cols()) {
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " outside " +
                           std::to_string(lv.cols()) + " classes");
    }
    // log-sum-exp form keeps the value finite for confident predictions.
    const S m = lv.row(r).maxCoeff();
    const S lse = m + std::log((lv.row(r).array() - m).exp().sum());
    total += static_cast<double>(lse - lv(r, t));
    ++count;
  }
  const S loss = count ? static_cast<S>(total / count) : S(0);
  std::vector<int> tg(targets.begin(), targets.end());
  const int il = logits.id();
  return logits.graph().record(
      {1}, Mat<S>::Constant(1, 1, loss), {il},
      [il, count, ignore_index, tg = std::move(tg), probs = std::move(probs)](Graph<S>& g,
                                                                              const Mat<S>& dy) {
        if (count == 0) return;
        Mat<S> d = probs;
        for (Eigen::Index r = 0; r < d.rows(); ++r) {
          const int t = tg[static_cast<std::size_t>(r)];
          if (t == ignore_index) {
            d.row(r).setZero();
          } else {
            d(r, t) -= S(1);
          }
        }
        g.accumulate(il, d * (dy(0, 0) / S(count)));
      });
}

template <typename S>
Var<S> additive_attention(Var<S> enc_proj, Var<S> dec_proj, Var<S> v, Var<S> enc_out,
                          std::span<const std::uint8_t> mask, int batch, RowMatrix<S>* weights) {
  const auto& ep = enc_proj.value();
  const auto& dp = dec_proj.value();
  const auto& vv = v.value();
  const auto& eo = enc_out.value();
  const auto units = ep.cols();
  if (batch <= 0 || ep.rows() % batch != 0 || dp.rows() != batch || dp.cols() != units ||
      vv.size() != units || eo.rows() != ep.rows() ||
      static_cast<Eigen::Index>(mask.size()) != ep.rows()) {
    throw DimensionError("additive_attention: inconsistent shapes enc_proj " +
                         shape_string(enc_proj.shape()) + ", dec_proj " +
                         shape_string(dec_proj.shape()) + ", v " + shape_string(v.shape()) +
                         ", enc_out " + shape_string(enc_out.shape()));
  }
  const int steps = static_cast<int>(ep.rows() / batch);
  const Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> vcol(vv.data(), units);

  Mat<S> u(ep.rows(), units);
  Mat<S> w = Mat<S>::Zero(batch, steps);
  for (int b = 0; b < batch; ++b) {
    S best = -std::numeric_limits<S>::infinity();
    bool any = false;
    for (int t = 0; t < steps; ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(t) * batch + b;
      u.row(r) = (ep.row(r) + dp.row(b)).array().tanh();
      if (!mask[static_cast<std::size_t>(r)]) continue;
      const S score = u.row(r).dot(vcol.transpose());
      w(b, t) = score;
      best = any ? std::max(best, score) : score;
      any = true;
    }
    if (!any) {
      throw ContractError("additive_attention: every position of batch row " +
                          std::to_string(b) + " is masked");
    }
    S z = 0;
    for (int t = 0; t < steps; ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(t) * batch + b;
      if (mask[static_cast<std::size_t>(r)]) {
        w(b, t) = std::exp(w(b, t) - best);
        z += w(b, t);
      } else {
        w(b, t) = 0;
      }
    }
    w.row(b) /= z;
  }
  Mat<S> ctx = Mat<S>::Zero(batch, eo.cols());
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      const S wt = w(b, t);
      if (wt != S(0)) ctx.row(b) += wt * eo.row(static_cast<Eigen::Index>(t) * batch + b);
    }
  }
  if (weights) *weights = w;

  const int iep = enc_proj.id(), idp = dec_proj.id(), iv = v.id(), ieo = enc_out.id();
  return enc_proj.graph().record(
      {batch, static_cast<int>(eo.cols())}, std::move(ctx), {iep, idp, iv, ieo},
      [=, u = std::move(u), w = std::move(w)](Graph<S>& g, const Mat<S>& dy) {
        const auto& eo = g.value(ieo);
        const auto& vv = g.value(iv);
        const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> vrow(vv.data(), units);
        if (g.wants_grad(ieo)) {
          Mat<S> deo = Mat<S>::Zero(eo.rows(), eo.cols());
          for (int t = 0; t < steps; ++t) {
            for (int b = 0; b < batch; ++b) {
              deo.row(static_cast<Eigen::Index>(t) * batch + b) = w(b, t) * dy.row(b);
            }
          }
          g.accumulate(ieo, deo);
        }
        // dscore(b, t) = w (dw - sum_t' w dw).
        Mat<S> ds(batch, steps);
        for (int b = 0; b < batch; ++b) {
          S acc = 0;
          for (int t = 0; t < steps; ++t) {
            const S dw = dy.row(b).dot(eo.row(static_cast<Eigen::Index>(t) * batch + b));
            ds(b, t) = dw;
            acc += w(b, t) * dw;
          }
          for (int t = 0; t < steps; ++t) ds(b, t) = w(b, t) * (ds(b, t) - acc);
        }
        Mat<S> dpre(u.rows(), units);
        Mat<S> dv = Mat<S>::Zero(1, units);
        for (int t = 0; t < steps; ++t) {
          for (int b = 0; b < batch; ++b) {
            const Eigen::Index r = static_cast<Eigen::Index>(t) * batch + b;
            const S s = ds(b, t);
            dv += s * u.row(r);
            dpre.row(r) = s * (vrow.array() * (S(1) - u.row(r).array().square())).matrix();
          }
        }
        if (g.wants_grad(iv)) {
          g.accumulate(iv, Eigen::Map<const Mat<S>>(dv.data(), vv.rows(), vv.cols()));
        }
        if (g.wants_grad(iep)) g.accumulate(iep, dpre);
        if (g.wants_grad(idp)) {
          Mat<S> ddp = Mat<S>::Zero(batch, units);
          for (int t = 0; t < steps; ++t) {
            ddp += dpre.middleRows(static_cast<Eigen::Index>(t) * batch, batch);
          }
          g.accumulate(idp, ddp);
        }
      });
}

template <typename S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, int batch, int heads,
                            std::span<const std::uint8_t> key_mask, bool causal,
                            RowMatrix<S>* weights) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const auto dim = qv.cols();
  if (batch <= 0 || heads <= 0 || dim % heads != 0 || kv.cols() != dim || vv.cols() != dim ||
      qv.rows() % batch != 0 || kv.rows() % batch != 0 || vv.rows() != kv.rows() ||
      static_cast<Eigen::Index>(key_mask.size()) != kv.rows()) {
    throw DimensionError("multi_head_attention: inconsistent shapes q " + shape_string(q.shape()) +
                         ", k " + shape_string(k.shape()) + ", v " + shape_string(v.shape()) +
                         " for batch " + std::to_string(batch) + ", heads " +
                         std::to_string(heads));
  }
  const int tq = static_cast<int>(qv.rows() / batch);
  const int tk = static_cast<int>(kv.rows() / batch);
  if (causal && tq != tk) throw DimensionError("multi_head_attention: causal mask needs Tq == Tk");
  const int hd = static_cast<int>(dim / heads);
  const S scale_factor = S(1) / std::sqrt(static_cast<S>(hd));

  // probs holds one Tq x Tk block per (batch, head) pair.
  Mat<S> probs = Mat<S>::Zero(static_cast<Eigen::Index>(batch) * heads * tq, tk);
  Mat<S> out(qv.rows(), dim);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = qv.block(static_cast<Eigen::Index>(b) * tq, h * hd, tq, hd);
      const auto kb = kv.block(static_cast<Eigen::Index>(b) * tk, h * hd, tk, hd);
      const auto vb = vv.block(static_cast<Eigen::Index>(b) * tk, h * hd, tk, hd);
      auto p = probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * tq, tq);
      p.noalias() = (qb * kb.transpose()) * scale_factor;
      for (int i = 0; i < tq; ++i) {
        S best = -std::numeric_limits<S>::infinity();
        for (int j = 0; j < tk; ++j) {
          const bool keep = key_mask[static_cast<std::size_t>(b) * tk + j] && (!causal || j <= i);
          if (keep) best = std::max(best, p(i, j));
        }
        if (best == -std::numeric_limits<S>::infinity()) {
          throw ContractError("multi_head_attention: query " + std::to_string(i) +
                              " of batch row " + std::to_string(b) + " has no visible key");
        }
        S z = 0;
        for (int j = 0; j < tk; ++j) {
          const bool keep = key_mask[static_cast<std::size_t>(b) * tk + j] && (!causal || j <= i);
          p(i, j) = keep ? std::exp(p(i, j) - best) : S(0);
          z += p(i, j);
        }
        p.row(i) /= z;
      }
      out.block(static_cast<Eigen::Index>(b) * tq, h * hd, tq, hd).noalias() = p * vb;
    }
  }
  if (weights) *weights = probs;

  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph().record(
      q.shape(), std::move(out), {iq, ik, iv},
      [=, probs = std::move(probs)](Graph<S>& g, const Mat<S>& dy) {
        const auto& qv = g.value(iq);
        const auto& kv = g.value(ik);
        const auto& vv = g.value(iv);
        Mat<S> dq = Mat<S>::Zero(qv.rows(), dim);
        Mat<S> dk = Mat<S>::Zero(kv.rows(), dim);
        Mat<S> dv = Mat<S>::Zero(vv.rows(), dim);
        for (int b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const auto qb = qv.block(static_cast<Eigen::Index>(b) * tq, h * hd, tq, hd);
            const auto kb = kv.block(static_cast<Eigen::Index>(b) * tk, h * hd, tk, hd);
            const auto vb = vv.block(static_cast<Eigen::Index>(b) * tk, h * hd, tk, hd);
            const auto p = probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * tq, tq);
            const auto go = dy.block(static_cast<Eigen::Index>(b) * tq, h * hd, tq, hd);
            dv.block(static_cast<Eigen::Index>(b) * tk, h * hd, tk, hd).noalias() +=
                p.transpose() * go;
            Mat<S> dp = go * vb.transpose();
            Mat<S> dsc = softmax_rows_backward<S>(Mat<S>(p), dp) * scale_factor;
            dq.block(static_cast<Eigen::Index>(b) * tq, h * hd, tq, hd).noalias() += dsc * kb;
            dk.block(static_cast<Eigen::Index>(b) * tk, h * hd, tk, hd).noalias() +=
                dsc.transpose() * qb;
          }
        }
        g.accumulate(iq, dq);
        g.accumulate(ik, dk);
        g.accumulate(iv, dv);
      });
}

#define FLUENCYGAN_INSTANTIATE_OPS(S)                                                        \
  template Var<S> matmul<S>(Var<S>, Var<S>);                                                 \
  template Var<S> add<S>(Var<S>, Var<S>);                                                    \
  template Var<S> sub<S>(Var<S>, Var<S>);                                                    \
  template Var<S> mul<S>(Var<S>, Var<S>);                                                    \
  template Var<S> div<S>(Var<S>, Var<S>);                                                    \
  template Var<S> scale<S>(Var<S>, S);                                                       \
  template Var<S> add_scalar<S>(Var<S>, S);                                                  \
  template Var<S> tanh<S>(Var<S>);                                                           \
  template Var<S> sigmoid<S>(Var<S>);                                                        \
  template Var<S> relu<S>(Var<S>);                                                           \
  template Var<S> log<S>(Var<S>);                                                            \
  template Var<S> exp<S>(Var<S>);                                                            \
  template Var<S> clamp<S>(Var<S>, S, S);                                                    \
  template Var<S> sum<S>(Var<S>);                                                            \
  template Var<S> mean<S>(Var<S>);                                                           \
  template Var<S> softmax<S>(Var<S>, int);                                                   \
  template Var<S> gumbel_softmax<S>(Var<S>, S, const Tensor<S>&);                            \
  template Tensor<S> sample_gumbel<S>(const Shape&, Rng&);                                   \
  template Var<S> conv1d<S>(Var<S>, Var<S>, Var<S>);                                         \
  template Var<S> max_pool_over_time<S>(Var<S>);                                             \
  template Var<S> concat<S>(const std::vector<Var<S>>&, int);                                \
  template Var<S> slice_cols<S>(Var<S>, int, int);                                           \
  template Var<S> slice_rows<S>(Var<S>, int, int);                                           \
  template Var<S> gather_rows<S>(Var<S>, std::span<const int>);                              \
  template Var<S> reshape<S>(Var<S>, Shape);                                                 \
  template Var<S> embedding_lookup<S>(Var<S>, std::span<const int>);                         \
  template Var<S> embedding_lookup<S>(Var<S>, Var<S>);                                       \
  template Var<S> layer_norm<S>(Var<S>, Var<S>, Var<S>, S);                                  \
  template Var<S> dropout<S>(Var<S>, S, Rng&);                                               \
  template Var<S> cross_entropy<S>(Var<S>, std::span<const int>, int);                       \
  template Var<S> additive_attention<S>(Var<S>, Var<S>, Var<S>, Var<S>,                      \
                                        std::span<const std::uint8_t>, int, RowMatrix<S>*);  \
  template Var<S> multi_head_attention<S>(Var<S>, Var<S>, Var<S>, int, int,                  \
                                          std::span<const std::uint8_t>, bool, RowMatrix<S>*);

FLUENCYGAN_INSTANTIATE_OPS(float)
FLUENCYGAN_INSTANTIATE_OPS(double)

}  // namespace fluencygan
