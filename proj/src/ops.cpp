#include "docmem/ops.hpp"

#include <cmath>
#include <limits>

namespace docmem {

namespace {

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                     " vs " + shape_string(b.rows(), b.cols()));
  }
}

template <typename Scalar>
using NodeT = detail::Node<Scalar>;

template <typename Scalar>
bool wants(const NodeT<Scalar>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.rows(), a.cols()) + " x " +
                     shape_string(b.rows(), b.cols()));
  }
  Matrix<Scalar> out = a.value() * b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](NodeT<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: inner extents differ, " + shape_string(a.rows(), a.cols()) +
                     " x " + shape_string(b.rows(), b.cols()) + "^T");
  }
  Matrix<Scalar> out = a.value() * b.value().transpose();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](NodeT<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value);
    if (pb.requires_grad) pb.accumulate(self.grad.transpose() * pa.value);
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  return Tensor<Scalar>::from_op(std::move(out), {a}, [](NodeT<Scalar>& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("add", a, b);
  Matrix<Scalar> out = a.value() + b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](NodeT<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("sub", a, b);
  Matrix<Scalar> out = a.value() - b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](NodeT<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(-self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> cwise_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("cwise_product", a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](NodeT<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  Matrix<Scalar> out = a.value() * factor;
  return Tensor<Scalar>::from_op(std::move(out), {a}, [factor](NodeT<Scalar>& self) {
    self.parents[0]->accumulate(self.grad * factor);
  });
}

template <typename Scalar>
Tensor<Scalar> passthrough(const Tensor<Scalar>& a) {
  return Tensor<Scalar>::from_op(a.value(), {a}, [](NodeT<Scalar>& self) { self.parents[0]->accumulate(self.grad); });
}

template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected [1," + std::to_string(a.cols()) + "] row, got " +
                     shape_string(row.rows(), row.cols()));
  }
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return Tensor<Scalar>::from_op(std::move(out), {a, row}, [](NodeT<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& a, const Matrix<Scalar>& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw ShapeError("add_constant: shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(c.rows(), c.cols()));
  }
  Matrix<Scalar> out = a.value() + c;
  return Tensor<Scalar>::from_op(std::move(out), {a}, [](NodeT<Scalar>& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return Tensor<Scalar>::from_op(std::move(out), {a}, [](NodeT<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate((p.value.array() > Scalar(0)).select(self.grad, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1 for rank-2 tensors");
  const Matrix<Scalar>& v = x.value();
  if (!v.allFinite()) {
    // -inf is a legal mask value; NaN and +inf are not.
    if ((v.array().isNaN() || v.array() == std::numeric_limits<Scalar>::infinity()).any()) {
      throw NumericError("softmax: non-finite input");
    }
  }
  Matrix<Scalar> out(v.rows(), v.cols());
  if (axis == 1) {
    for (Index r = 0; r < v.rows(); ++r) {
      const Scalar m = v.row(r).maxCoeff();
      if (m == -std::numeric_limits<Scalar>::infinity()) throw NumericError("softmax: fully masked row");
      out.row(r) = (v.row(r).array() - m).exp().matrix();
      out.row(r) /= out.row(r).sum();
    }
  } else {
    for (Index c = 0; c < v.cols(); ++c) {
      const Scalar m = v.col(c).maxCoeff();
      if (m == -std::numeric_limits<Scalar>::infinity()) throw NumericError("softmax: fully masked column");
      out.col(c) = (v.col(c).array() - m).exp().matrix();
      out.col(c) /= out.col(c).sum();
    }
  }
  return Tensor<Scalar>::from_op(std::move(out), {x}, [axis](NodeT<Scalar>& self) {
    const Matrix<Scalar>& y = self.value;
    const Matrix<Scalar>& g = self.grad;
    Matrix<Scalar> gy = g.cwiseProduct(y);
    if (axis == 1) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
      self.parents[0]->accumulate(gy - (y.array().colwise() * dots.array()).matrix());
    } else {
      RowVector<Scalar> dots = gy.colwise().sum();
      self.parents[0]->accumulate(gy - (y.array().rowwise() * dots.array()).matrix());
    }
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          double eps) {
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw ShapeError("layer_norm: gamma/beta must be [1," + std::to_string(n) + "], got " +
                     shape_string(gamma.rows(), gamma.cols()) + " and " + shape_string(beta.rows(), beta.cols()));
  }
  const Matrix<Scalar>& v = x.value();
  Matrix<Scalar> xhat(v.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(v.rows());
  for (Index r = 0; r < v.rows(); ++r) {
    const Scalar mu = v.row(r).mean();
    const Scalar var = (v.row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + Scalar(eps));
    xhat.row(r) = (v.row(r).array() - mu) * inv_std(r);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return Tensor<Scalar>::from_op(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n](NodeT<Scalar>& self) {
        const Matrix<Scalar>& g = self.grad;
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) pg.accumulate(g.cwiseProduct(xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(g.colwise().sum());
        if (px.requires_grad) {
          Matrix<Scalar> gx = (g.array().rowwise() * pg.value.row(0).array()).matrix();
          Matrix<Scalar> dx(gx.rows(), n);
          for (Index r = 0; r < gx.rows(); ++r) {
            const Scalar mean_g = gx.row(r).mean();
            const Scalar mean_gx = gx.row(r).cwiseProduct(xhat.row(r)).mean();
            dx.row(r) = inv_std(r) * (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
          }
          px.accumulate(dx);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return Tensor<Scalar>::from_op(std::move(out), {table}, [idx = std::move(idx)](NodeT<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) p.grad.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                     shape_string(a.rows(), a.cols()));
  }
  Matrix<Scalar> out = a.value().middleCols(start, count);
  return Tensor<Scalar>::from_op(std::move(out), {a}, [start, count](NodeT<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
    p.grad.middleCols(start, count) += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                     shape_string(a.rows(), a.cols()));
  }
  Matrix<Scalar> out = a.value().middleRows(start, count);
  return Tensor<Scalar>::from_op(std::move(out), {a}, [start, count](NodeT<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
    p.grad.middleRows(start, count) += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return Tensor<Scalar>::from_op(std::move(out), parts, [offsets = std::move(offsets)](NodeT<Scalar>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (p.requires_grad) p.accumulate(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return Tensor<Scalar>::from_op(std::move(out), parts, [offsets = std::move(offsets)](NodeT<Scalar>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (p.requires_grad) p.accumulate(self.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return Tensor<Scalar>::from_op(std::move(out), {a}, [](NodeT<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate(Matrix<Scalar>::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar inv = Scalar(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : Scalar(0);
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  return Tensor<Scalar>::from_op(std::move(out), {a}, [mask = std::move(mask)](NodeT<Scalar>& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(mask));
  });
}

template <typename Scalar>
Matrix<Scalar> log_softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    const Scalar lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets, double smoothing,
                             std::optional<int> ignore_id) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " logit rows");
  }
  const Index vocab = logits.cols();
  Matrix<Scalar> logp = log_softmax_rows(logits.value());
  // Smoothed target distribution q; loss = -sum q * log p per row.
  Matrix<Scalar> q = Matrix<Scalar>::Zero(logits.rows(), vocab);
  Index counted = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (ignore_id && t == *ignore_id) continue;
    if (t < 0 || t >= vocab) throw std::out_of_range("cross_entropy: target id " + std::to_string(t));
    q.row(r).setConstant(Scalar(smoothing / static_cast<double>(vocab)));
    q(r, t) += Scalar(1.0 - smoothing);
    ++counted;
  }
  if (counted == 0) throw UsageError("cross_entropy: no scored targets");
  const Scalar norm = Scalar(1) / static_cast<Scalar>(counted);
  Matrix<Scalar> out(1, 1);
  // q * logp with q == 0 contributes exactly 0 even where logp is very negative.
  out(0, 0) = -(q.array() * logp.array()).sum() * norm;
  if (smoothing > 0) {
    // Subtract the entropy of q so a perfect prediction scores 0.
    Scalar h = 0;
    for (Index i = 0; i < q.size(); ++i) {
      const Scalar qi = q.data()[i];
      if (qi > 0) h -= qi * std::log(qi);
    }
    out(0, 0) -= h * norm;
  }
  Matrix<Scalar> probs = logp.array().exp().matrix();
  return Tensor<Scalar>::from_op(std::move(out), {logits},
                                 [probs = std::move(probs), q = std::move(q), norm](NodeT<Scalar>& self) {
                                   Matrix<Scalar> g = probs;
                                   for (Index r = 0; r < g.rows(); ++r) {
                                     if (q.row(r).sum() == Scalar(0)) g.row(r).setZero();
                                   }
                                   g -= q;
                                   self.parents[0]->accumulate(g * (self.grad(0, 0) * norm));
                                 });
}

#define DOCMEM_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> matmul_transposed(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> transpose(const Tensor<S>&);                                                  \
  template Tensor<S> operator+(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> operator-(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> cwise_product(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> scale(const Tensor<S>&, S);                                                   \
  template Tensor<S> passthrough(const Tensor<S>&);                                                 \
  template Tensor<S> add_row(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> add_constant(const Tensor<S>&, const Matrix<S>&);                             \
  template Tensor<S> relu(const Tensor<S>&);                                                       \
  template Tensor<S> softmax(const Tensor<S>&, int);                                               \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);     \
  template Tensor<S> gather_rows(const Tensor<S>&, std::span<const int>);                          \
  template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                                   \
  template Tensor<S> slice_rows(const Tensor<S>&, Index, Index);                                   \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                                   \
  template Tensor<S> concat_rows(const std::vector<Tensor<S>>&);                                   \
  template Tensor<S> sum(const Tensor<S>&);                                                        \
  template Tensor<S> mean(const Tensor<S>&);                                                       \
  template Tensor<S> dropout(const Tensor<S>&, double, std::mt19937_64&);                          \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>, double, std::optional<int>); \
  template Matrix<S> log_softmax_rows(const Matrix<S>&);

DOCMEM_INSTANTIATE_OPS(float)
DOCMEM_INSTANTIATE_OPS(double)

#undef DOCMEM_INSTANTIATE_OPS

}  // namespace docmem
