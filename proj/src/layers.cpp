#include "docmem/layers.hpp"

#include <cmath>
#include <limits>

namespace docmem {

template <typename Scalar>
bool SentenceStates<Scalar>::fully_masked() const {
  if (length() == 0) return true;
  for (bool p : padding) {
    if (!p) return false;
  }
  return !padding.empty();
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::self: return "self";
    case AttentionKind::cross: return "cross";
    case AttentionKind::update: return "update";
    case AttentionKind::output: return "output";
  }
  return "self";
}

Eigen::MatrixXd AttentionRecord::head_mean() const {
  if (heads.empty()) return {};
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(heads.front().rows(), heads.front().cols());
  for (const auto& h : heads) m += h;
  return m / static_cast<double>(heads.size());
}

template <typename Scalar>
Matrix<Scalar> attention_bias(Index queries, Index keys, const AttentionMask& mask) {
  if (!mask.key_padding.empty() && static_cast<Index>(mask.key_padding.size()) != keys) {
    throw ShapeError("attention mask covers " + std::to_string(mask.key_padding.size()) + " keys, got " +
                     std::to_string(keys));
  }
  Matrix<Scalar> bias = Matrix<Scalar>::Zero(queries, keys);
  const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  for (Index k = 0; k < keys; ++k) {
    if (!mask.key_padding.empty() && mask.key_padding[static_cast<std::size_t>(k)]) bias.col(k).setConstant(ninf);
  }
  if (mask.causal) {
    for (Index q = 0; q < queries; ++q) {
      for (Index k = q + mask.query_offset + 1; k < keys; ++k) bias(q, k) = ninf;
    }
  }
  return bias;
}

template <typename Scalar>
Matrix<Scalar> sinusoidal_pe(Index length, Index d_model) {
  if (d_model % 2 != 0) throw ConfigError("sinusoidal_pe: d_model must be even, got " + std::to_string(d_model));
  Matrix<Scalar> pe(length, d_model);
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe(p, 2 * i) = static_cast<Scalar>(std::sin(angle));
      pe(p, 2 * i + 1) = static_cast<Scalar>(std::cos(angle));
    }
  }
  return pe;
}

template <typename Scalar>
Tensor<Scalar> attend(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                      const Tensor<Scalar>& output, int n_heads, const AttentionMask& mask,
                      const AttentionOptions& opts) {
  if (q.cols() != k.cols() || k.cols() != v.cols()) throw ShapeError("attend: q, k, v widths differ");
  if (k.rows() != v.rows()) {
    throw ShapeError("attend: key/value lengths differ, " + shape_string(k.rows(), k.cols()) + " vs " +
                     shape_string(v.rows(), v.cols()));
  }
  const Index d = q.cols();
  const Index dh = d / n_heads;
  const Matrix<Scalar> bias = attention_bias<Scalar>(q.rows(), k.rows(), mask);
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Tensor<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto probs = softmax(add_constant(scale(matmul_transposed(qh, kh), inv_sqrt), bias), 1);
    if (opts.probs) opts.probs->push_back(probs.value().template cast<double>());
    if (opts.rng) probs = dropout(probs, opts.dropout, *opts.rng);
    heads.push_back(matmul(probs, vh));
  }
  return matmul(n_heads == 1 ? heads.front() : concat_cols(heads), output);
}

template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                    const AttentionWeights<Scalar>& w, int n_heads, const AttentionMask& mask,
                                    const AttentionOptions& opts) {
  if (q.cols() != w.query.rows() || k.cols() != w.key.rows() || v.cols() != w.value.rows()) {
    throw ShapeError("multi_head_attention: inputs must have width " + std::to_string(w.query.rows()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("multi_head_attention: key/value lengths differ, " + std::to_string(k.rows()) + " vs " +
                     std::to_string(v.rows()));
  }
  return attend(matmul(q, w.query), matmul(k, w.key), matmul(v, w.value), w.output, n_heads, mask, opts);
}

template <typename Scalar>
Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const FeedForwardWeights<Scalar>& w) {
  return add_row(matmul(relu(add_row(matmul(x, w.w_in), w.b_in)), w.w_out), w.b_out);
}

template <typename Scalar>
Matrix<Scalar> xavier_uniform(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar>
Matrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar>
AttentionWeights<Scalar> init_attention(int d_model, std::mt19937_64& rng, bool zero_output) {
  AttentionWeights<Scalar> w;
  w.query = Tensor<Scalar>::parameter(xavier_uniform<Scalar>(d_model, d_model, rng));
  w.key = Tensor<Scalar>::parameter(xavier_uniform<Scalar>(d_model, d_model, rng));
  w.value = Tensor<Scalar>::parameter(xavier_uniform<Scalar>(d_model, d_model, rng));
  // Drawn even when zeroed so the rest of the stream does not shift.
  Matrix<Scalar> out = xavier_uniform<Scalar>(d_model, d_model, rng);
  if (zero_output) out.setZero();
  w.output = Tensor<Scalar>::parameter(std::move(out));
  return w;
}

template <typename Scalar>
FeedForwardWeights<Scalar> init_feed_forward(int d_model, int d_ffn, std::mt19937_64& rng) {
  FeedForwardWeights<Scalar> w;
  w.w_in = Tensor<Scalar>::parameter(xavier_uniform<Scalar>(d_model, d_ffn, rng));
  w.b_in = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, d_ffn));
  w.w_out = Tensor<Scalar>::parameter(xavier_uniform<Scalar>(d_ffn, d_model, rng));
  w.b_out = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, d_model));
  return w;
}

template <typename Scalar>
NormWeights<Scalar> init_norm(int d_model) {
  return {Tensor<Scalar>::parameter(Matrix<Scalar>::Ones(1, d_model)),
          Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, d_model))};
}

#define DOCMEM_INSTANTIATE_LAYERS(S)                                                                       \
  template struct SentenceStates<S>;                                                                       \
  template Matrix<S> attention_bias<S>(Index, Index, const AttentionMask&);                                \
  template Matrix<S> sinusoidal_pe<S>(Index, Index);                                                       \
  template Tensor<S> attend(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int,   \
                            const AttentionMask&, const AttentionOptions&);                                \
  template Tensor<S> multi_head_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,            \
                                          const AttentionWeights<S>&, int, const AttentionMask&,           \
                                          const AttentionOptions&);                                        \
  template Tensor<S> feed_forward(const Tensor<S>&, const FeedForwardWeights<S>&);                         \
  template Matrix<S> xavier_uniform<S>(Index, Index, std::mt19937_64&);                                    \
  template Matrix<S> normal_matrix<S>(Index, Index, double, std::mt19937_64&);                             \
  template AttentionWeights<S> init_attention<S>(int, std::mt19937_64&, bool);                             \
  template FeedForwardWeights<S> init_feed_forward<S>(int, int, std::mt19937_64&);                         \
  template NormWeights<S> init_norm<S>(int);

DOCMEM_INSTANTIATE_LAYERS(float)
DOCMEM_INSTANTIATE_LAYERS(double)

#undef DOCMEM_INSTANTIATE_LAYERS

}  // namespace docmem
