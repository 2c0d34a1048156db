#pragma once

// DistMult / ComplEx scoring, the tail softmax loss, per-vector p-norm
// priors, and their analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kgvem/data.hpp"
#include "kgvem/error.hpp"

namespace kgvem {

enum class SpaceKind { Real, Complex };

inline const char* to_string(SpaceKind k) { return k == SpaceKind::Real ? "real" : "complex"; }

inline SpaceKind parse_space(const std::string& s) {
  if (s == "real" || s == "distmult") return SpaceKind::Real;
  if (s == "complex" || s == "complex-k" || s == "complex_k") return SpaceKind::Complex;
  throw Error("unknown embedding space '" + s + "' (expected real or complex)");
}

/// Complex vectors are stored as K real parts followed by K imaginary parts.
struct EmbeddingSpace {
  SpaceKind kind = SpaceKind::Real;
  std::size_t dim = 1;  // K

  std::size_t width() const { return kind == SpaceKind::Real ? dim : 2 * dim; }  // K'

  friend bool operator==(const EmbeddingSpace&, const EmbeddingSpace&) = default;
};

/// Row-major dense matrix of doubles.
class Table {
 public:
  Table() = default;
  Table(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Table&, const Table&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Point estimates: entity table (N_e x K') and relation table (2 N_r x K').
struct Parameters {
  EmbeddingSpace space;
  Table entities;
  Table relations;

  Parameters() = default;
  Parameters(EmbeddingSpace s, std::size_t num_entities, std::size_t num_relation_ids)
      : space(s), entities(num_entities, s.width()), relations(num_relation_ids, s.width()) {}

  std::size_t num_entities() const { return entities.rows(); }
  std::size_t num_relation_ids() const { return relations.rows(); }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// One regularizer strength per entity and per relation id, plus the norm order.
struct Hyperparameters {
  std::vector<double> entity;
  std::vector<double> relation;
  int p = 2;

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

inline void check_norm_order(int p) {
  if (p != 2 && p != 3) throw Error("norm order p must be 2 or 3, got " + std::to_string(p));
}

// ---------------------------------------------------------------------------
// Scores

/// sum_k h_k r_k t_k.
inline double score_distmult(std::span<const double> h, std::span<const double> r,
                             std::span<const double> t) {
  double s = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) s += (h[k] * r[k]) * t[k];
  return s;
}

/// sum_k Re[h_k r_k conj(t_k)] on split storage [re..., im...].
inline double score_complex(std::span<const double> h, std::span<const double> r,
                            std::span<const double> t) {
  const std::size_t K = h.size() / 2;
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double a = h[k], b = h[K + k], c = r[k], d = r[K + k];
    s += (a * c - b * d) * t[k];
    s += (a * d + b * c) * t[K + k];
  }
  return s;
}

/// Writes the vector q(h, r) with f(h, r, t) = <q, t>, evaluated in the same
/// order as the pairwise scorers so that all-tail scores agree bit-for-bit.
inline void query_vector(SpaceKind kind, std::span<const double> h, std::span<const double> r,
                         std::span<double> q) {
  if (kind == SpaceKind::Real) {
    for (std::size_t k = 0; k < h.size(); ++k) q[k] = h[k] * r[k];
    return;
  }
  const std::size_t K = h.size() / 2;
  for (std::size_t k = 0; k < K; ++k) {
    const double a = h[k], b = h[K + k], c = r[k], d = r[K + k];
    q[k] = a * c - b * d;
    q[K + k] = a * d + b * c;
  }
}

namespace detail {

// Dot product matching the accumulation order of score_distmult/score_complex.
inline double query_dot(SpaceKind kind, std::span<const double> q, std::span<const double> t) {
  double s = 0.0;
  if (kind == SpaceKind::Real) {
    for (std::size_t k = 0; k < q.size(); ++k) s += q[k] * t[k];
  } else {
    const std::size_t K = q.size() / 2;
    for (std::size_t k = 0; k < K; ++k) {
      s += q[k] * t[k];
      s += q[K + k] * t[K + k];
    }
  }
  return s;
}

// Backpropagates dL/dq into dL/dh and dL/dr (accumulating).
inline void query_backward(SpaceKind kind, std::span<const double> h, std::span<const double> r,
                           std::span<const double> gq, double scale, std::span<double> gh,
                           std::span<double> gr) {
  if (kind == SpaceKind::Real) {
    for (std::size_t k = 0; k < h.size(); ++k) {
      gh[k] += scale * gq[k] * r[k];
      gr[k] += scale * gq[k] * h[k];
    }
    return;
  }
  const std::size_t K = h.size() / 2;
  for (std::size_t k = 0; k < K; ++k) {
    const double a = h[k], b = h[K + k], c = r[k], d = r[K + k];
    const double gre = scale * gq[k], gim = scale * gq[K + k];
    gh[k] += gre * c + gim * d;
    gh[K + k] += -gre * d + gim * c;
    gr[k] += gre * a + gim * b;
    gr[K + k] += -gre * b + gim * a;
  }
}

}  // namespace detail

inline double score(SpaceKind kind, std::span<const double> h, std::span<const double> r,
                    std::span<const double> t) {
  return kind == SpaceKind::Real ? score_distmult(h, r, t) : score_complex(h, r, t);
}

inline double score(const Parameters& params, EntityId h, RelationId r, EntityId t) {
  return score(params.space.kind, params.entities.row(h), params.relations.row(r),
               params.entities.row(t));
}

/// Scores of (h, r, t') for every entity t', written into `out`.
inline void score_all_tails(const Parameters& params, EntityId h, RelationId r,
                            std::span<double> out) {
  std::vector<double> q(params.space.width());
  query_vector(params.space.kind, params.entities.row(h), params.relations.row(r), q);
  for (std::size_t t = 0; t < params.num_entities(); ++t) {
    out[t] = detail::query_dot(params.space.kind, q, params.entities.row(t));
  }
}

inline std::vector<double> score_all_tails(const Parameters& params, EntityId h, RelationId r) {
  std::vector<double> out(params.num_entities());
  score_all_tails(params, h, r, out);
  return out;
}

/// log sum_i exp(x_i) with max subtraction.
inline double log_sum_exp(std::span<const double> x) {
  double m = -HUGE_VAL;
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) throw NumericError("log_sum_exp: non-finite score");
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Categorical tail distribution softmax_t f(h, r, t).
inline std::vector<double> tail_probabilities(const Parameters& params, EntityId h, RelationId r) {
  std::vector<double> s = score_all_tails(params, h, r);
  const double lse = log_sum_exp(s);
  for (double& v : s) v = std::exp(v - lse);
  return s;
}

/// Sum over the batch of -f(h,r,t) + log sum_t' exp f(h,r,t').
inline double tail_softmax_loss(const Parameters& params, std::span<const Triple> batch) {
  std::vector<double> s(params.num_entities());
  double loss = 0.0;
  for (const Triple& tr : batch) {
    score_all_tails(params, tr.head, tr.relation, s);
    loss += log_sum_exp(s) - s[tr.tail];
  }
  if (!std::isfinite(loss)) throw NumericError("tail_softmax_loss: non-finite loss");
  return loss;
}

/// ||x||_p^p over the stored real coordinates.
inline double norm_pp(std::span<const double> x, int p) {
  double s = 0.0;
  if (p == 2) {
    for (double v : x) s += v * v;
  } else {
    for (double v : x) s += std::abs(v) * v * v;
  }
  return s;
}

/// sum_e (lambda_e / p) ||E_e||_p^p + sum_r (lambda_r / p) ||R_r||_p^p.
inline double regularizer_penalty(const Parameters& params, const Hyperparameters& lambda) {
  check_norm_order(lambda.p);
  double s = 0.0;
  for (std::size_t e = 0; e < params.num_entities(); ++e) {
    s += lambda.entity[e] / lambda.p * norm_pp(params.entities.row(e), lambda.p);
  }
  for (std::size_t r = 0; r < params.num_relation_ids(); ++r) {
    s += lambda.relation[r] / lambda.p * norm_pp(params.relations.row(r), lambda.p);
  }
  return s;
}

/// Log prior up to lambda-independent constants:
/// sum over vectors of (K'/p) log lambda - (lambda/p) ||x||_p^p.
inline double log_prior(const Parameters& params, const Hyperparameters& lambda) {
  check_norm_order(lambda.p);
  const double kp = static_cast<double>(params.space.width()) / lambda.p;
  double s = 0.0;
  for (double l : lambda.entity) {
    if (!(l > 0)) throw Error("log_prior: lambda must be positive");
    s += kp * std::log(l);
  }
  for (double l : lambda.relation) {
    if (!(l > 0)) throw Error("log_prior: lambda must be positive");
    s += kp * std::log(l);
  }
  return s - regularizer_penalty(params, lambda);
}

/// The lambda-independent part of the normalized log prior for one vector of
/// width K': -K' [log(2 Gamma(1 + 1/p)) + (1/p) log p].
inline double log_prior_normalizer(std::size_t width, int p) {
  const double inv_p = 1.0 / p;
  return -static_cast<double>(width) *
         (std::log(2.0) + std::lgamma(1.0 + inv_p) + inv_p * std::log(static_cast<double>(p)));
}

/// Full-data loss L = softmax loss over train - log_prior (log P(h,r) omitted).
inline double neg_log_joint(const Parameters& params, const Hyperparameters& lambda,
                            std::span<const Triple> train) {
  return tail_softmax_loss(params, train) - log_prior(params, lambda);
}

// ---------------------------------------------------------------------------
// Gradients

/// Dense gradient buffers with per-row touched flags.
struct Gradient {
  Table entities;
  Table relations;
  std::vector<std::uint8_t> entity_touched;
  std::vector<std::uint8_t> relation_touched;

  Gradient() = default;
  explicit Gradient(const Parameters& shape)
      : entities(shape.num_entities(), shape.space.width()),
        relations(shape.num_relation_ids(), shape.space.width()),
        entity_touched(shape.num_entities(), 0),
        relation_touched(shape.num_relation_ids(), 0) {}

  void clear() {
    entities.fill(0.0);
    relations.fill(0.0);
    std::fill(entity_touched.begin(), entity_touched.end(), 0);
    std::fill(relation_touched.begin(), relation_touched.end(), 0);
  }

  bool all_finite() const {
    auto ok = [](std::span<const double> d) {
      return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
    };
    return ok(entities.data()) && ok(relations.data());
  }
};

/// Adds `scale` * gradient of the tail softmax loss of `batch` to `grad` and
/// returns `scale` * loss. Every entity row is marked touched (all tails enter
/// the softmax normalizer); relation rows only when used.
inline double accumulate_softmax_grad(const Parameters& params, std::span<const Triple> batch,
                                      double scale, Gradient& grad) {
  const SpaceKind kind = params.space.kind;
  const std::size_t W = params.space.width();
  const std::size_t Ne = params.num_entities();
  std::vector<double> q(W), gq(W), s(Ne);
  double loss = 0.0;
  for (const Triple& tr : batch) {
    auto h = params.entities.row(tr.head);
    auto r = params.relations.row(tr.relation);
    query_vector(kind, h, r, q);
    for (std::size_t t = 0; t < Ne; ++t) s[t] = detail::query_dot(kind, q, params.entities.row(t));
    const double lse = log_sum_exp(s);
    loss += lse - s[tr.tail];
    std::fill(gq.begin(), gq.end(), 0.0);
    for (std::size_t t = 0; t < Ne; ++t) {
      const double w = std::exp(s[t] - lse) - (t == tr.tail ? 1.0 : 0.0);
      if (w == 0.0) continue;
      auto et = params.entities.row(t);
      auto gt = grad.entities.row(t);
      for (std::size_t k = 0; k < W; ++k) {
        gq[k] += w * et[k];
        gt[k] += scale * w * q[k];
      }
    }
    detail::query_backward(kind, h, r, gq, scale, grad.entities.row(tr.head),
                           grad.relations.row(tr.relation));
    grad.relation_touched[tr.relation] = 1;
  }
  std::fill(grad.entity_touched.begin(), grad.entity_touched.end(), 1);
  if (!std::isfinite(loss)) throw NumericError("softmax loss is not finite");
  return scale * loss;
}

/// Adds weight * ||x||_p^p to a loss; accumulates its gradient into g.
inline double accumulate_norm_grad(std::span<const double> x, int p, double weight,
                                   std::span<double> g) {
  double s = 0.0;
  if (p == 2) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      s += x[k] * x[k];
      g[k] += weight * 2.0 * x[k];
    }
  } else {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double a = std::abs(x[k]);
      s += a * x[k] * x[k];
      g[k] += weight * 3.0 * a * x[k];
    }
  }
  return weight * s;
}

}  // namespace kgvem
