#pragma once

// Filtered link-prediction metrics (MRR, Hits@k) with point estimates or
// with posterior-averaged predictive probabilities.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "kgvem/data.hpp"
#include "kgvem/model.hpp"
#include "kgvem/variational.hpp"

namespace kgvem {

struct EvalReport {
  double mrr = 0.0;
  std::map<int, double> hits_at;
  std::size_t n_queries = 0;
};

inline const std::vector<int>& default_hits_ks() {
  static const std::vector<int> ks{1, 3, 10};
  return ks;
}

/// 1 + |{t' not in filtered : score[t'] >= score[target]}|. Ties count against
/// the target. `filtered` is sorted and must contain the target.
inline std::size_t filtered_rank(std::span<const double> scores, EntityId target,
                                 std::span<const EntityId> filtered) {
  if (target >= scores.size()) throw Error("filtered_rank: target id out of range");
  if (!std::binary_search(filtered.begin(), filtered.end(), target)) {
    throw Error("filtered_rank: target is not in its own filter set");
  }
  const double threshold = scores[target];
  std::size_t at_least = 0;
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("filtered_rank: non-finite score");
    if (s >= threshold) ++at_least;
  }
  std::size_t filtered_at_least = 0;
  for (EntityId t : filtered) {
    if (t < scores.size() && scores[t] >= threshold) ++filtered_at_least;
  }
  return 1 + at_least - filtered_at_least;
}

inline std::size_t filtered_rank(const Parameters& params, EntityId h, RelationId r, EntityId t,
                                 const FilterIndex& filter) {
  if (h >= params.num_entities() || t >= params.num_entities() || r >= params.num_relation_ids()) {
    throw Error("filtered_rank: invalid id");
  }
  return filtered_rank(score_all_tails(params, h, r), t, filter.tails(h, r));
}

struct RankedQuery {
  Triple triple;
  std::size_t rank;
};

/// MRR and Hits@k from a list of filtered ranks.
inline EvalReport summarize_ranks(std::span<const std::size_t> ranks, std::span<const int> ks) {
  if (ranks.empty()) throw Error("evaluate: empty query set");
  EvalReport rep;
  rep.n_queries = ranks.size();
  double inv = 0.0;
  for (std::size_t r : ranks) inv += 1.0 / static_cast<double>(r);
  rep.mrr = inv / static_cast<double>(ranks.size());
  for (int k : ks) {
    std::size_t hit = 0;
    for (std::size_t r : ranks) hit += r <= static_cast<std::size_t>(k) ? 1 : 0;
    rep.hits_at[k] = static_cast<double>(hit) / static_cast<double>(ranks.size());
  }
  return rep;
}

/// Ranks every query with `scorer(h, r, out)` which fills N_e tail scores.
template <typename Scorer>
EvalReport evaluate_with(Scorer&& scorer, std::size_t num_entities,
                         std::span<const Triple> queries, const FilterIndex& filter,
                         std::span<const int> ks, std::vector<RankedQuery>* dump = nullptr) {
  if (queries.empty()) throw Error("evaluate: empty test set");
  std::vector<double> scores(num_entities);
  std::vector<std::size_t> ranks;
  ranks.reserve(queries.size());
  for (const Triple& q : queries) {
    scorer(q.head, q.relation, std::span<double>(scores));
    ranks.push_back(filtered_rank(scores, q.tail, filter.tails(q.head, q.relation)));
    if (dump) dump->push_back({q, ranks.back()});
  }
  return summarize_ranks(ranks, ks);
}

/// Tail prediction over an augmented split; head queries arrive as inverse
/// relation tail queries.
inline EvalReport evaluate(const Parameters& params, std::span<const Triple> test_augmented,
                           const FilterIndex& filter,
                           std::span<const int> ks = default_hits_ks(),
                           std::vector<RankedQuery>* dump = nullptr) {
  for (const Triple& q : test_augmented) {
    if (q.head >= params.num_entities() || q.tail >= params.num_entities() ||
        q.relation >= params.num_relation_ids()) {
      throw Error("evaluate: query id out of range");
    }
  }
  return evaluate_with(
      [&](EntityId h, RelationId r, std::span<double> out) { score_all_tails(params, h, r, out); },
      params.num_entities(), test_augmented, filter, ks, dump);
}

/// (1/n) sum_s softmax_t f(theta_s) with theta_s = mu + sigma * eps_s.
/// Only the rows for h and r and the entity table are sampled.
template <typename Rng>
void bayes_average_scores(const VariationalParams& q, EntityId h, RelationId r,
                          std::size_t n_samples, Rng& rng, std::span<double> out) {
  if (n_samples == 0) throw Error("bayes_average_scores: n_samples must be >= 1");
  const std::size_t Ne = q.mean.num_entities();
  const std::size_t W = q.space().width();
  const SpaceKind kind = q.space().kind;
  std::normal_distribution<double> normal(0.0, 1.0);
  Table ent(Ne, W);
  std::vector<double> rel(W), qv(W), s(Ne);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    for (std::size_t e = 0; e < Ne; ++e) {
      auto mu = q.mean.entities.row(e);
      auto xi = q.log_std.entities.row(e);
      auto dst = ent.row(e);
      for (std::size_t k = 0; k < W; ++k) dst[k] = mu[k] + std::exp(xi[k]) * normal(rng);
    }
    auto mu = q.mean.relations.row(r);
    auto xi = q.log_std.relations.row(r);
    for (std::size_t k = 0; k < W; ++k) rel[k] = mu[k] + std::exp(xi[k]) * normal(rng);
    query_vector(kind, ent.row(h), rel, qv);
    for (std::size_t t = 0; t < Ne; ++t) s[t] = detail::query_dot(kind, qv, ent.row(t));
    const double lse = log_sum_exp(s);
    for (std::size_t t = 0; t < Ne; ++t) out[t] += std::exp(s[t] - lse);
  }
  for (double& v : out) v /= static_cast<double>(n_samples);
}

template <typename Rng>
std::vector<double> bayes_average_scores(const VariationalParams& q, EntityId h, RelationId r,
                                         std::size_t n_samples, Rng& rng) {
  std::vector<double> out(q.mean.num_entities());
  bayes_average_scores(q, h, r, n_samples, rng, out);
  return out;
}

/// Bayesian prediction mode: ranks by posterior-averaged probabilities.
inline EvalReport evaluate_bayes(const VariationalParams& q, std::span<const Triple> test_augmented,
                                 const FilterIndex& filter, std::size_t n_samples,
                                 std::uint64_t seed, std::span<const int> ks = default_hits_ks()) {
  std::mt19937_64 rng(seed);
  return evaluate_with(
      [&](EntityId h, RelationId r, std::span<double> out) {
        bayes_average_scores(q, h, r, n_samples, rng, out);
      },
      q.mean.num_entities(), test_augmented, filter, ks);
}

inline void write_report(std::ostream& os, const EvalReport& rep) {
  os.precision(17);
  os << "mrr\t" << rep.mrr << '\n';
  for (const auto& [k, v] : rep.hits_at) os << "hits@" << k << '\t' << v << '\n';
  os << "n_queries\t" << rep.n_queries << '\n';
}

inline void write_rank_dump(std::ostream& os, std::span<const RankedQuery> ranks) {
  for (const auto& q : ranks) {
    os << q.triple.head << '\t' << q.triple.relation << '\t' << q.triple.tail << '\t' << q.rank
       << '\n';
  }
}

}  // namespace kgvem
