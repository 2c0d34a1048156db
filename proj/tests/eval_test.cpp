#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "kgvem/eval.hpp"
#include "test_util.hpp"

namespace kgvem {
namespace {

TEST(FilteredRank, TiesCountAgainstTarget) {
  // Target 0 ties with 2 and 3, loses to 1; 4 is filtered out.
  std::vector<double> s{0.5, 0.9, 0.5, 0.5, 0.8, 0.1};
  std::vector<EntityId> f{0, 4};
  EXPECT_EQ(filtered_rank(s, 0, f), 4u);
  std::vector<EntityId> only{0};
  EXPECT_EQ(filtered_rank(s, 0, only), 5u);
  EXPECT_EQ(filtered_rank(s, 1, std::vector<EntityId>{1}), 1u);
  EXPECT_EQ(filtered_rank(s, 5, std::vector<EntityId>{5}), 6u);
}

TEST(FilteredRank, AllEqualScoresGiveWorstRank) {
  std::vector<double> s(7, 0.0);
  EXPECT_EQ(filtered_rank(s, 3, std::vector<EntityId>{3}), 7u);
  EXPECT_EQ(filtered_rank(s, 3, std::vector<EntityId>{0, 1, 3}), 5u);
}

TEST(FilteredRank, RejectsTargetOutsideFilterAndNonFinite) {
  std::vector<double> s{1.0, 2.0};
  EXPECT_THROW(filtered_rank(s, 0, std::vector<EntityId>{1}), Error);
  EXPECT_THROW(filtered_rank(s, 2, std::vector<EntityId>{2}), Error);
  s[1] = std::nan("");
  EXPECT_THROW(filtered_rank(s, 0, std::vector<EntityId>{0}), NumericError);
}

// Independent brute-force rank: sort candidate list descending with the
// target placed after every equal score.
std::size_t brute_rank(const std::vector<double>& s, EntityId target,
                       const std::vector<EntityId>& filter) {
  std::vector<std::pair<double, int>> cand;
  for (EntityId t = 0; t < s.size(); ++t) {
    if (t != target && std::find(filter.begin(), filter.end(), t) != filter.end()) continue;
    cand.push_back({s[t], t == target ? 0 : 1});
  }
  std::sort(cand.begin(), cand.end(), [](auto a, auto b) {
    return a.first != b.first ? a.first > b.first : a.second > b.second;
  });
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (cand[i].second == 0) return i + 1;
  }
  return 0;
}

TEST(FilteredRank, MatchesBruteForceOnTieHeavyScores) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    std::uniform_int_distribution<int> level(0, 3);
    std::vector<double> s(n);
    for (double& v : s) v = 0.25 * level(rng);
    const auto target = static_cast<EntityId>(rng() % n);
    std::vector<EntityId> filter{target};
    for (EntityId t = 0; t < n; ++t) {
      if (t != target && rng() % 3 == 0) filter.push_back(t);
    }
    std::sort(filter.begin(), filter.end());
    EXPECT_EQ(filtered_rank(s, target, filter), brute_rank(s, target, filter));
  }
}

TEST(FilteredRank, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 10;
    std::vector<double> s(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(normal(rng));  // rounding forces ties
      t[i] = std::exp(0.5 * s[i]) + s[i] * s[i] * s[i];
    }
    const auto target = static_cast<EntityId>(rng() % n);
    std::vector<EntityId> filter{target};
    EXPECT_EQ(filtered_rank(s, target, filter), filtered_rank(t, target, filter));
  }
}

// Independent evaluation: scores from the extended-precision oracle,
// ranks by brute force, metrics by direct averaging.
TEST(Evaluate, MatchesBruteForceAndDecomposesIntoTailAndHeadQueries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ne = 3 + rng() % 8, nr = 2;
    Parameters p = testing::random_params({trial % 2 ? SpaceKind::Complex : SpaceKind::Real, 3}, ne,
                                          2 * nr, rng, 1.0);
    std::uniform_int_distribution<EntityId> e(0, static_cast<EntityId>(ne - 1));
    std::uniform_int_distribution<RelationId> r(0, nr - 1);
    std::vector<Triple> raw_train(10), raw_test(6);
    for (auto& t : raw_train) t = {e(rng), r(rng), e(rng)};
    for (auto& t : raw_test) t = {e(rng), r(rng), e(rng)};
    Dataset ds;
    ds.num_entities = ne;
    ds.num_relations = nr;
    ds.train = augment_reciprocal(raw_train, nr);
    ds.test = augment_reciprocal(raw_test, nr);
    const FilterIndex filter = FilterIndex::build(ds);

    std::vector<double> rr;
    for (const Triple& q : ds.test) {
      std::vector<double> s(ne);
      for (EntityId t = 0; t < ne; ++t) {
        s[t] = static_cast<double>(testing::oracle_score(p, q.head, q.relation, t));
      }
      auto fs = filter.tails(q.head, q.relation);
      rr.push_back(1.0 / static_cast<double>(
                             brute_rank(s, q.tail, std::vector<EntityId>(fs.begin(), fs.end()))));
    }
    const std::vector<int> ks{1, 3, 10, static_cast<int>(ne)};
    EvalReport rep = evaluate(p, ds.test, filter, ks);
    double mean_rr = 0.0;
    for (double v : rr) mean_rr += v;
    mean_rr /= static_cast<double>(rr.size());
    EXPECT_NEAR(rep.mrr, mean_rr, 1e-12);
    EXPECT_GT(rep.mrr, 0.0);
    EXPECT_LE(rep.mrr, 1.0);
    EXPECT_LE(rep.hits_at[1], rep.hits_at[3]);
    EXPECT_LE(rep.hits_at[3], rep.hits_at[10]);
    EXPECT_DOUBLE_EQ(rep.hits_at[static_cast<int>(ne)], 1.0);

    // Forward and reciprocal halves averaged separately.
    const std::size_t half = raw_test.size();
    std::span<const Triple> all(ds.test);
    const double fwd = evaluate(p, all.subspan(0, half), filter).mrr;
    const double inv = evaluate(p, all.subspan(half), filter).mrr;
    EXPECT_NEAR(rep.mrr, 0.5 * (fwd + inv), 1e-12);
  }
}

TEST(SummarizeRanks, MrrAndHits) {
  std::vector<std::size_t> ranks{1, 4};
  std::vector<int> ks{1, 3, 10};
  EvalReport r = summarize_ranks(ranks, ks);
  EXPECT_DOUBLE_EQ(r.mrr, 0.625);
  EXPECT_DOUBLE_EQ(r.hits_at[1], 0.5);
  EXPECT_DOUBLE_EQ(r.hits_at[3], 0.5);
  EXPECT_DOUBLE_EQ(r.hits_at[10], 1.0);
  EXPECT_EQ(r.n_queries, 2u);
  EXPECT_THROW(summarize_ranks(std::vector<std::size_t>{}, ks), Error);
}

TEST(Evaluate, PerfectModelAndReport) {
  // Entity i points in direction i; relation all ones so tail scores peak at h.
  Parameters p({SpaceKind::Real, 3}, 3, 2);
  for (std::size_t i = 0; i < 3; ++i) p.entities(i, i) = 5.0;
  p.relations.fill(1.0);
  Dataset ds;
  ds.num_entities = 3;
  ds.num_relations = 1;
  ds.test = augment_reciprocal(std::vector<Triple>{{0, 0, 0}, {1, 0, 1}}, 1);
  FilterIndex filter = FilterIndex::build(ds);
  std::vector<RankedQuery> dump;
  EvalReport r = evaluate(p, ds.test, filter, default_hits_ks(), &dump);
  EXPECT_DOUBLE_EQ(r.mrr, 1.0);
  EXPECT_EQ(r.n_queries, 4u);
  ASSERT_EQ(dump.size(), 4u);
  std::ostringstream os;
  write_report(os, r);
  EXPECT_EQ(os.str(), "mrr\t1\nhits@1\t1\nhits@3\t1\nhits@10\t1\nn_queries\t4\n");
  std::ostringstream ds_out;
  write_rank_dump(ds_out, dump);
  EXPECT_EQ(ds_out.str().substr(0, 8), "0\t0\t0\t1\n");
}

TEST(Evaluate, RejectsOutOfRangeQueries) {
  Parameters p({SpaceKind::Real, 2}, 2, 2);
  Dataset ds;
  ds.test = {{0, 0, 5}};
  FilterIndex filter = FilterIndex::build(ds);
  EXPECT_THROW(evaluate(p, ds.test, filter), Error);
}

TEST(BayesAverage, IsDistributionAndReducesToPointWithTinySigma) {
  std::mt19937_64 rng(2);
  Parameters mean = testing::random_params({SpaceKind::Complex, 3}, 8, 4, rng, 1.0);
  VariationalParams q{mean, mean};
  q.log_std.entities.fill(-1.0);
  q.log_std.relations.fill(-1.0);
  auto avg = bayes_average_scores(q, 2, 1, 50, rng);
  double sum = 0.0;
  for (double v : avg) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);

  q.log_std.entities.fill(-60.0);
  q.log_std.relations.fill(-60.0);
  auto sharp = bayes_average_scores(q, 2, 1, 3, rng);
  auto point = tail_probabilities(mean, 2, 1);
  for (std::size_t t = 0; t < 8; ++t) EXPECT_NEAR(sharp[t], point[t], 1e-12);
}

TEST(BayesAverage, SingleSampleAtVanishingSigmaIsPointSoftmax) {
  std::mt19937_64 rng(6);
  Parameters mean = testing::random_params({SpaceKind::Real, 4}, 6, 2, rng, 1.0);
  VariationalParams q{mean, mean};
  q.log_std.entities.fill(-30.0);
  q.log_std.relations.fill(-30.0);
  auto avg = bayes_average_scores(q, 1, 0, 1, rng);
  auto point = tail_probabilities(mean, 1, 0);
  for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(avg[t], point[t], 1e-9);
}

TEST(BayesAverage, SelfConsistentAcrossSampleCounts) {
  std::mt19937_64 rng(7);
  Parameters mean = testing::random_params({SpaceKind::Complex, 2}, 4, 2, rng, 1.0);
  VariationalParams q{mean, mean};
  q.log_std.entities.fill(-0.5);
  q.log_std.relations.fill(-0.5);
  const std::size_t n_small = 10000, n_large = 100000;
  std::mt19937_64 a(1), b(2);
  auto small = bayes_average_scores(q, 0, 1, n_small, a);
  // Reference run one sample at a time so per-coordinate variances are known.
  std::vector<double> sum(4, 0.0), sum_sq(4, 0.0);
  for (std::size_t s = 0; s < n_large; ++s) {
    auto one = bayes_average_scores(q, 0, 1, 1, b);
    for (std::size_t t = 0; t < 4; ++t) sum[t] += one[t], sum_sq[t] += one[t] * one[t];
  }
  for (std::size_t t = 0; t < 4; ++t) {
    const double m = sum[t] / n_large;
    const double var = sum_sq[t] / n_large - m * m;
    const double se = std::sqrt(var / n_small + var / n_large);
    EXPECT_LT(std::abs(small[t] - m), 3.0 * se) << "tail " << t;
  }
}

TEST(EvaluateBayes, DeterministicForSeed) {
  std::mt19937_64 rng(3);
  Parameters mean = testing::random_params({SpaceKind::Real, 3}, 6, 4, rng, 1.0);
  VariationalParams q{mean, mean};
  q.log_std.entities.fill(-1.0);
  q.log_std.relations.fill(-1.0);
  Dataset ds;
  ds.test = testing::random_augmented_triples(6, 2, 6, rng);
  FilterIndex filter = FilterIndex::build(ds);
  EvalReport a = evaluate_bayes(q, ds.test, filter, 10, 7);
  EvalReport b = evaluate_bayes(q, ds.test, filter, 10, 7);
  EXPECT_EQ(a.mrr, b.mrr);
  EXPECT_GT(a.mrr, 0.0);
  EXPECT_LE(a.mrr, 1.0);
}

}  // namespace
}  // namespace kgvem
