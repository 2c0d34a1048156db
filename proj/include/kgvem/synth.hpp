#pragma once

// Synthetic knowledge graphs sampled from the generative model: Gaussian
// embeddings (p = 2 prior), (h, r) from a categorical distribution, and the
// tail from softmax_t f(h, r, t).

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kgvem/data.hpp"
#include "kgvem/model.hpp"

namespace kgvem {

/// Categorical weights over (head, raw relation) pairs, row-major by head.
class HeadRelDistribution {
 public:
  HeadRelDistribution(std::size_t num_entities, std::size_t num_relations,
                      std::vector<double> weights)
      : num_entities_(num_entities), num_relations_(num_relations), weights_(std::move(weights)) {
    if (weights_.size() != num_entities_ * num_relations_) {
      throw Error("HeadRelDistribution: expected N_e * N_r weights");
    }
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error("HeadRelDistribution: negative weight");
      total += w;
    }
    if (!(total > 0.0)) throw Error("HeadRelDistribution: all weights are zero");
    for (double& w : weights_) w /= total;
  }

  /// Zipf-like head marginal (h + 1)^-exponent crossed with uniform relations.
  static HeadRelDistribution zipf(std::size_t num_entities, std::size_t num_relations,
                                  double exponent = 1.0) {
    std::vector<double> w(num_entities * num_relations);
    for (std::size_t h = 0; h < num_entities; ++h) {
      for (std::size_t r = 0; r < num_relations; ++r) {
        w[h * num_relations + r] = std::pow(static_cast<double>(h + 1), -exponent);
      }
    }
    return HeadRelDistribution(num_entities, num_relations, std::move(w));
  }

  static HeadRelDistribution uniform(std::size_t num_entities, std::size_t num_relations) {
    return HeadRelDistribution(num_entities, num_relations,
                               std::vector<double>(num_entities * num_relations, 1.0));
  }

  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }
  const std::vector<double>& weights() const { return weights_; }

  template <typename Rng>
  std::pair<EntityId, RelationId> sample(Rng& rng) const {
    std::discrete_distribution<std::size_t> d(weights_.begin(), weights_.end());
    const std::size_t i = d(rng);
    return {static_cast<EntityId>(i / num_relations_), static_cast<RelationId>(i % num_relations_)};
  }

 private:
  std::size_t num_entities_;
  std::size_t num_relations_;
  std::vector<double> weights_;
};

struct SyntheticGraph {
  Vocab vocab;
  Dataset dataset;
  Parameters truth;
  std::vector<Triple> raw_train, raw_valid, raw_test;
};

/// Entity names are "e<i>", relation names "r<i>".
inline Vocab synthetic_vocab(std::size_t num_entities, std::size_t num_relations) {
  std::vector<std::string> ents, rels;
  for (std::size_t i = 0; i < num_entities; ++i) ents.push_back("e" + std::to_string(i));
  for (std::size_t i = 0; i < num_relations; ++i) rels.push_back("r" + std::to_string(i));
  return Vocab::from_names(std::move(ents), rels);
}

/// Draws embeddings x ~ N(0, 1/lambda) per coordinate, then n_facts i.i.d.
/// facts; splits them 80/10/10 in draw order and augments each split.
/// `lambda` must cover N_e entities and 2 N_r relation ids with p = 2.
inline SyntheticGraph synth_generate(EmbeddingSpace space, const Hyperparameters& lambda,
                                     const HeadRelDistribution& hr_dist, std::size_t n_facts,
                                     std::uint64_t seed) {
  if (lambda.p != 2) throw Error("synth_generate: only p = 2 priors can be sampled");
  const std::size_t Ne = hr_dist.num_entities();
  const std::size_t Nr = hr_dist.num_relations();
  if (lambda.entity.size() != Ne || lambda.relation.size() != 2 * Nr) {
    throw Error("synth_generate: lambda sizes do not match N_e and 2 N_r");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticGraph g;
  g.truth = Parameters(space, Ne, 2 * Nr);
  auto draw_rows = [&](Table& t, const std::vector<double>& lam) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      if (!(lam[i] > 0.0)) throw Error("synth_generate: lambda must be positive");
      const double sd = 1.0 / std::sqrt(lam[i]);
      for (double& v : t.row(i)) v = sd * normal(rng);
    }
  };
  draw_rows(g.truth.entities, lambda.entity);
  draw_rows(g.truth.relations, lambda.relation);

  std::vector<Triple> facts;
  facts.reserve(n_facts);
  std::vector<double> probs(Ne);
  std::discrete_distribution<std::size_t> hr(hr_dist.weights().begin(), hr_dist.weights().end());
  for (std::size_t i = 0; i < n_facts; ++i) {
    const std::size_t idx = hr(rng);
    const auto h = static_cast<EntityId>(idx / Nr);
    const auto r = static_cast<RelationId>(idx % Nr);
    probs = tail_probabilities(g.truth, h, r);
    std::discrete_distribution<std::size_t> tail(probs.begin(), probs.end());
    facts.push_back({h, r, static_cast<EntityId>(tail(rng))});
  }

  const std::size_t n_train = n_facts * 8 / 10;
  const std::size_t n_valid = n_facts / 10;
  g.raw_train.assign(facts.begin(), facts.begin() + n_train);
  g.raw_valid.assign(facts.begin() + n_train, facts.begin() + n_train + n_valid);
  g.raw_test.assign(facts.begin() + n_train + n_valid, facts.end());

  g.vocab = synthetic_vocab(Ne, Nr);
  g.dataset.num_entities = Ne;
  g.dataset.num_relations = Nr;
  g.dataset.train = augment_reciprocal(g.raw_train, Nr);
  g.dataset.valid = augment_reciprocal(g.raw_valid, Nr);
  g.dataset.test = augment_reciprocal(g.raw_test, Nr);
  return g;
}

}  // namespace kgvem
