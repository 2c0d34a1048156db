#pragma once

// MAP training with adaptive per-coordinate step sizes, minibatched
// per-entity regularizers, and early stopping on validation MRR.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "kgvem/data.hpp"
#include "kgvem/eval.hpp"
#include "kgvem/model.hpp"

namespace kgvem {

struct TrainConfig {
  std::size_t batch_size = 256;
  double learning_rate = 0.1;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::size_t eval_every = 1;
  std::uint64_t rng_seed = 1;
  double init_std = 0.1;
  double adagrad_eps = 1e-8;

  void validate() const {
    if (batch_size == 0) throw Error("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error("learning_rate must be >= 0");
    if (eval_every == 0) throw Error("eval_every must be >= 1");
    if (patience == 0) throw Error("patience must be >= 1");
    if (!(init_std > 0.0)) throw Error("init_std must be positive");
  }
};

inline constexpr double kLambdaFloor = 1e-6;

/// lambda_e = scalar * n_e (and likewise for relations); unseen symbols get `floor`.
inline Hyperparameters conventional_lambda(const FrequencyTable& freq, double scalar, int p,
                                           double floor = kLambdaFloor) {
  if (!(scalar > 0)) throw Error("conventional_lambda: scalar lambda must be positive");
  check_norm_order(p);
  Hyperparameters h;
  h.p = p;
  auto scale = [&](const std::vector<std::uint64_t>& n, std::vector<double>& out) {
    out.resize(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) {
      out[i] = n[i] == 0 ? floor : scalar * static_cast<double>(n[i]);
    }
  };
  scale(freq.entity, h.entity);
  scale(freq.relation, h.relation);
  return h;
}

/// Splits the per-vector regularizer across minibatches. Each occurrence of a
/// symbol in a batch contributes (lambda / (p n)) ||x||_p^p; symbols absent from
/// the training set contribute their full term times |B| / |S'| per batch. Summed
/// over one epoch with frozen parameters this is exactly regularizer_penalty.
class BatchRegularizer {
 public:
  BatchRegularizer(FrequencyTable freq, std::size_t train_size)
      : freq_(std::move(freq)), train_size_(train_size) {
    for (std::size_t e = 0; e < freq_.entity.size(); ++e) {
      if (freq_.entity[e] == 0) orphan_entities_.push_back(e);
    }
    for (std::size_t r = 0; r < freq_.relation.size(); ++r) {
      if (freq_.relation[r] == 0) orphan_relations_.push_back(r);
    }
  }

  static BatchRegularizer for_dataset(const Dataset& ds) {
    return BatchRegularizer(count_frequencies(ds.train, ds.num_entities, ds.num_relations),
                            ds.train.size());
  }

  const FrequencyTable& frequencies() const { return freq_; }
  std::size_t train_size() const { return train_size_; }

  /// Adds scale * (batch regularizer) to grad; returns its value times scale.
  double accumulate(const Parameters& params, const Hyperparameters& lambda,
                    std::span<const Triple> batch, double scale, Gradient& grad) const {
    const int p = lambda.p;
    double loss = 0.0;
    auto entity_term = [&](EntityId e, double weight) {
      loss += accumulate_norm_grad(params.entities.row(e), p, scale * weight,
                                   grad.entities.row(e));
      grad.entity_touched[e] = 1;
    };
    auto relation_term = [&](RelationId r, double weight) {
      loss += accumulate_norm_grad(params.relations.row(r), p, scale * weight,
                                   grad.relations.row(r));
      grad.relation_touched[r] = 1;
    };
    for (const Triple& t : batch) {
      entity_term(t.head, lambda.entity[t.head] / (p * static_cast<double>(freq_.entity[t.head])));
      entity_term(t.tail, lambda.entity[t.tail] / (p * static_cast<double>(freq_.entity[t.tail])));
      relation_term(t.relation, lambda.relation[t.relation] /
                                    (p * static_cast<double>(freq_.relation[t.relation])));
    }
    if (train_size_ > 0) {
      const double share = static_cast<double>(batch.size()) / static_cast<double>(train_size_);
      for (std::size_t e : orphan_entities_) {
        entity_term(static_cast<EntityId>(e), share * lambda.entity[e] / p);
      }
      for (std::size_t r : orphan_relations_) {
        relation_term(static_cast<RelationId>(r), share * lambda.relation[r] / p);
      }
    }
    return loss;
  }

 private:
  FrequencyTable freq_;
  std::size_t train_size_;
  std::vector<std::size_t> orphan_entities_;
  std::vector<std::size_t> orphan_relations_;
};

/// Minibatch objective scale * (softmax loss of batch + batch regularizer),
/// with its gradient added to `grad`.
inline double batch_loss_and_grad(const Parameters& params, const Hyperparameters& lambda,
                                  const BatchRegularizer& reg, std::span<const Triple> batch,
                                  double scale, Gradient& grad) {
  double loss = accumulate_softmax_grad(params, batch, scale, grad);
  loss += reg.accumulate(params, lambda, batch, scale, grad);
  return loss;
}

/// Accumulated squared gradients for every coordinate.
struct OptimizerState {
  Table entities;
  Table relations;
  double eps = 1e-8;

  OptimizerState() = default;
  OptimizerState(const Parameters& shape, double epsilon)
      : entities(shape.num_entities(), shape.space.width()),
        relations(shape.num_relation_ids(), shape.space.width()),
        eps(epsilon) {}
};

namespace detail {

inline void adagrad_rows(Table& param, Table& accum, const Table& grad,
                         const std::vector<std::uint8_t>& touched, double lr, double eps) {
  for (std::size_t i = 0; i < param.rows(); ++i) {
    if (!touched[i]) continue;
    auto x = param.row(i);
    auto a = accum.row(i);
    auto g = grad.row(i);
    for (std::size_t k = 0; k < x.size(); ++k) {
      a[k] += g[k] * g[k];
      x[k] -= lr * g[k] / (std::sqrt(a[k]) + eps);
    }
  }
}

}  // namespace detail

/// One adaptive-gradient step on a minibatch; only touched rows change.
/// Returns the minibatch loss before the update.
inline double sgd_step(Parameters& params, OptimizerState& state, const Hyperparameters& lambda,
                       const BatchRegularizer& reg, std::span<const Triple> batch,
                       const TrainConfig& config, Gradient& scratch) {
  if (batch.empty()) throw Error("sgd_step: empty batch");
  scratch.clear();
  const double loss = batch_loss_and_grad(params, lambda, reg, batch, 1.0, scratch);
  if (!scratch.all_finite()) throw NumericError("sgd_step: non-finite gradient");
  detail::adagrad_rows(params.entities, state.entities, scratch.entities, scratch.entity_touched,
                       config.learning_rate, state.eps);
  detail::adagrad_rows(params.relations, state.relations, scratch.relations,
                       scratch.relation_touched, config.learning_rate, state.eps);
  return loss;
}

inline double sgd_step(Parameters& params, OptimizerState& state, const Hyperparameters& lambda,
                       const BatchRegularizer& reg, std::span<const Triple> batch,
                       const TrainConfig& config) {
  Gradient scratch(params);
  return sgd_step(params, state, lambda, reg, batch, config, scratch);
}

/// i.i.d. N(0, init_std^2) embeddings.
inline Parameters random_parameters(EmbeddingSpace space, std::size_t num_entities,
                                    std::size_t num_relation_ids, double init_std,
                                    std::uint64_t seed) {
  Parameters p(space, num_entities, num_relation_ids);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x696e6974u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, init_std);
  for (double& v : p.entities.data()) v = normal(rng);
  for (double& v : p.relations.data()) v = normal(rng);
  return p;
}

/// Tracks the best validation MRR. Stops once `patience` epochs have passed
/// since the last strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `mrr` is a new best.
  bool observe(std::size_t epoch, double mrr) {
    if (!seen_ || mrr > best_mrr_) {
      seen_ = true;
      best_mrr_ = mrr;
      best_epoch_ = epoch;
      return true;
    }
    return false;
  }

  bool should_stop(std::size_t epoch) const { return seen_ && epoch - best_epoch_ >= patience_; }

  double best_mrr() const { return best_mrr_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  bool seen_ = false;
  double best_mrr_ = -1.0;
  std::size_t best_epoch_ = 0;
};

struct TrainLogEntry {
  std::size_t epoch;
  double train_loss;
  double valid_mrr;
};

struct TrainResult {
  Parameters params;
  std::vector<TrainLogEntry> history;
  std::size_t best_epoch = 0;
};

inline void write_train_log_line(std::ostream& os, const TrainLogEntry& e) {
  os << e.epoch << '\t' << e.train_loss << '\t' << e.valid_mrr << '\n';
}

/// Algorithm: random init, epochs of sgd_step, filtered validation MRR every
/// eval_every epochs; returns the best-MRR snapshot.
inline TrainResult train_map(const Dataset& ds, const Hyperparameters& lambda,
                             EmbeddingSpace space, const TrainConfig& config,
                             std::ostream* log = nullptr) {
  config.validate();
  check_norm_order(lambda.p);
  if (lambda.entity.size() != ds.num_entities || lambda.relation.size() != ds.num_relation_ids()) {
    throw Error("train_map: hyperparameter sizes do not match the dataset");
  }
  TrainResult result;
  Parameters params = random_parameters(space, ds.num_entities, ds.num_relation_ids(),
                                        config.init_std, config.rng_seed);
  result.params = params;
  if (config.max_epochs == 0 || ds.train.empty()) return result;

  const BatchRegularizer reg = BatchRegularizer::for_dataset(ds);
  const FilterIndex filter = FilterIndex::build(ds);
  OptimizerState state(params, config.adagrad_eps);
  Gradient scratch(params);
  EarlyStopping stopper(config.patience);
  if (log) log->precision(10);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochBatches batches(ds.train, config.batch_size, config.rng_seed, epoch);
    double train_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      train_loss += sgd_step(params, state, lambda, reg, batches[b], config, scratch);
    }
    if (epoch % config.eval_every != 0 && epoch != config.max_epochs) continue;
    const double mrr = ds.valid.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : evaluate(params, ds.valid, filter).mrr;
    TrainLogEntry entry{epoch, train_loss, mrr};
    result.history.push_back(entry);
    if (log) write_train_log_line(*log, entry);
    if (ds.valid.empty()) {
      result.params = params;
      result.best_epoch = epoch;
      continue;
    }
    if (stopper.observe(epoch, mrr)) {
      result.params = params;
      result.best_epoch = epoch;
    } else if (stopper.should_stop(epoch)) {
      break;
    }
  }
  return result;
}

}  // namespace kgvem
