#pragma once

// Variational EM over per-entity / per-relation regularizer strengths:
// reparameterized E-steps on (mu, xi), coordinate M-steps on lambda,
// ELBO monitoring, and the divergence diagnostics for naive joint MAP.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kgvem/data.hpp"
#include "kgvem/model.hpp"
#include "kgvem/trainer.hpp"
#include "kgvem/variational.hpp"

namespace kgvem {

struct EmConfig {
  std::size_t e_steps = 1000;   // T_E: lambda frozen
  std::size_t em_steps = 4000;  // T_EM: E-step followed by M-step
  double lr_mean = 1e-4;
  double lr_log_std = 1e-4;
  double lr_lambda = 0.1;
  double sigma_init = 0.2;
  std::size_t batch_size = 256;
  std::uint64_t rng_seed = 1;
  std::size_t lambda_hat_samples = 1;
  std::size_t elbo_every = 100;
  std::size_t elbo_samples = 8;
  std::uint64_t elbo_seed = 12345;

  void validate() const {
    if (!(lr_mean >= 0.0) || !(lr_log_std >= 0.0)) throw Error("E-step learning rates must be >= 0");
    if (!(lr_lambda > 0.0 && lr_lambda <= 1.0)) throw Error("lr_lambda must lie in (0, 1]");
    if (!(sigma_init > 0.0)) throw Error("sigma_init must be positive");
    if (batch_size == 0) throw Error("batch_size must be >= 1");
    if (lambda_hat_samples == 0) throw Error("lambda_hat_samples must be >= 1");
  }
};

/// mu <- pretrained, xi <- log(sigma_init).
inline VariationalParams init_variational(const Parameters& pretrained, double sigma_init) {
  if (!(sigma_init > 0.0)) throw Error("init_variational: sigma_init must be positive");
  VariationalParams q{pretrained, pretrained};
  q.log_std.entities.fill(std::log(sigma_init));
  q.log_std.relations.fill(std::log(sigma_init));
  return q;
}

inline bool all_finite(const VariationalParams& q) {
  for (const Table* t : {&q.mean.entities, &q.mean.relations, &q.log_std.entities,
                         &q.log_std.relations}) {
    for (double v : t->data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

struct VariationalGradient {
  Gradient mean;
  Gradient log_std;

  VariationalGradient() = default;
  explicit VariationalGradient(const Parameters& shape) : mean(shape), log_std(shape) {}
};

/// Minibatch loss at theta = mu + e^xi * eps, scaled by `scale`, with
/// dL/dmu = dL/dtheta and dL/dxi = dL/dtheta * e^xi * eps.
inline double noisy_loss(const VariationalParams& q, const Hyperparameters& lambda,
                         const BatchRegularizer& reg, std::span<const Triple> batch,
                         const NoiseDraw& noise, double scale, VariationalGradient& grads) {
  Parameters theta = reparameterize(q, noise);
  grads.mean.clear();
  const double loss = batch_loss_and_grad(theta, lambda, reg, batch, scale, grads.mean);
  if (!std::isfinite(loss) || !grads.mean.all_finite()) {
    throw NumericError("noisy_loss: non-finite loss or gradient");
  }
  grads.log_std = grads.mean;
  auto chain = [](std::span<double> g, std::span<const double> xi, std::span<const double> eps) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= std::exp(xi[i]) * eps[i];
  };
  chain(grads.log_std.entities.data(), q.log_std.entities.data(), noise.entities.data());
  chain(grads.log_std.relations.data(), q.log_std.relations.data(), noise.relations.data());
  return loss;
}

/// mu <- mu - lr_mean * g_mu;  xi <- xi - lr_log_std * (g_xi - 1), on touched rows.
/// The -1 is the gradient of the entropy sum(xi).
inline void estep_update(VariationalParams& q, const VariationalGradient& g, double lr_mean,
                         double lr_log_std) {
  auto update = [&](Table& mu, Table& xi, const Table& gmu, const Table& gxi,
                    const std::vector<std::uint8_t>& touched) {
    for (std::size_t i = 0; i < mu.rows(); ++i) {
      if (!touched[i]) continue;
      auto m = mu.row(i);
      auto x = xi.row(i);
      auto gm = gmu.row(i);
      auto gx = gxi.row(i);
      for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] -= lr_mean * gm[k];
        x[k] -= lr_log_std * (gx[k] - 1.0);
      }
    }
  };
  update(q.mean.entities, q.log_std.entities, g.mean.entities, g.log_std.entities,
         g.mean.entity_touched);
  update(q.mean.relations, q.log_std.relations, g.mean.relations, g.log_std.relations,
         g.mean.relation_touched);
}

inline void estep_update(VariationalParams& q, const VariationalGradient& g,
                         const EmConfig& config) {
  estep_update(q, g, config.lr_mean, config.lr_log_std);
}

/// E|eps|^p for eps ~ N(0, 1): 2^{p/2} Gamma((p + 1) / 2) / sqrt(pi).
inline double standard_normal_abs_moment(int p) {
  return std::pow(2.0, p / 2.0) * std::tgamma((p + 1) / 2.0) / std::sqrt(std::numbers::pi);
}

namespace detail {

// lambda_hat = K' / estimate for every row of a table of moment estimates.
inline std::vector<double> invert_moments(const std::vector<double>& moments, std::size_t width) {
  std::vector<double> out(moments.size());
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (!(moments[i] > 0.0) || !std::isfinite(moments[i])) {
      throw NumericError("lambda_hat: expected norm is zero or non-finite");
    }
    out[i] = static_cast<double>(width) / moments[i];
  }
  return out;
}

// E_q ||x||^2 = sum mu^2 + sigma^2 per row.
inline std::vector<double> second_moments(const Table& mu, const Table& xi) {
  std::vector<double> out(mu.rows());
  for (std::size_t i = 0; i < mu.rows(); ++i) {
    auto m = mu.row(i);
    auto x = xi.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) s += m[k] * m[k] + std::exp(2.0 * x[k]);
    out[i] = s;
  }
  return out;
}

// Adds ||mu + e^xi eps||_p^p per row to `acc`.
inline void add_sampled_norms(const Table& mu, const Table& xi, const Table& eps, int p,
                              std::vector<double>& acc) {
  for (std::size_t i = 0; i < mu.rows(); ++i) {
    auto m = mu.row(i);
    auto x = xi.row(i);
    auto e = eps.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double v = m[k] + std::exp(x[k]) * e[k];
      s += p == 2 ? v * v : std::abs(v) * v * v;
    }
    acc[i] += s;
  }
}

}  // namespace detail

/// Optimal lambda for the current q: 1 / lambda_hat = E_q ||x||_p^p / K'.
/// p = 2 uses the closed-form second moment; p = 3 averages `noises` (which
/// must be non-empty) as reparameterized samples.
inline Hyperparameters lambda_hat_from_noise(const VariationalParams& q, int p,
                                             std::span<const NoiseDraw> noises) {
  check_norm_order(p);
  const std::size_t W = q.space().width();
  Hyperparameters h;
  h.p = p;
  if (p == 2) {
    h.entity = detail::invert_moments(
        detail::second_moments(q.mean.entities, q.log_std.entities), W);
    h.relation = detail::invert_moments(
        detail::second_moments(q.mean.relations, q.log_std.relations), W);
    return h;
  }
  if (noises.empty()) throw Error("lambda_hat: at least one sample is required");
  std::vector<double> me(q.mean.num_entities(), 0.0), mr(q.mean.num_relation_ids(), 0.0);
  for (const NoiseDraw& n : noises) {
    detail::add_sampled_norms(q.mean.entities, q.log_std.entities, n.entities, p, me);
    detail::add_sampled_norms(q.mean.relations, q.log_std.relations, n.relations, p, mr);
  }
  for (double& v : me) v /= static_cast<double>(noises.size());
  for (double& v : mr) v /= static_cast<double>(noises.size());
  h.entity = detail::invert_moments(me, W);
  h.relation = detail::invert_moments(mr, W);
  return h;
}

template <typename Rng>
Hyperparameters lambda_hat(const VariationalParams& q, int p, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw Error("lambda_hat: n_samples must be >= 1");
  if (p == 2) return lambda_hat_from_noise(q, p, {});
  std::vector<NoiseDraw> noises;
  noises.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) noises.push_back(draw_noise(q.mean, rng));
  return lambda_hat_from_noise(q, p, noises);
}

/// Monte-Carlo estimate of E_q ||x||_p^p for every row using n_samples draws,
/// without materializing all draws at once.
template <typename Rng>
Hyperparameters lambda_hat_monte_carlo(const VariationalParams& q, int p, std::size_t n_samples,
                                       Rng& rng) {
  check_norm_order(p);
  if (n_samples == 0) throw Error("lambda_hat: n_samples must be >= 1");
  std::vector<double> me(q.mean.num_entities(), 0.0), mr(q.mean.num_relation_ids(), 0.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    NoiseDraw n = draw_noise(q.mean, rng);
    detail::add_sampled_norms(q.mean.entities, q.log_std.entities, n.entities, p, me);
    detail::add_sampled_norms(q.mean.relations, q.log_std.relations, n.relations, p, mr);
  }
  for (double& v : me) v /= static_cast<double>(n_samples);
  for (double& v : mr) v /= static_cast<double>(n_samples);
  Hyperparameters h;
  h.p = p;
  h.entity = detail::invert_moments(me, q.space().width());
  h.relation = detail::invert_moments(mr, q.space().width());
  return h;
}

/// lambda <- [(1 - a) / lambda + a / lambda_hat]^{-1}, elementwise.
inline Hyperparameters mstep_update(const Hyperparameters& lambda, const Hyperparameters& hat,
                                    double lr_lambda) {
  if (!(lr_lambda > 0.0 && lr_lambda <= 1.0)) throw Error("mstep_update: lr_lambda must lie in (0, 1]");
  if (lambda.entity.size() != hat.entity.size() || lambda.relation.size() != hat.relation.size()) {
    throw Error("mstep_update: size mismatch");
  }
  Hyperparameters out = lambda;
  auto blend = [&](std::vector<double>& cur, const std::vector<double>& h) {
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (lr_lambda == 1.0) {
        cur[i] = h[i];
      } else {
        cur[i] = 1.0 / ((1.0 - lr_lambda) / cur[i] + lr_lambda / h[i]);
      }
    }
  };
  blend(out.entity, hat.entity);
  blend(out.relation, hat.relation);
  return out;
}

struct ElboEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Normalized log prior (including the lambda-independent constant) at theta.
inline double normalized_log_prior(const Parameters& theta, const Hyperparameters& lambda) {
  const double per_vector = log_prior_normalizer(theta.space.width(), lambda.p);
  const double n_vectors = static_cast<double>(theta.num_entities() + theta.num_relation_ids());
  return log_prior(theta, lambda) + n_vectors * per_vector;
}

/// Monte-Carlo ELBO over the full training set:
/// E_q[log p(S' | theta) + log p(theta | lambda)] + H[q].
template <typename Rng>
ElboEstimate elbo_estimate(const VariationalParams& q, const Hyperparameters& lambda,
                           std::span<const Triple> train, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw Error("elbo_estimate: n_samples must be >= 1");
  const double h = entropy(q);
  Parameters theta = q.mean;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    NoiseDraw n = draw_noise(q.mean, rng);
    reparameterize(q, n, theta);
    const double v = -tail_softmax_loss(theta, train) + normalized_log_prior(theta, lambda);
    sum += v;
    sum_sq += v * v;
  }
  const double ns = static_cast<double>(n_samples);
  const double mean = sum / ns;
  double var = n_samples > 1 ? (sum_sq - ns * mean * mean) / (ns - 1.0) : 0.0;
  var = std::max(var, 0.0);
  return {mean + h, std::sqrt(var / ns)};
}

struct EmTracePoint {
  std::size_t step;
  std::string phase;
  double noisy_loss;
  ElboEstimate elbo;
  double lambda_min;
  double lambda_median;
  double lambda_max;
};

struct EmResult {
  Hyperparameters lambda;
  VariationalParams q;
  std::vector<EmTracePoint> trace;
};

inline void lambda_summary(const Hyperparameters& h, double& lo, double& med, double& hi) {
  std::vector<double> all(h.entity);
  all.insert(all.end(), h.relation.begin(), h.relation.end());
  if (all.empty()) {
    lo = med = hi = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  std::sort(all.begin(), all.end());
  lo = all.front();
  hi = all.back();
  med = all.size() % 2 ? all[all.size() / 2]
                       : 0.5 * (all[all.size() / 2 - 1] + all[all.size() / 2]);
}

inline void write_em_log_line(std::ostream& os, const EmTracePoint& p) {
  os << p.step << '\t' << p.phase << '\t' << p.noisy_loss << '\t' << p.elbo.mean << '\t'
     << p.elbo.std_error << '\t' << p.lambda_min << '\t' << p.lambda_median << '\t'
     << p.lambda_max << '\n';
}

/// Full EM loop: T_E pure E-steps, then T_EM steps of E-step + M-step. The
/// minibatch loss is scaled by |S'| / |B| so that it estimates the full loss.
/// The ELBO is recorded every elbo_every steps, at step T_E, and at the end,
/// always with the same held-out noise seed.
inline EmResult run_em(const Parameters& pretrained, const Dataset& ds,
                       const Hyperparameters& lambda_init, const EmConfig& config,
                       std::ostream* log = nullptr) {
  config.validate();
  check_norm_order(lambda_init.p);
  if (ds.train.empty()) throw Error("run_em: empty training set");
  EmResult res{lambda_init, init_variational(pretrained, config.sigma_init), {}};
  const BatchRegularizer reg = BatchRegularizer::for_dataset(ds);
  std::seed_seq seq{static_cast<std::uint32_t>(config.rng_seed),
                    static_cast<std::uint32_t>(config.rng_seed >> 32), 0x6e6f6973u};
  std::mt19937_64 noise_rng(seq);
  VariationalGradient grads(pretrained);
  std::vector<NoiseDraw> extra;
  if (log) log->precision(10);

  std::size_t epoch = 1;
  EpochBatches batches(ds.train, config.batch_size, config.rng_seed, epoch);
  std::size_t cursor = 0;
  const std::size_t total = config.e_steps + config.em_steps;

  auto record = [&](std::size_t step, double loss) {
    std::mt19937_64 elbo_rng(config.elbo_seed);
    EmTracePoint p{step, step > config.e_steps ? "EM" : "E", loss,
                   elbo_estimate(res.q, res.lambda, ds.train, config.elbo_samples, elbo_rng),
                   0, 0, 0};
    lambda_summary(res.lambda, p.lambda_min, p.lambda_median, p.lambda_max);
    res.trace.push_back(p);
    if (log) write_em_log_line(*log, p);
  };

  for (std::size_t step = 1; step <= total; ++step) {
    if (cursor == batches.size()) {
      batches = EpochBatches(ds.train, config.batch_size, config.rng_seed, ++epoch);
      cursor = 0;
    }
    std::span<const Triple> batch = batches[cursor++];
    const double scale = static_cast<double>(ds.train.size()) / static_cast<double>(batch.size());
    NoiseDraw noise = draw_noise(pretrained, noise_rng);
    const double loss = noisy_loss(res.q, res.lambda, reg, batch, noise, scale, grads);
    estep_update(res.q, grads, config);
    if (!all_finite(res.q)) {
      throw NumericError("run_em: E-step diverged at step " + std::to_string(step) +
                         "; lower lr_mean / lr_log_std");
    }

    if (step > config.e_steps) {
      extra.clear();
      if (lambda_init.p != 2) {
        extra.push_back(std::move(noise));
        for (std::size_t s = 1; s < config.lambda_hat_samples; ++s) {
          extra.push_back(draw_noise(pretrained, noise_rng));
        }
      }
      res.lambda = mstep_update(res.lambda, lambda_hat_from_noise(res.q, lambda_init.p, extra),
                                config.lr_lambda);
    }
    if (config.elbo_every > 0 &&
        (step % config.elbo_every == 0 || step == config.e_steps || step == total)) {
      record(step, loss);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Diagnostics for naive joint maximization over (theta, lambda)

/// argmax_lambda of the log prior at a point estimate: K' / ||x||_p^p per
/// vector. Infinite for an all-zero vector.
inline Hyperparameters naive_point_lambda(const Parameters& theta, int p) {
  check_norm_order(p);
  const double W = static_cast<double>(theta.space.width());
  Hyperparameters h;
  h.p = p;
  auto fill = [&](const Table& t, std::vector<double>& out) {
    out.resize(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
      const double n = norm_pp(t.row(i), p);
      out[i] = n > 0.0 ? W / n : std::numeric_limits<double>::infinity();
    }
  };
  fill(theta.entities, h.entity);
  fill(theta.relations, h.relation);
  return h;
}

/// Per-coordinate prior-plus-entropy objective in u = lambda sigma^p at mu = 0:
/// (1/p) [log u - c_p u].
inline double prior_entropy_objective(double u, int p) {
  return (std::log(u) - standard_normal_abs_moment(p) * u) / p;
}

/// Finite maximizer u* = 1 / c_p of prior_entropy_objective.
inline double analytic_prior_entropy_optimum(int p) {
  check_norm_order(p);
  return 1.0 / standard_normal_abs_moment(p);
}

}  // namespace kgvem
