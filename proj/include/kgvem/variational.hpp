#pragma once

#include <cmath>
#include <random>

#include "kgvem/model.hpp"

namespace kgvem {

/// Mean-field Gaussian q: mean tables and log standard deviations (sigma = e^xi),
/// both shaped like Parameters.
struct VariationalParams {
  Parameters mean;
  Parameters log_std;

  const EmbeddingSpace& space() const { return mean.space; }

  friend bool operator==(const VariationalParams&, const VariationalParams&) = default;
};

/// Standard-normal noise for every coordinate of the entity and relation tables.
struct NoiseDraw {
  Table entities;
  Table relations;
};

inline NoiseDraw zero_noise(const Parameters& shape) {
  return {Table(shape.num_entities(), shape.space.width()),
          Table(shape.num_relation_ids(), shape.space.width())};
}

template <typename Rng>
NoiseDraw draw_noise(const Parameters& shape, Rng& rng) {
  NoiseDraw n = zero_noise(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : n.entities.data()) v = normal(rng);
  for (double& v : n.relations.data()) v = normal(rng);
  return n;
}

/// theta = mu + e^xi * eps, written into `out` (which must be shaped like mu).
inline void reparameterize(const VariationalParams& q, const NoiseDraw& noise, Parameters& out) {
  auto apply = [](std::span<const double> mu, std::span<const double> xi,
                  std::span<const double> eps, std::span<double> theta) {
    for (std::size_t i = 0; i < mu.size(); ++i) theta[i] = mu[i] + std::exp(xi[i]) * eps[i];
  };
  apply(q.mean.entities.data(), q.log_std.entities.data(), noise.entities.data(),
        out.entities.data());
  apply(q.mean.relations.data(), q.log_std.relations.data(), noise.relations.data(),
        out.relations.data());
}

inline Parameters reparameterize(const VariationalParams& q, const NoiseDraw& noise) {
  Parameters out = q.mean;
  reparameterize(q, noise, out);
  return out;
}

/// Total number of scalar coordinates under q.
inline std::size_t num_coordinates(const VariationalParams& q) {
  return q.mean.entities.data().size() + q.mean.relations.data().size();
}

/// H[q] = sum xi + (n/2) log(2 pi e).
inline double entropy(const VariationalParams& q) {
  double s = 0.0;
  for (double v : q.log_std.entities.data()) s += v;
  for (double v : q.log_std.relations.data()) s += v;
  return s + 0.5 * static_cast<double>(num_coordinates(q)) *
                 std::log(2.0 * 3.14159265358979323846 * std::exp(1.0));
}

}  // namespace kgvem
