#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls the library's loss or gradient code paths.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "kgvem/data.hpp"
#include "kgvem/model.hpp"

namespace kgvem::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kgvem_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline Parameters random_params(EmbeddingSpace space, std::size_t ne, std::size_t nrid,
                                std::mt19937_64& rng, double sd = 0.5) {
  Parameters p(space, ne, nrid);
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : p.entities.data()) v = n(rng);
  for (double& v : p.relations.data()) v = n(rng);
  return p;
}

inline Hyperparameters random_lambda(std::size_t ne, std::size_t nrid, int p,
                                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 3.0);
  Hyperparameters h;
  h.p = p;
  for (std::size_t i = 0; i < ne; ++i) h.entity.push_back(u(rng));
  for (std::size_t i = 0; i < nrid; ++i) h.relation.push_back(u(rng));
  return h;
}

/// Raw triples covering every entity and relation at least once, then augmented.
inline std::vector<Triple> random_augmented_triples(std::size_t ne, std::size_t nr,
                                                    std::size_t n_raw, std::mt19937_64& rng) {
  std::uniform_int_distribution<EntityId> e(0, static_cast<EntityId>(ne - 1));
  std::uniform_int_distribution<RelationId> r(0, static_cast<RelationId>(nr - 1));
  std::vector<Triple> raw;
  for (std::size_t i = 0; i < n_raw; ++i) {
    raw.push_back({i < ne ? static_cast<EntityId>(i) : e(rng),
                   i < nr ? static_cast<RelationId>(i) : r(rng), e(rng)});
  }
  return augment_reciprocal(raw, nr);
}

/// Score through std::complex, independent of the split-storage kernels.
inline long double oracle_score(const Parameters& p, EntityId h, RelationId r, EntityId t) {
  const std::size_t W = p.space.width();
  if (p.space.kind == SpaceKind::Real) {
    long double s = 0;
    for (std::size_t k = 0; k < W; ++k) {
      s += static_cast<long double>(p.entities(h, k)) * p.relations(r, k) * p.entities(t, k);
    }
    return s;
  }
  const std::size_t K = W / 2;
  long double s = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::complex<long double> a(p.entities(h, k), p.entities(h, K + k));
    std::complex<long double> b(p.relations(r, k), p.relations(r, K + k));
    std::complex<long double> c(p.entities(t, k), p.entities(t, K + k));
    s += (a * b * std::conj(c)).real();
  }
  return s;
}

/// Naive extended-precision evaluation of the tail softmax loss.
inline long double oracle_softmax_loss(const Parameters& p, const std::vector<Triple>& batch) {
  long double total = 0;
  for (const Triple& tr : batch) {
    long double z = 0;
    for (std::size_t t = 0; t < p.num_entities(); ++t) {
      z += std::exp(oracle_score(p, tr.head, tr.relation, static_cast<EntityId>(t)));
    }
    total += -oracle_score(p, tr.head, tr.relation, tr.tail) + std::log(z);
  }
  return total;
}

inline long double oracle_norm(std::span<const double> x, int p) {
  long double s = 0;
  for (double v : x) s += std::pow(std::abs(static_cast<long double>(v)), p);
  return s;
}

inline long double oracle_penalty(const Parameters& params, const Hyperparameters& lam) {
  long double s = 0;
  for (std::size_t e = 0; e < params.num_entities(); ++e) {
    s += lam.entity[e] / lam.p * oracle_norm(params.entities.row(e), lam.p);
  }
  for (std::size_t r = 0; r < params.num_relation_ids(); ++r) {
    s += lam.relation[r] / lam.p * oracle_norm(params.relations.row(r), lam.p);
  }
  return s;
}

/// Central finite difference of f with respect to every coordinate of `x`.
template <typename Fn>
std::vector<double> finite_difference(std::span<double> x, Fn&& f, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f();
    x[i] = saved - step;
    const double fm = f();
    x[i] = saved;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
inline double max_relative_error(const std::vector<double>& a, std::span<const double> b,
                                 double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// Average ranks with ties sharing the mean rank.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson correlation of fractional ranks).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = fractional_ranks(a), rb = fractional_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace kgvem::testing
