#pragma once

// Three-phase run (pre-train, variational EM, re-train) plus evaluation,
// checkpointing and lambda-versus-frequency export.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kgvem/checkpoint.hpp"
#include "kgvem/config.hpp"
#include "kgvem/data.hpp"
#include "kgvem/eval.hpp"
#include "kgvem/synth.hpp"
#include "kgvem/trainer.hpp"
#include "kgvem/var_em.hpp"

namespace kgvem {

/// A pipeline phase failed; `phase()` names it.
class PhaseError : public Error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : Error(phase + ": " + what), phase_(std::move(phase)) {}
  const std::string& phase() const noexcept { return phase_; }

 private:
  std::string phase_;
};

/// Exclusive lock file inside an output directory, removed on destruction.
class OutputDirLock {
 public:
  explicit OutputDirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw Error("output directory is locked or unwritable: " + dir.string());
    std::fclose(f);
  }
  ~OutputDirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  OutputDirLock(const OutputDirLock&) = delete;
  OutputDirLock& operator=(const OutputDirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// lambda export

struct LambdaRow {
  std::string name;
  std::uint64_t frequency;
  double lambda;
};

/// Least-squares c minimizing sum (lambda_i - c n_i)^2, i.e. sum lambda n / sum n^2.
/// NaN when every frequency is zero.
inline double proportional_fit(std::span<const std::uint64_t> freq, std::span<const double> lambda) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < freq.size(); ++i) {
    const double n = static_cast<double>(freq[i]);
    num += lambda[i] * n;
    den += n * n;
  }
  return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

/// Path of the file holding the proportional-fit coefficient for `csv_path`.
inline std::filesystem::path fit_path_for(std::filesystem::path csv_path) {
  return csv_path.replace_extension(".fit");
}

/// Writes "name,frequency,lambda" rows and the proportional fit next to them.
/// Returns the fit coefficient.
inline double export_lambdas(const std::vector<std::string>& names,
                             std::span<const std::uint64_t> freq, std::span<const double> lambda,
                             const std::filesystem::path& out_path,
                             const std::string& name_column = "entity_name") {
  if (names.size() != freq.size() || names.size() != lambda.size()) {
    throw Error("export_lambdas: size mismatch");
  }
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write " + out_path.string());
  out.precision(17);
  out << name_column << ",frequency,lambda\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].find_first_of(",\"\n") != std::string::npos) {
      throw Error("export_lambdas: name contains a CSV delimiter: " + names[i]);
    }
    out << names[i] << ',' << freq[i] << ',' << lambda[i] << '\n';
  }
  if (!out) throw Error("write failed: " + out_path.string());
  const double c = proportional_fit(freq, lambda);
  std::ofstream fit(fit_path_for(out_path));
  if (!fit) throw Error("cannot write " + fit_path_for(out_path).string());
  fit.precision(17);
  fit << "proportional_fit\t" << c << '\n';
  return c;
}

inline std::vector<LambdaRow> read_lambda_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<LambdaRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (++lineno == 1 || line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw ParseError(path.string(), lineno, "expected 3 columns");
    try {
      rows.push_back({line.substr(0, c1), std::stoull(line.substr(c1 + 1, c2 - c1 - 1)),
                      std::stod(line.substr(c2 + 1))});
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "bad number");
    }
  }
  return rows;
}

/// Entity and relation CSVs for a checkpoint's lambdas.
inline void export_checkpoint_lambdas(const Checkpoint& ckpt, const Vocab& vocab,
                                      const FrequencyTable& freq,
                                      const std::filesystem::path& out_dir) {
  export_lambdas(vocab.entity_names(), freq.entity, ckpt.lambda.entity,
                 out_dir / "lambda_entities.csv", "entity_name");
  export_lambdas(vocab.relation_names(), freq.relation, ckpt.lambda.relation,
                 out_dir / "lambda_relations.csv", "relation_name");
}

// ---------------------------------------------------------------------------
// phases

struct PipelineResult {
  Checkpoint pretrained;
  Checkpoint variational;
  Checkpoint retrained;
  double pretrain_valid_mrr = 0.0;
  double retrain_valid_mrr = 0.0;
  EvalReport test;
  std::optional<EvalReport> test_bayes;
  std::vector<EmTracePoint> em_trace;
};

template <typename Fn>
auto run_phase(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PhaseError&) {
    throw;
  } catch (const std::exception& e) {
    throw PhaseError(name, e.what());
  }
}

inline double best_valid_mrr(const TrainResult& r) {
  double best = -1.0;
  for (const auto& e : r.history) {
    if (r.best_epoch == e.epoch) best = e.valid_mrr;
  }
  return best;
}

inline TrainResult pretrain_phase(const RunConfig& cfg, const Dataset& ds,
                                  const Hyperparameters& lambda) {
  std::ofstream log(cfg.out_dir / "pretrain.log");
  return train_map(ds, lambda, cfg.space, cfg.train, &log);
}

inline EmResult em_phase(const RunConfig& cfg, const Dataset& ds, const Parameters& pretrained,
                         const Hyperparameters& lambda) {
  std::ofstream log(cfg.out_dir / "em.log");
  return run_em(pretrained, ds, lambda, cfg.em, &log);
}

inline TrainResult retrain_phase(const RunConfig& cfg, const Dataset& ds,
                                 const Hyperparameters& lambda) {
  std::ofstream log(cfg.out_dir / "retrain.log");
  return train_map(ds, lambda, cfg.space, cfg.train, &log);
}

/// Pre-train with lambda = scalar * n, run variational EM from the pre-trained
/// snapshot, re-train from a fresh initialization with the tuned lambda, and
/// evaluate on test. Each phase leaves its checkpoint in out_dir.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
  auto loaded = run_phase("startup", [&] {
    cfg.validate();
    cfg.require_dataset();
    return load_dataset(cfg.train_path, cfg.valid_path, cfg.test_path);
  });
  const Vocab& vocab = loaded.first;
  const Dataset& ds = loaded.second;
  OutputDirLock lock(cfg.out_dir);
  const std::string vocab_ref = (cfg.out_dir / "entities.tsv").string();
  write_vocab(vocab, cfg.out_dir / "entities.tsv", cfg.out_dir / "relations.tsv");
  const FrequencyTable freq = count_frequencies(ds.train, ds.num_entities, ds.num_relations);

  PipelineResult res;
  const Hyperparameters lambda0 = conventional_lambda(freq, cfg.lambda, cfg.p);
  TrainResult pre = run_phase("pretrain", [&] {
    TrainResult r = pretrain_phase(cfg, ds, lambda0);
    res.pretrained = Checkpoint::from_map(r.params, lambda0, vocab_ref);
    save_checkpoint(res.pretrained, cfg.out_dir / "pretrain.ckpt");
    return r;
  });
  res.pretrain_valid_mrr = best_valid_mrr(pre);

  EmResult em = run_phase("em", [&] {
    EmResult r = em_phase(cfg, ds, pre.params, lambda0);
    res.variational = Checkpoint::from_variational(r.q, r.lambda, vocab_ref);
    save_checkpoint(res.variational, cfg.out_dir / "em.ckpt");
    return r;
  });
  res.em_trace = em.trace;

  TrainResult re = run_phase("retrain", [&] {
    TrainResult r = retrain_phase(cfg, ds, em.lambda);
    res.retrained = Checkpoint::from_map(r.params, em.lambda, vocab_ref);
    save_checkpoint(res.retrained, cfg.out_dir / "retrain.ckpt");
    return r;
  });
  res.retrain_valid_mrr = best_valid_mrr(re);

  run_phase("eval", [&] {
    const FilterIndex filter = FilterIndex::build(ds);
    res.test = evaluate(re.params, ds.test, filter);
    std::ofstream out(cfg.out_dir / "eval.txt");
    write_report(out, res.test);
    if (cfg.bayes_samples > 0) {
      res.test_bayes = evaluate_bayes(em.q, ds.test, filter, cfg.bayes_samples, cfg.seed);
      std::ofstream bout(cfg.out_dir / "eval_bayes.txt");
      write_report(bout, *res.test_bayes);
    }
    export_checkpoint_lambdas(res.retrained, vocab, freq, cfg.out_dir);
  });
  return res;
}

// ---------------------------------------------------------------------------
// synthetic data on disk

/// Planted entity lambdas: the trailing alt_fraction of entities use the alt value.
inline Hyperparameters synth_lambda(const SynthConfig& s) {
  Hyperparameters h;
  h.p = 2;
  h.entity.assign(s.num_entities, s.lambda_entity);
  const auto n_alt = static_cast<std::size_t>(std::llround(s.alt_fraction * s.num_entities));
  for (std::size_t i = s.num_entities - std::min(n_alt, s.num_entities); i < s.num_entities; ++i) {
    h.entity[i] = s.lambda_entity_alt;
  }
  h.relation.assign(2 * s.num_relations, s.lambda_relation);
  return h;
}

inline SyntheticGraph generate_from_config(const RunConfig& cfg) {
  const SynthConfig& s = cfg.synth;
  const HeadRelDistribution hr = s.zipf_exponent > 0.0
                                     ? HeadRelDistribution::zipf(s.num_entities, s.num_relations,
                                                                 s.zipf_exponent)
                                     : HeadRelDistribution::uniform(s.num_entities, s.num_relations);
  return synth_generate(cfg.space, synth_lambda(s), hr, s.num_facts, cfg.seed);
}

/// Writes train.txt / valid.txt / test.txt and the planted lambdas.
inline void write_synthetic(const SyntheticGraph& g, const Hyperparameters& planted,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_triples(g.raw_train, g.vocab, dir / "train.txt");
  write_triples(g.raw_valid, g.vocab, dir / "valid.txt");
  write_triples(g.raw_test, g.vocab, dir / "test.txt");
  std::ofstream out(dir / "planted_lambda.csv");
  out.precision(17);
  out << "entity_name,lambda\n";
  for (std::size_t i = 0; i < planted.entity.size(); ++i) {
    out << g.vocab.entity_names()[i] << ',' << planted.entity[i] << '\n';
  }
}

}  // namespace kgvem
