// kgvem: command-line driver for pre-training, variational EM, re-training,
// evaluation, synthetic data and lambda export.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "kgvem/pipeline.hpp"

namespace fs = std::filesystem;
using namespace kgvem;

namespace {

struct Options {
  std::string config_path;
  std::string checkpoint;
  std::map<std::string, std::string> overrides;  // key -> raw value, from flags
};

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg;
  if (!opt.config_path.empty()) load_config_file(cfg, opt.config_path);
  for (const auto& [k, v] : opt.overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

std::pair<Vocab, Dataset> load_from(const RunConfig& cfg) {
  cfg.require_dataset();
  return load_dataset(cfg.train_path, cfg.valid_path, cfg.test_path);
}

Checkpoint require_checkpoint(const Options& opt) {
  if (opt.checkpoint.empty()) throw Error("--checkpoint is required");
  return load_checkpoint(opt.checkpoint);
}

void check_shape(const Checkpoint& c, const Dataset& ds) {
  if (c.mean.num_entities() != ds.num_entities || c.mean.num_relation_ids() != ds.num_relation_ids()) {
    throw Error("checkpoint shape does not match the dataset");
  }
}

std::string vocab_ref(const RunConfig& cfg) { return (cfg.out_dir / "entities.tsv").string(); }

void print_report(const EvalReport& r) { write_report(std::cout, r); }

int cmd_preprocess(const RunConfig& cfg) {
  auto [vocab, ds] = run_phase("startup", [&] { return load_from(cfg); });
  run_phase("preprocess", [&] {
    OutputDirLock lock(cfg.out_dir);
    write_vocab(vocab, cfg.out_dir / "entities.tsv", cfg.out_dir / "relations.tsv");
    const FrequencyTable f = count_frequencies(ds.train, ds.num_entities, ds.num_relations);
    std::ofstream out(cfg.out_dir / "entity_frequency.tsv");
    for (std::size_t e = 0; e < f.entity.size(); ++e) {
      out << vocab.entity_names()[e] << '\t' << f.entity[e] << '\n';
    }
    std::cout << "entities\t" << ds.num_entities << "\nrelations\t" << ds.num_relations
              << "\ntrain\t" << ds.train.size() << "\nvalid\t" << ds.valid.size() << "\ntest\t"
              << ds.test.size() << '\n';
  });
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  auto loaded = run_phase("startup", [&] { return load_from(cfg); });
  const Vocab& vocab = loaded.first;
  const Dataset& ds = loaded.second;
  run_phase("pretrain", [&] {
    OutputDirLock lock(cfg.out_dir);
    write_vocab(vocab, cfg.out_dir / "entities.tsv", cfg.out_dir / "relations.tsv");
    const Hyperparameters lambda0 = conventional_lambda(
        count_frequencies(ds.train, ds.num_entities, ds.num_relations), cfg.lambda, cfg.p);
    TrainResult r = pretrain_phase(cfg, ds, lambda0);
    save_checkpoint(Checkpoint::from_map(r.params, lambda0, vocab_ref(cfg)),
                    cfg.out_dir / "pretrain.ckpt");
    std::cout << "best_epoch\t" << r.best_epoch << "\nvalid_mrr\t" << best_valid_mrr(r) << '\n';
  });
  return 0;
}

int cmd_em(const RunConfig& cfg, const Options& opt) {
  auto loaded = run_phase("startup", [&] { return load_from(cfg); });
  const Dataset& ds = loaded.second;
  const Checkpoint init = run_phase("startup", [&] {
    Checkpoint c = require_checkpoint(opt);
    check_shape(c, ds);
    return c;
  });
  run_phase("em", [&] {
    OutputDirLock lock(cfg.out_dir);
    EmResult r = em_phase(cfg, ds, init.mean, init.lambda);
    save_checkpoint(Checkpoint::from_variational(r.q, r.lambda, init.vocab), cfg.out_dir / "em.ckpt");
    double lo, med, hi;
    lambda_summary(r.lambda, lo, med, hi);
    std::cout << "lambda_min\t" << lo << "\nlambda_median\t" << med << "\nlambda_max\t" << hi << '\n';
  });
  return 0;
}

int cmd_retrain(const RunConfig& cfg, const Options& opt) {
  auto loaded = run_phase("startup", [&] { return load_from(cfg); });
  const Dataset& ds = loaded.second;
  const Checkpoint tuned = run_phase("startup", [&] {
    Checkpoint c = require_checkpoint(opt);
    check_shape(c, ds);
    return c;
  });
  run_phase("retrain", [&] {
    OutputDirLock lock(cfg.out_dir);
    TrainResult r = retrain_phase(cfg, ds, tuned.lambda);
    save_checkpoint(Checkpoint::from_map(r.params, tuned.lambda, tuned.vocab),
                    cfg.out_dir / "retrain.ckpt");
    std::cout << "best_epoch\t" << r.best_epoch << "\nvalid_mrr\t" << best_valid_mrr(r) << '\n';
  });
  return 0;
}

int cmd_eval(const RunConfig& cfg, const Options& opt) {
  auto loaded = run_phase("startup", [&] { return load_from(cfg); });
  const Dataset& ds = loaded.second;
  const Checkpoint c = run_phase("startup", [&] {
    Checkpoint ck = require_checkpoint(opt);
    check_shape(ck, ds);
    return ck;
  });
  run_phase("eval", [&] {
    const FilterIndex filter = FilterIndex::build(ds);
    std::vector<RankedQuery> dump;
    EvalReport rep = cfg.bayes_samples > 0 && c.log_std
                         ? evaluate_bayes(c.variational(), ds.test, filter, cfg.bayes_samples, cfg.seed)
                         : evaluate(c.mean, ds.test, filter, default_hits_ks(), &dump);
    OutputDirLock lock(cfg.out_dir);
    std::ofstream out(cfg.out_dir / "eval.txt");
    write_report(out, rep);
    if (!dump.empty()) {
      std::ofstream ranks(cfg.out_dir / "ranks.tsv");
      write_rank_dump(ranks, dump);
    }
    print_report(rep);
  });
  return 0;
}

int cmd_pipeline(const RunConfig& cfg) {
  PipelineResult r = run_pipeline(cfg);
  std::cout << "pretrain_valid_mrr\t" << r.pretrain_valid_mrr << "\nretrain_valid_mrr\t"
            << r.retrain_valid_mrr << '\n';
  print_report(r.test);
  return 0;
}

int cmd_synth(const RunConfig& cfg) {
  run_phase("synth", [&] {
    SyntheticGraph g = generate_from_config(cfg);
    write_synthetic(g, synth_lambda(cfg.synth), cfg.out_dir);
    std::cout << "train\t" << g.raw_train.size() << "\nvalid\t" << g.raw_valid.size()
              << "\ntest\t" << g.raw_test.size() << '\n';
  });
  return 0;
}

int cmd_export(const RunConfig& cfg, const Options& opt) {
  auto loaded = run_phase("startup", [&] { return load_from(cfg); });
  const Vocab& vocab = loaded.first;
  const Dataset& ds = loaded.second;
  const Checkpoint c = run_phase("startup", [&] {
    Checkpoint ck = require_checkpoint(opt);
    check_shape(ck, ds);
    return ck;
  });
  run_phase("export-lambdas", [&] {
    fs::create_directories(cfg.out_dir);
    export_checkpoint_lambdas(c, vocab, count_frequencies(ds.train, ds.num_entities, ds.num_relations),
                              cfg.out_dir);
    std::ifstream fit(fit_path_for(cfg.out_dir / "lambda_entities.csv"));
    std::cout << fit.rdbuf();
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge graph embeddings with variationally tuned per-entity regularizers"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  app.add_option("--config", opt.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--checkpoint", opt.checkpoint, "input checkpoint");
  // Every config key is also a flag; hyphenated spellings are accepted too.
  for (const std::string& key : RunConfig::keys()) {
    std::string names = "--" + key;
    std::string hyphen = key;
    std::replace(hyphen.begin(), hyphen.end(), '_', '-');
    if (hyphen != key) names += ",--" + hyphen;
    app.add_option_function<std::string>(
        names, [&opt, key](const std::string& v) { opt.overrides[key] = v; }, "config key " + key);
  }

  const std::map<std::string, std::string> commands{
      {"preprocess", "build vocabularies and frequency counts"},
      {"pretrain", "MAP training with frequency-proportional lambda"},
      {"em", "variational EM from a pre-trained checkpoint"},
      {"retrain", "MAP training with the lambdas of a checkpoint"},
      {"eval", "filtered MRR and Hits@k on the test split"},
      {"pipeline", "pretrain, em, retrain and eval in one run"},
      {"synth", "sample a synthetic knowledge graph"},
      {"export-lambdas", "write lambda-versus-frequency CSVs"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    const RunConfig cfg = run_phase("startup", [&] { return resolve_config(opt); });
    if (cmd == "preprocess") return cmd_preprocess(cfg);
    if (cmd == "pretrain") return cmd_pretrain(cfg);
    if (cmd == "em") return cmd_em(cfg, opt);
    if (cmd == "retrain") return cmd_retrain(cfg, opt);
    if (cmd == "eval") return cmd_eval(cfg, opt);
    if (cmd == "pipeline") return cmd_pipeline(cfg);
    if (cmd == "synth") return cmd_synth(cfg);
    if (cmd == "export-lambdas") return cmd_export(cfg, opt);
  } catch (const PhaseError& e) {
    std::cerr << "kgvem " << cmd << ": phase " << e.phase() << " failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "kgvem " << cmd << ": phase " << cmd << " failed: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
