#pragma once

// Run configuration: "key = value" lines with '#' comments. Every key can be
// overridden from the command line with a same-named flag.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kgvem/error.hpp"
#include "kgvem/model.hpp"
#include "kgvem/trainer.hpp"
#include "kgvem/var_em.hpp"

namespace kgvem {

struct SynthConfig {
  std::size_t num_entities = 100;
  std::size_t num_relations = 4;
  std::size_t num_facts = 20000;
  double zipf_exponent = 1.0;  // 0: uniform heads
  double lambda_entity = 1.0;
  double lambda_entity_alt = 1.0;
  double alt_fraction = 0.0;  // trailing fraction of entities using lambda_entity_alt
  double lambda_relation = 1.0;
};

struct RunConfig {
  std::filesystem::path train_path, valid_path, test_path;
  std::filesystem::path out_dir = "out";
  EmbeddingSpace space{SpaceKind::Real, 16};
  int p = 2;
  double lambda = 0.01;  // scalar for the frequency-proportional initialization
  std::uint64_t seed = 1;
  TrainConfig train;
  EmConfig em;
  std::size_t bayes_samples = 0;  // > 0 also reports posterior-averaged prediction
  SynthConfig synth;

  void validate() const {
    check_norm_order(p);
    if (space.dim == 0) throw Error("dim must be >= 1");
    if (!(lambda > 0.0)) throw Error("lambda must be positive");
    train.validate();
    em.validate();
  }

  /// Dataset paths must exist before any phase starts.
  void require_dataset() const {
    for (const auto* p : {&train_path, &valid_path, &test_path}) {
      if (p->empty()) throw Error("dataset paths train, valid and test must be set");
      if (!std::filesystem::exists(*p)) throw Error("dataset file not found: " + p->string());
    }
  }

  /// Applies one key/value pair. Unknown keys throw.
  void set(const std::string& key, const std::string& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw Error("unknown config key '" + key + "'");
    try {
      it->second(*this, value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error("bad value for '" + key + "': '" + value + "'");
    }
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
  }

 private:
  using Setter = std::function<void(RunConfig&, const std::string&)>;

  static std::size_t to_size(const std::string& s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument(s);
    return v;
  }
  static double to_double(const std::string& s) {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  }

  static const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"train", [](RunConfig& c, const std::string& v) { c.train_path = v; }},
        {"valid", [](RunConfig& c, const std::string& v) { c.valid_path = v; }},
        {"test", [](RunConfig& c, const std::string& v) { c.test_path = v; }},
        {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        {"space", [](RunConfig& c, const std::string& v) { c.space.kind = parse_space(v); }},
        {"dim", [](RunConfig& c, const std::string& v) { c.space.dim = to_size(v); }},
        {"p", [](RunConfig& c, const std::string& v) { c.p = static_cast<int>(to_size(v)); }},
        {"lambda", [](RunConfig& c, const std::string& v) { c.lambda = to_double(v); }},
        {"seed",
         [](RunConfig& c, const std::string& v) {
           c.seed = to_size(v);
           c.train.rng_seed = c.seed;
           c.em.rng_seed = c.seed;
         }},
        {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size(v); }},
        {"learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_double(v); }},
        {"max_epochs", [](RunConfig& c, const std::string& v) { c.train.max_epochs = to_size(v); }},
        {"patience", [](RunConfig& c, const std::string& v) { c.train.patience = to_size(v); }},
        {"eval_every", [](RunConfig& c, const std::string& v) { c.train.eval_every = to_size(v); }},
        {"init_std", [](RunConfig& c, const std::string& v) { c.train.init_std = to_double(v); }},
        {"e_steps", [](RunConfig& c, const std::string& v) { c.em.e_steps = to_size(v); }},
        {"em_steps", [](RunConfig& c, const std::string& v) { c.em.em_steps = to_size(v); }},
        {"lr_mean", [](RunConfig& c, const std::string& v) { c.em.lr_mean = to_double(v); }},
        {"lr_log_std", [](RunConfig& c, const std::string& v) { c.em.lr_log_std = to_double(v); }},
        {"lr_lambda", [](RunConfig& c, const std::string& v) { c.em.lr_lambda = to_double(v); }},
        {"sigma_init", [](RunConfig& c, const std::string& v) { c.em.sigma_init = to_double(v); }},
        {"em_batch_size", [](RunConfig& c, const std::string& v) { c.em.batch_size = to_size(v); }},
        {"lambda_hat_samples", [](RunConfig& c, const std::string& v) { c.em.lambda_hat_samples = to_size(v); }},
        {"elbo_every", [](RunConfig& c, const std::string& v) { c.em.elbo_every = to_size(v); }},
        {"elbo_samples", [](RunConfig& c, const std::string& v) { c.em.elbo_samples = to_size(v); }},
        {"bayes_samples", [](RunConfig& c, const std::string& v) { c.bayes_samples = to_size(v); }},
        {"synth_entities", [](RunConfig& c, const std::string& v) { c.synth.num_entities = to_size(v); }},
        {"synth_relations", [](RunConfig& c, const std::string& v) { c.synth.num_relations = to_size(v); }},
        {"synth_facts", [](RunConfig& c, const std::string& v) { c.synth.num_facts = to_size(v); }},
        {"synth_zipf", [](RunConfig& c, const std::string& v) { c.synth.zipf_exponent = to_double(v); }},
        {"synth_lambda", [](RunConfig& c, const std::string& v) { c.synth.lambda_entity = to_double(v); }},
        {"synth_lambda_alt", [](RunConfig& c, const std::string& v) { c.synth.lambda_entity_alt = to_double(v); }},
        {"synth_alt_fraction", [](RunConfig& c, const std::string& v) { c.synth.alt_fraction = to_double(v); }},
        {"synth_lambda_relation", [](RunConfig& c, const std::string& v) { c.synth.lambda_relation = to_double(v); }},
    };
    return table;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Parses "key = value" lines into `config`; '#' starts a comment.
inline void apply_config_text(RunConfig& config, std::string_view text, const std::string& source) {
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    const std::string key = detail::trim(std::string_view(stripped).substr(0, eq));
    const std::string value = detail::trim(std::string_view(stripped).substr(eq + 1));
    try {
      config.set(key, value);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
}

inline void load_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  apply_config_text(config, text, path.string());
}

}  // namespace kgvem
