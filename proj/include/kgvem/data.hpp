#pragma once

// Triple data: vocabulary, TSV loading, reciprocal augmentation, frequency
// counts, the filtered-ranking index and seeded minibatch order.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgvem/error.hpp"

namespace kgvem {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

/// Suffix that names the inverse of a relation. Raw input may not use it.
inline constexpr std::string_view kInverseMarker = "^-1";

/// Dense name <-> id maps. Relation names cover 2 * num_relations() ids:
/// raw relations first, then their inverses in the same order.
class Vocab {
 public:
  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size() / 2; }

  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& relation_names() const { return relation_names_; }

  const EntityId* find_entity(const std::string& name) const {
    auto it = entity_ids_.find(name);
    return it == entity_ids_.end() ? nullptr : &it->second;
  }
  const RelationId* find_relation(const std::string& name) const {
    auto it = relation_ids_.find(name);
    return it == relation_ids_.end() ? nullptr : &it->second;
  }

  /// Builds a vocabulary from raw entity and relation names in id order.
  static Vocab from_names(std::vector<std::string> entities,
                          const std::vector<std::string>& relations) {
    Vocab v;
    v.entity_names_ = std::move(entities);
    for (std::size_t i = 0; i < v.entity_names_.size(); ++i) {
      if (!v.entity_ids_.emplace(v.entity_names_[i], static_cast<EntityId>(i)).second) {
        throw Error("duplicate entity name '" + v.entity_names_[i] + "'");
      }
    }
    v.relation_names_ = relations;
    for (const auto& r : relations) v.relation_names_.push_back(r + std::string(kInverseMarker));
    for (std::size_t i = 0; i < v.relation_names_.size(); ++i) {
      if (!v.relation_ids_.emplace(v.relation_names_[i], static_cast<RelationId>(i)).second) {
        throw Error("duplicate relation name '" + v.relation_names_[i] + "'");
      }
    }
    return v;
  }

 private:
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
};

/// All splits are stored after reciprocal augmentation.
struct Dataset {
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;  // raw relations; ids span 2 * num_relations

  std::size_t num_relation_ids() const { return 2 * num_relations; }
};

struct FrequencyTable {
  std::vector<std::uint64_t> entity;
  std::vector<std::uint64_t> relation;
};

namespace detail {

struct TsvLine {
  std::string_view head, relation, tail;
};

// Splits one line into exactly three TAB-separated fields.
inline TsvLine split_triple_line(std::string_view line, const std::string& source,
                                 std::size_t lineno) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::string_view fields[3];
  std::size_t count = 0;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (count == 3) {
      throw ParseError(source, lineno, "expected 3 tab-separated fields, got more");
    }
    fields[count++] = line.substr(start, tab == std::string_view::npos ? tab : tab - start);
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (count != 3) {
    throw ParseError(source, lineno,
                     "expected 3 tab-separated fields, got " + std::to_string(count));
  }
  for (const auto& f : fields) {
    if (f.empty()) throw ParseError(source, lineno, "empty field");
  }
  return {fields[0], fields[1], fields[2]};
}

template <typename Fn>
void for_each_triple_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triple file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  const std::string source = path.string();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    fn(split_triple_line(line, source, lineno), lineno);
  }
}

}  // namespace detail

/// Assigns ids in order of first appearance across `files`, in the order given.
inline Vocab build_vocab(const std::vector<std::filesystem::path>& files) {
  if (files.empty()) throw Error("build_vocab: no input files");
  std::vector<std::string> entities, relations;
  std::unordered_map<std::string, EntityId> seen_e;
  std::unordered_map<std::string, RelationId> seen_r;
  auto add_entity = [&](std::string_view name) {
    std::string key(name);
    if (seen_e.emplace(key, static_cast<EntityId>(entities.size())).second) {
      entities.push_back(std::move(key));
    }
  };
  for (const auto& path : files) {
    detail::for_each_triple_line(path, [&](const detail::TsvLine& f, std::size_t lineno) {
      if (f.relation.size() >= kInverseMarker.size() &&
          f.relation.substr(f.relation.size() - kInverseMarker.size()) == kInverseMarker) {
        throw ParseError(path.string(), lineno,
                         "relation name uses reserved suffix " + std::string(kInverseMarker));
      }
      add_entity(f.head);
      std::string rel(f.relation);
      if (seen_r.emplace(rel, static_cast<RelationId>(relations.size())).second) {
        relations.push_back(std::move(rel));
      }
      add_entity(f.tail);
    });
  }
  return Vocab::from_names(std::move(entities), relations);
}

/// Encodes a triple file with an existing vocabulary. Raw relation ids only.
inline std::vector<Triple> load_triples(const std::filesystem::path& path, const Vocab& vocab) {
  std::vector<Triple> out;
  const std::size_t n_raw = vocab.num_relations();
  detail::for_each_triple_line(path, [&](const detail::TsvLine& f, std::size_t lineno) {
    auto entity = [&](std::string_view name) {
      const EntityId* id = vocab.find_entity(std::string(name));
      if (!id) throw ParseError(path.string(), lineno, "unknown entity '" + std::string(name) + "'");
      return *id;
    };
    const RelationId* r = vocab.find_relation(std::string(f.relation));
    if (!r || *r >= n_raw) {
      throw ParseError(path.string(), lineno,
                       "unknown relation '" + std::string(f.relation) + "'");
    }
    out.push_back({entity(f.head), *r, entity(f.tail)});
  });
  return out;
}

/// Appends (t, r + num_relations, h) for every (h, r, t), after the originals.
inline std::vector<Triple> augment_reciprocal(std::span<const Triple> triples,
                                              std::size_t num_relations) {
  std::vector<Triple> out;
  out.reserve(2 * triples.size());
  out.assign(triples.begin(), triples.end());
  for (const Triple& t : triples) {
    if (t.relation >= num_relations) {
      throw Error("augment_reciprocal: relation id " + std::to_string(t.relation) +
                  " is not a raw relation");
    }
    out.push_back({t.tail, static_cast<RelationId>(t.relation + num_relations), t.head});
  }
  return out;
}

/// Reads train/valid/test files, builds the vocabulary over all three and
/// returns augmented splits.
inline std::pair<Vocab, Dataset> load_dataset(const std::filesystem::path& train,
                                              const std::filesystem::path& valid,
                                              const std::filesystem::path& test) {
  Vocab vocab = build_vocab({train, valid, test});
  Dataset ds;
  ds.num_entities = vocab.num_entities();
  ds.num_relations = vocab.num_relations();
  ds.train = augment_reciprocal(load_triples(train, vocab), ds.num_relations);
  ds.valid = augment_reciprocal(load_triples(valid, vocab), ds.num_relations);
  ds.test = augment_reciprocal(load_triples(test, vocab), ds.num_relations);
  return {std::move(vocab), std::move(ds)};
}

/// Writes "id<TAB>name" lines, one file for entities and one for relations.
inline void write_vocab(const Vocab& vocab, const std::filesystem::path& entities_path,
                        const std::filesystem::path& relations_path) {
  auto dump = [](const std::vector<std::string>& names, const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    for (std::size_t i = 0; i < names.size(); ++i) out << i << '\t' << names[i] << '\n';
    if (!out) throw Error("write failed: " + p.string());
  };
  dump(vocab.entity_names(), entities_path);
  dump(vocab.relation_names(), relations_path);
}

/// Writes raw triples as head<TAB>relation<TAB>tail using vocabulary names.
inline void write_triples(std::span<const Triple> triples, const Vocab& vocab,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const Triple& t : triples) {
    out << vocab.entity_names()[t.head] << '\t' << vocab.relation_names()[t.relation] << '\t'
        << vocab.entity_names()[t.tail] << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

/// Self-loops count twice toward n_E: once as head, once as tail.
inline FrequencyTable count_frequencies(std::span<const Triple> augmented_train,
                                        std::size_t num_entities, std::size_t num_relations) {
  FrequencyTable f;
  f.entity.assign(num_entities, 0);
  f.relation.assign(2 * num_relations, 0);
  for (const Triple& t : augmented_train) {
    ++f.entity.at(t.head);
    ++f.entity.at(t.tail);
    ++f.relation.at(t.relation);
  }
  return f;
}

/// (head, relation) -> sorted tails that are true in any split.
class FilterIndex {
 public:
  FilterIndex() = default;

  explicit FilterIndex(std::initializer_list<std::span<const Triple>> splits) {
    for (auto split : splits) add(split);
    finalize();
  }

  static FilterIndex build(const Dataset& ds) { return FilterIndex({ds.train, ds.valid, ds.test}); }

  std::span<const EntityId> tails(EntityId head, RelationId relation) const {
    auto it = index_.find(key(head, relation));
    if (it == index_.end()) return {};
    return it->second;
  }

  bool contains(EntityId head, RelationId relation, EntityId tail) const {
    auto ts = tails(head, relation);
    return std::binary_search(ts.begin(), ts.end(), tail);
  }

  std::size_t num_keys() const { return index_.size(); }

 private:
  static std::uint64_t key(EntityId h, RelationId r) {
    return (static_cast<std::uint64_t>(h) << 32) | r;
  }

  void add(std::span<const Triple> split) {
    for (const Triple& t : split) index_[key(t.head, t.relation)].push_back(t.tail);
  }

  void finalize() {
    for (auto& [k, v] : index_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }

  std::unordered_map<std::uint64_t, std::vector<EntityId>> index_;
};

inline FilterIndex build_filter_index(const Dataset& ds) { return FilterIndex::build(ds); }

/// One epoch of minibatches: a seeded permutation of the triples, chunked.
/// The same (seed, epoch) always yields the same order.
class EpochBatches {
 public:
  EpochBatches(std::span<const Triple> triples, std::size_t batch_size, std::uint64_t seed,
               std::uint64_t epoch)
      : order_(triples.begin(), triples.end()), batch_size_(batch_size) {
    if (batch_size == 0) throw Error("batch_size must be >= 1");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order_.begin(), order_.end(), rng);
  }

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  std::span<const Triple> operator[](std::size_t i) const {
    std::size_t begin = i * batch_size_;
    std::size_t len = std::min(batch_size_, order_.size() - begin);
    return std::span<const Triple>(order_).subspan(begin, len);
  }

  std::span<const Triple> all() const { return order_; }

 private:
  std::vector<Triple> order_;
  std::size_t batch_size_;
};

inline EpochBatches minibatch_iter(std::span<const Triple> triples, std::size_t batch_size,
                                   std::uint64_t seed, std::uint64_t epoch) {
  return EpochBatches(triples, batch_size, seed, epoch);
}

}  // namespace kgvem
