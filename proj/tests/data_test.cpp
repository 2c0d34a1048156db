#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "kgvem/data.hpp"
#include "test_util.hpp"

namespace kgvem {
namespace {

using testing::temp_dir;
using testing::write_text;

TEST(BuildVocab, FirstAppearanceOrder) {
  auto dir = temp_dir("vocab_order");
  write_text(dir / "a.txt", "a\tr\tb\nb\ts\tc\n");
  Vocab v = build_vocab({dir / "a.txt"});
  EXPECT_EQ(v.num_entities(), 3u);
  EXPECT_EQ(v.num_relations(), 2u);
  EXPECT_EQ(v.entity_names(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(v.relation_names(), (std::vector<std::string>{"r", "s", "r^-1", "s^-1"}));
  EXPECT_EQ(*v.find_relation("s^-1"), 3u);
}

TEST(BuildVocab, DeterministicAcrossLoads) {
  auto dir = temp_dir("vocab_det");
  write_text(dir / "a.txt", "x\tp\ty\ny\tq\tz\nz\tp\tx\n");
  Vocab a = build_vocab({dir / "a.txt"});
  Vocab b = build_vocab({dir / "a.txt"});
  EXPECT_EQ(a.entity_names(), b.entity_names());
  EXPECT_EQ(a.relation_names(), b.relation_names());
}

TEST(BuildVocab, WrongFieldCountNamesLine) {
  auto dir = temp_dir("vocab_bad");
  write_text(dir / "a.txt", "a\tr\tb\na\tr\n");
  try {
    build_vocab({dir / "a.txt"});
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  write_text(dir / "b.txt", "a\tr\tb\tc\n");
  EXPECT_THROW(build_vocab({dir / "b.txt"}), ParseError);
}

TEST(BuildVocab, EmptyFileSetAndReservedMarker) {
  EXPECT_THROW(build_vocab({}), Error);
  auto dir = temp_dir("vocab_marker");
  write_text(dir / "a.txt", "a\tr^-1\tb\n");
  EXPECT_THROW(build_vocab({dir / "a.txt"}), ParseError);
}

TEST(LoadTriples, EncodesInFileOrder) {
  auto dir = temp_dir("load");
  write_text(dir / "v.txt", "a\tr\tb\n");
  write_text(dir / "t.txt", "a\tr\tb\nb\tr\ta\na\tr\ta\n");
  Vocab v = build_vocab({dir / "v.txt"});
  auto t = load_triples(dir / "t.txt", v);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], (Triple{0, 0, 1}));
  EXPECT_EQ(t[1], (Triple{1, 0, 0}));
  EXPECT_EQ(t[2], (Triple{0, 0, 0}));
}

TEST(LoadTriples, UnknownTokenNamesTokenAndLine) {
  auto dir = temp_dir("load_unknown");
  write_text(dir / "v.txt", "a\tr\tb\n");
  write_text(dir / "t.txt", "a\tr\tb\na\tr\tzz\n");
  Vocab v = build_vocab({dir / "v.txt"});
  try {
    load_triples(dir / "t.txt", v);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
  write_text(dir / "u.txt", "a\tq\tb\n");
  EXPECT_THROW(load_triples(dir / "u.txt", v), ParseError);
  // Inverse names never appear in raw files.
  write_text(dir / "w.txt", "a\tr^-1\tb\n");
  EXPECT_THROW(load_triples(dir / "w.txt", v), ParseError);
}

TEST(AugmentReciprocal, Examples) {
  std::vector<Triple> one{{0, 0, 1}};
  EXPECT_EQ(augment_reciprocal(one, 1), (std::vector<Triple>{{0, 0, 1}, {1, 1, 0}}));
  EXPECT_TRUE(augment_reciprocal(std::vector<Triple>{}, 3).empty());
  std::vector<Triple> loop{{2, 1, 2}};
  EXPECT_EQ(augment_reciprocal(loop, 3), (std::vector<Triple>{{2, 1, 2}, {2, 4, 2}}));
  EXPECT_THROW(augment_reciprocal(std::vector<Triple>{{0, 3, 0}}, 3), Error);
}

TEST(AugmentReciprocal, SecondHalfIsBijectiveImageOfFirst) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<EntityId> e(0, 9);
    std::uniform_int_distribution<RelationId> r(0, 3);
    std::vector<Triple> raw(rng() % 30);
    for (auto& t : raw) t = {e(rng), r(rng), e(rng)};
    auto aug = augment_reciprocal(raw, 4);
    ASSERT_EQ(aug.size(), 2 * raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      EXPECT_EQ(aug[i], raw[i]);
      const Triple& inv = aug[raw.size() + i];
      EXPECT_EQ(inv, (Triple{raw[i].tail, raw[i].relation + 4, raw[i].head}));
      // Inverting again recovers the original.
      EXPECT_EQ((Triple{inv.tail, inv.relation - 4, inv.head}), raw[i]);
    }
  }
}

TEST(CountFrequencies, HandCounts) {
  auto f = count_frequencies(std::vector<Triple>{{0, 0, 1}, {1, 1, 0}}, 2, 1);
  EXPECT_EQ(f.entity, (std::vector<std::uint64_t>{2, 2}));
  EXPECT_EQ(f.relation, (std::vector<std::uint64_t>{1, 1}));

  auto empty = count_frequencies(std::vector<Triple>{}, 3, 2);
  EXPECT_EQ(empty.entity, (std::vector<std::uint64_t>{0, 0, 0}));
  EXPECT_EQ(empty.relation, (std::vector<std::uint64_t>{0, 0, 0, 0}));

  auto loops = count_frequencies(std::vector<Triple>{{0, 0, 0}, {0, 1, 0}}, 2, 1);
  EXPECT_EQ(loops.entity, (std::vector<std::uint64_t>{4, 0}));
  EXPECT_EQ(loops.relation, (std::vector<std::uint64_t>{1, 1}));
}

TEST(CountFrequencies, ConservationProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto aug = testing::random_augmented_triples(12, 3, 5 + trial * 3, rng);
    auto f = count_frequencies(aug, 12, 3);
    EXPECT_EQ(std::accumulate(f.entity.begin(), f.entity.end(), std::uint64_t{0}), 2 * aug.size());
    EXPECT_EQ(std::accumulate(f.relation.begin(), f.relation.end(), std::uint64_t{0}), aug.size());
  }
}

TEST(FilterIndex, UnionAcrossSplits) {
  Dataset ds;
  ds.num_entities = 3;
  ds.num_relations = 1;
  ds.train = {{0, 0, 1}};
  ds.valid = {{0, 0, 2}};
  FilterIndex idx = build_filter_index(ds);
  auto t = idx.tails(0, 0);
  EXPECT_EQ(std::vector<EntityId>(t.begin(), t.end()), (std::vector<EntityId>{1, 2}));
  EXPECT_TRUE(idx.tails(1, 0).empty());
}

TEST(FilterIndex, DeduplicatesAndSeparatesKeys) {
  Dataset ds;
  ds.train = {{0, 0, 1}, {0, 1, 2}};
  ds.valid = {{0, 0, 1}};
  ds.test = {{0, 0, 1}, {1, 0, 1}};
  FilterIndex idx = build_filter_index(ds);
  EXPECT_EQ(idx.tails(0, 0).size(), 1u);
  EXPECT_EQ(idx.tails(0, 1).size(), 1u);
  EXPECT_EQ(idx.tails(0, 1)[0], 2u);
  EXPECT_EQ(idx.tails(1, 0)[0], 1u);
  EXPECT_EQ(idx.num_keys(), 3u);
}

TEST(FilterIndex, CompletenessProperty) {
  std::mt19937_64 rng(11);
  Dataset ds;
  ds.num_entities = 8;
  ds.num_relations = 2;
  ds.train = testing::random_augmented_triples(8, 2, 40, rng);
  ds.valid = testing::random_augmented_triples(8, 2, 10, rng);
  ds.test = testing::random_augmented_triples(8, 2, 10, rng);
  FilterIndex idx = build_filter_index(ds);
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const Triple& t : *split) EXPECT_TRUE(idx.contains(t.head, t.relation, t.tail));
  }
}

TEST(Minibatch, ChunksAndCoverage) {
  std::vector<Triple> ts;
  for (EntityId i = 0; i < 10; ++i) ts.push_back({i, 0, i});
  auto b = minibatch_iter(ts, 3, 42, 1);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_EQ(b[0].size(), 3u);
  EXPECT_EQ(b[1].size(), 3u);
  EXPECT_EQ(b[2].size(), 3u);
  EXPECT_EQ(b[3].size(), 1u);
  std::multiset<EntityId> seen;
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (const Triple& t : b[i]) seen.insert(t.head);
  }
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(std::set<EntityId>(seen.begin(), seen.end()).size(), 10u);
}

TEST(Minibatch, SeedDeterminismAndEpochVariation) {
  std::vector<Triple> ts;
  for (EntityId i = 0; i < 50; ++i) ts.push_back({i, 0, i});
  auto a = minibatch_iter(ts, 7, 5, 3);
  auto b = minibatch_iter(ts, 7, 5, 3);
  EXPECT_TRUE(std::equal(a.all().begin(), a.all().end(), b.all().begin()));
  auto c = minibatch_iter(ts, 7, 5, 4);
  EXPECT_FALSE(std::equal(a.all().begin(), a.all().end(), c.all().begin()));
}

TEST(Minibatch, SingleShortBatchAndZeroSize) {
  std::vector<Triple> ts{{0, 0, 0}, {1, 0, 1}, {2, 0, 2}, {3, 0, 3}};
  auto b = minibatch_iter(ts, 10, 1, 1);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_THROW(minibatch_iter(ts, 0, 1, 1), Error);
}

TEST(LoadDataset, AugmentsEverySplitAndWritesVocab) {
  auto dir = temp_dir("dataset");
  write_text(dir / "train.txt", "a\tr\tb\nb\ts\tc\n");
  write_text(dir / "valid.txt", "a\ts\tc\n");
  write_text(dir / "test.txt", "c\tr\ta\n");
  auto [vocab, ds] = load_dataset(dir / "train.txt", dir / "valid.txt", dir / "test.txt");
  EXPECT_EQ(ds.num_entities, 3u);
  EXPECT_EQ(ds.num_relations, 2u);
  EXPECT_EQ(ds.train.size(), 4u);
  EXPECT_EQ(ds.valid.size(), 2u);
  EXPECT_EQ(ds.test.size(), 2u);
  write_vocab(vocab, dir / "e.tsv", dir / "r.tsv");
  std::ifstream in(dir / "r.tsv");
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(all, "0\tr\n1\ts\n2\tr^-1\n3\ts^-1\n");
}

}  // namespace
}  // namespace kgvem
