#include <gtest/gtest.h>

#include <cstring>

#include "support/helpers.hpp"

using namespace condrec;

namespace {

constexpr std::array<std::uint32_t, kRoleCount> kSizes = {3, 3, 3};

std::string rid(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "r%05zu", i);
  return buf;
}

PrecedentIndex random_index(testutil::Rng& rng, std::size_t n, std::size_t dim, std::size_t duplicates = 0) {
  FloatMatrix keys(n, dim);
  std::vector<std::string> ids;
  std::vector<RoleLabels> labels;
  std::uniform_int_distribution<std::uint32_t> lab(0, 2);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = testutil::random_vector(rng, dim);
    std::copy(v.begin(), v.end(), keys.row(i).begin());
    ids.push_back(rid(i));
    labels.push_back({lab(rng), lab(rng), lab(rng)});
  }
  // exact copies of earlier rows force similarity ties
  for (std::size_t i = 0; i < duplicates && 2 * i + 1 < n; ++i) {
    auto src = keys.row(2 * i);
    std::copy(src.begin(), src.end(), keys.row(n - 1 - i).begin());
  }
  return PrecedentIndex::from_dense(KeyKind::rxn_only, std::move(ids), std::move(keys), std::move(labels), kSizes);
}

std::vector<std::pair<std::string, double>> flatten(const std::vector<Neighbor>& ns) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& n : ns) out.emplace_back(n.id, n.similarity);
  return out;
}

}  // namespace

TEST(PrecedentIndex, KeysAreUnitNorm) {
  testutil::Rng rng(1);
  auto idx = random_index(rng, 40, 16);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    double sq = 0.0;
    for (float v : idx.key(r)) sq += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(PrecedentIndex, OrthonormalKeysKeepNormOne) {
  FloatMatrix keys(4, 4);
  for (std::size_t i = 0; i < 4; ++i) keys.row(i)[i] = 1.0f;
  auto idx = PrecedentIndex::from_dense(KeyKind::rxn_only, {"a", "b", "c", "d"}, keys,
                                        std::vector<RoleLabels>(4), kSizes);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(idx.key(i)[i], 1.0f);
  float q[4] = {0.0f, 0.0f, 3.0f, 0.0f};
  auto top = idx.search(q, 4);
  EXPECT_EQ(top[0].id, "c");
  EXPECT_DOUBLE_EQ(top[0].similarity, 1.0);
  EXPECT_EQ(top[1].similarity, 0.0);
  EXPECT_EQ(top[1].id, "a");
}

TEST(PrecedentIndex, BuildRejectsNonTrainRecords) {
  auto corpus = synth::generate({});
  auto vs = corpus.vocabs;
  std::vector<ReactionRecord> recs = corpus.dataset.of_split(Split::train);
  recs.push_back(corpus.dataset.of_split(Split::test).front());
  EXPECT_THROW(PrecedentIndex::build(corpus.bank, recs, vs, KeyKind::rxn_only), LeakageError);
  EXPECT_THROW(PrecedentIndex::build_drfp(recs, vs), LeakageError);
}

TEST(PrecedentIndex, ConcatDeltaDoublesDimension) {
  synth::SynthSpec spec;
  spec.dim = 256;
  spec.clusters = 3;
  auto corpus = synth::generate(spec);
  auto train = corpus.dataset.of_split(Split::train);
  auto idx = PrecedentIndex::build(corpus.bank, train, corpus.vocabs, KeyKind::rxn_concat_delta);
  EXPECT_EQ(idx.dim(), 512u);
  auto plain = PrecedentIndex::build(corpus.bank, train, corpus.vocabs, KeyKind::rxn_only);
  EXPECT_EQ(plain.dim(), 256u);
}

TEST(PrecedentIndex, SelfMatchComesFirst) {
  auto corpus = synth::generate({});
  auto train = corpus.dataset.of_split(Split::train);
  auto idx = PrecedentIndex::build(corpus.bank, train, corpus.vocabs, KeyKind::rxn_only);
  for (std::size_t i = 0; i < train.size(); i += 7) {
    auto key = bank_key(corpus.bank, *corpus.bank.find(train[i].id), KeyKind::rxn_only);
    auto top = idx.search(key, 3);
    EXPECT_EQ(top[0].id, train[i].id);
    EXPECT_NEAR(top[0].similarity, 1.0, 1e-6);
  }
}

TEST(PrecedentIndex, KLargerThanIndexReturnsAll) {
  testutil::Rng rng(2);
  auto idx = random_index(rng, 5, 8);
  auto q = testutil::random_vector(rng, 8);
  EXPECT_EQ(idx.search(q, 50).size(), 5u);
  EXPECT_THROW(idx.search(q, 0), UsageError);
}

TEST(PrecedentIndex, MatchesBruteForceAcrossThreadCounts) {
  testutil::Rng rng(3);
  auto idx = random_index(rng, 1000, 50, 40);
  for (int t = 0; t < 20; ++t) {
    std::vector<float> q;
    if (t % 4 == 0) {
      auto k = idx.key(static_cast<std::size_t>(2 * t));  // a duplicated row
      q.assign(k.begin(), k.end());
    } else {
      q = testutil::random_vector(rng, 50);
    }
    auto want = testutil::brute_force_topk(idx, q, 10);
    for (std::size_t threads : {1u, 4u, 8u}) {
      SearchOptions opts;
      opts.threads = threads;
      EXPECT_EQ(flatten(idx.search(q, 10, opts)), want) << "threads=" << threads;
    }
  }
}

TEST(PrecedentIndex, TiesBreakById) {
  FloatMatrix keys(3, 2);
  for (std::size_t i = 0; i < 3; ++i) keys.row(i)[0] = 1.0f;
  auto idx = PrecedentIndex::from_dense(KeyKind::rxn_only, {"zz", "aa", "mm"}, keys,
                                        std::vector<RoleLabels>(3), kSizes);
  float q[2] = {1.0f, 0.0f};
  auto top = idx.search(q, 2);
  EXPECT_EQ(top[0].id, "aa");
  EXPECT_EQ(top[1].id, "mm");
}

TEST(PrecedentIndex, ExcludeSkipsRows) {
  testutil::Rng rng(4);
  auto idx = random_index(rng, 30, 6);
  auto k0 = idx.key(0);
  std::vector<float> q(k0.begin(), k0.end());
  SearchOptions opts;
  opts.exclude = [](std::size_t row) { return row == 0; };
  for (const auto& n : idx.search(q, 29, opts)) EXPECT_NE(n.row, 0u);
  EXPECT_EQ(idx.search(q, 30, opts).size(), 29u);
}

TEST(PrecedentIndex, SaveLoadGivesIdenticalResults) {
  testutil::Rng rng(5);
  auto idx = random_index(rng, 300, 24, 10);
  testutil::TempDir dir;
  idx.save(dir / "idx.bin");
  auto back = PrecedentIndex::load(dir / "idx.bin");
  EXPECT_EQ(back.ids(), idx.ids());
  for (int i = 0; i < 100; ++i) {
    auto q = testutil::random_vector(rng, 24);
    EXPECT_EQ(back.search(q, 7), idx.search(q, 7));
  }
}

TEST(PrecedentIndex, CorruptedFileFails) {
  testutil::Rng rng(6);
  auto idx = random_index(rng, 20, 4);
  testutil::TempDir dir;
  idx.save(dir / "idx.bin");
  auto bytes = testutil::slurp(dir / "idx.bin");
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x20;
  testutil::spit(dir / "bad.bin", flipped);
  EXPECT_THROW(PrecedentIndex::load(dir / "bad.bin"), FormatError);
  testutil::spit(dir / "short.bin", bytes.substr(0, bytes.size() - 9));
  EXPECT_THROW(PrecedentIndex::load(dir / "short.bin"), DataError);
  EXPECT_THROW(PrecedentIndex::load(dir / "missing.bin"), DataError);
}

TEST(PrecedentIndex, EmptyIndexRoundTrips) {
  auto idx = PrecedentIndex::from_dense(KeyKind::rxn_only, {}, FloatMatrix(0, 8), {}, kSizes);
  testutil::TempDir dir;
  idx.save(dir / "e.bin");
  auto back = PrecedentIndex::load(dir / "e.bin");
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.dim(), 8u);
  std::vector<float> q(8, 1.0f);
  EXPECT_TRUE(back.search(q, 3).empty());
}

TEST(PrecedentIndex, ZeroNormAndDimensionErrors) {
  FloatMatrix keys(2, 3);
  keys.row(0)[0] = 1.0f;
  try {
    PrecedentIndex::from_dense(KeyKind::rxn_only, {"ok", "zero"}, keys, std::vector<RoleLabels>(2), kSizes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zero"), std::string::npos);
  }
  testutil::Rng rng(7);
  auto idx = random_index(rng, 10, 5);
  std::vector<float> q(4, 1.0f);
  EXPECT_THROW(idx.search(q, 3), DimensionError);
  std::vector<float> zero(5, 0.0f);
  EXPECT_THROW(idx.search(zero, 3), DataError);
}

TEST(PrecedentIndex, FingerprintIndexUsesBinaryCosine) {
  auto vs = testutil::make_vocabs(2, 2, 2);
  std::vector<ReactionRecord> train = {
      testutil::record("a", {"CCO"}, {"CC=O"}, {"cat1", "sol1", "rea1"}),
      testutil::record("b", {"CCN"}, {"CC=N"}, {"cat2", "sol2", std::nullopt}),
      testutil::record("c", {"c1ccccc1Br"}, {"c1ccccc1O"}, {std::nullopt, "sol1", "rea2"})};
  DrfpParams p{256, 1, 3};
  auto idx = PrecedentIndex::build_drfp(train, vs, p);
  EXPECT_EQ(idx.key_kind(), KeyKind::drfp);
  auto q = drfp_style(train[0], p);
  auto top = idx.search(q, 3);
  EXPECT_EQ(top[0].id, "a");
  EXPECT_DOUBLE_EQ(top[0].similarity, 1.0);
  for (const auto& n : top) {
    const auto& fp = idx.fingerprint(n.row);
    std::size_t inter = 0;
    for (std::size_t b = 0; b < 256; ++b) inter += (fp.test(b) && q.test(b)) ? 1 : 0;
    EXPECT_DOUBLE_EQ(n.similarity, inter / std::sqrt(double(fp.popcount()) * double(q.popcount())));
  }
  EXPECT_EQ(top[0].labels, (RoleLabels{1, 1, 1}));
  testutil::TempDir dir;
  idx.save(dir / "fp.bin");
  EXPECT_EQ(PrecedentIndex::load(dir / "fp.bin").search(q, 3), top);
}
