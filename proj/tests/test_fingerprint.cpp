#include <gtest/gtest.h>

#include <set>

#include "support/helpers.hpp"

using namespace condrec;

namespace {

std::uint64_t fnv(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ReactionFingerprint bits(std::size_t n, std::initializer_list<std::size_t> on) {
  ReactionFingerprint fp(n);
  for (auto b : on) fp.set(b);
  return fp;
}

}  // namespace

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Drfp, IdentitySidesGiveEmptyFingerprint) {
  std::vector<std::string> side = {"CCO", "c1ccccc1"};
  EXPECT_EQ(drfp_style(side, side).popcount(), 0u);
}

TEST(Drfp, ReactantOrderDoesNotMatter) {
  std::vector<std::string> a = {"CCO", "CBr", "c1ccccc1N"};
  std::vector<std::string> b = {"c1ccccc1N", "CCO", "CBr"};
  std::vector<std::string> p = {"CCOC", "Br"};
  EXPECT_EQ(drfp_style(a, p), drfp_style(b, p));
}

TEST(Drfp, AtomMapsAreIgnored) {
  std::vector<std::string> r1 = {"[CH3:1][OH:2]"};
  std::vector<std::string> r2 = {"[CH3][OH]"};
  std::vector<std::string> p = {"[CH2:1]=[O:2]"};
  std::vector<std::string> p2 = {"[CH2]=[O]"};
  EXPECT_EQ(drfp_style(r1, p), drfp_style(r2, p2));
}

TEST(Drfp, SmallWorkedFingerprint) {
  // CCO -> CC=O with unigrams to trigrams: shingles on exactly one side.
  const std::set<std::string> diff = {"=", "=O", "C=", "C=O", "CC=", "CCO", "CO"};
  std::set<std::size_t> expect;
  for (const auto& s : diff) expect.insert(fnv(s) % 64);
  std::vector<std::string> r = {"CCO"};
  std::vector<std::string> p = {"CC=O"};
  auto fp = drfp_style(r, p, {64, 1, 3});
  auto on = fp.active_bits();
  EXPECT_EQ(std::set<std::size_t>(on.begin(), on.end()), expect);
  EXPECT_EQ(expect, (std::set<std::size_t>{4, 7, 8, 22, 29, 37, 58}));
}

TEST(Drfp, UnparseableRecordNamesId) {
  auto r = testutil::record("bad1", {"C(C"}, {"CC"}, {});
  try {
    drfp_style(r);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad1"), std::string::npos);
  }
}

TEST(Tanimoto, Examples) {
  auto x = bits(8, {0, 3, 5});
  EXPECT_DOUBLE_EQ(tanimoto(x, x), 1.0);
  EXPECT_DOUBLE_EQ(tanimoto(bits(8, {0, 1}), bits(8, {2, 3})), 0.0);
  EXPECT_DOUBLE_EQ(tanimoto(bits(4, {0, 1}), bits(4, {0, 2})), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(tanimoto(bits(4, {}), bits(4, {})), 1.0);
}

TEST(Tanimoto, LengthMismatch) {
  EXPECT_THROW(tanimoto(ReactionFingerprint(64), ReactionFingerprint(128)), DimensionError);
}

TEST(Tanimoto, SymmetricOnRandomPairs) {
  testutil::Rng rng(5);
  std::uniform_int_distribution<std::size_t> bit(0, 255);
  for (int trial = 0; trial < 200; ++trial) {
    ReactionFingerprint a(256), b(256);
    for (int i = 0; i < 20; ++i) a.set(bit(rng));
    for (int i = 0; i < 20; ++i) b.set(bit(rng));
    EXPECT_EQ(tanimoto(a, b), tanimoto(b, a));
  }
}

TEST(ReactionFingerprint, LengthMustBePowerOfTwo) {
  EXPECT_THROW(ReactionFingerprint(100), UsageError);
  EXPECT_THROW(ReactionFingerprint(0), UsageError);
  EXPECT_NO_THROW(ReactionFingerprint(1024));
}

TEST(ReactionFingerprint, PackRoundTrip) {
  auto fp = bits(128, {0, 7, 8, 63, 64, 127});
  auto packed = fp.packed();
  EXPECT_EQ(packed.size(), 16u);
  EXPECT_EQ(packed[0], 0x81);
  EXPECT_EQ(ReactionFingerprint::from_packed(128, packed), fp);
}

TEST(TemplateKey, HashOfActiveBits) {
  auto fp = bits(64, {3, 40});
  std::string bytes;
  for (std::uint32_t v : {64u, 3u, 40u}) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  EXPECT_EQ(template_key(fp), fnv(bytes));
  EXPECT_NE(template_key(fp), template_key(bits(64, {3, 41})));
}

TEST(FingerprintBank, RoundTrip) {
  testutil::TempDir dir;
  FingerprintBank b;
  b.nbits = 256;
  b.ids = {"x", "y", "z"};
  b.fingerprints = {bits(256, {1, 2}), bits(256, {}), bits(256, {255})};
  save_fingerprint_bank(b, dir / "fp.bin");
  auto back = load_fingerprint_bank(dir / "fp.bin");
  EXPECT_EQ(back.nbits, 256u);
  EXPECT_EQ(back.ids, b.ids);
  EXPECT_EQ(back.fingerprints, b.fingerprints);
}
