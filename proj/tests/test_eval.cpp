#include <gtest/gtest.h>

#include "support/helpers.hpp"

using namespace condrec;

namespace {

MultiHotTarget target(std::vector<ClassIndex> valid, std::size_t size = 6, Role r = Role::catalyst) {
  return MultiHotTarget(r, std::move(valid), size);
}

Ranking ranking(std::initializer_list<ClassIndex> c) { return Ranking(c); }

}  // namespace

TEST(TopK, Examples) {
  std::vector<Ranking> preds = {ranking({2, 1, 0}), ranking({0, 2, 1}), ranking({1, 0, 2})};
  std::vector<MultiHotTarget> t = {target({1}), target({1}), target({3})};
  EXPECT_DOUBLE_EQ(topk_accuracy(preds, t, 1), 0.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(preds, t, 2), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(preds, t, 3), 2.0 / 3.0);
  // any valid label counts
  std::vector<MultiHotTarget> multi = {target({0, 2}), target({1, 0}), target({1, 5})};
  EXPECT_DOUBLE_EQ(topk_accuracy(preds, multi, 1), 1.0);
}

TEST(TopK, MatchesCountingOracle) {
  testutil::Rng rng(31);
  const std::size_t n = 200, size = 9;
  std::vector<Ranking> preds;
  std::vector<MultiHotTarget> ts;
  std::uniform_int_distribution<ClassIndex> cls(0, size - 1);
  for (std::size_t i = 0; i < n; ++i) {
    Ranking r(size);
    std::iota(r.begin(), r.end(), ClassIndex{0});
    std::shuffle(r.begin(), r.end(), rng);
    preds.push_back(r);
    std::vector<ClassIndex> v = {cls(rng)};
    if (i % 3 == 0) v.push_back(cls(rng));
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    ts.push_back(target(v, size));
  }
  double prev = 0.0;
  for (std::size_t k : {1u, 2u, 3u, 5u, 9u}) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool h = false;
      for (std::size_t j = 0; j < k; ++j)
        for (auto c : ts[i].valid_labels()) h = h || preds[i][j] == c;
      hits += h;
    }
    const double acc = topk_accuracy(preds, ts, k);
    EXPECT_DOUBLE_EQ(acc, static_cast<double>(hits) / n);
    EXPECT_GE(acc, prev);
    prev = acc;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(TopK, LengthMismatchThrows) {
  std::vector<Ranking> preds = {ranking({0})};
  std::vector<MultiHotTarget> t;
  EXPECT_THROW(topk_accuracy(preds, t, 1), DimensionError);
}

TEST(AbsentAudit, SplitsRowsByTarget) {
  std::vector<Ranking> preds = {ranking({0, 1}), ranking({0, 2}), ranking({1, 0}), ranking({2, 0}), ranking({1, 2})};
  std::vector<MultiHotTarget> t = {target({0}), target({0}), target({1}), target({1}), target({0, 1})};
  auto a = absent_audit(Role::catalyst, preds, t);
  EXPECT_EQ(a.rows, 5u);
  EXPECT_EQ(a.absent_rows, 2u);
  EXPECT_EQ(a.present_rows, 3u);
  EXPECT_DOUBLE_EQ(a.absent_at1(), 1.0);
  EXPECT_DOUBLE_EQ(a.present_at1(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(a.all_at1(), 4.0 / 5.0);
  EXPECT_LE(a.decomposition_residual(), 1e-12);
  // masked: drop class 0, rows 2 (1 vs {1}), 3 (2 vs {1}), 4 (1 vs {1})
  EXPECT_DOUBLE_EQ(a.present_masked_at1(), 2.0 / 3.0);
}

TEST(AbsentAudit, AlwaysAbsentPredictor) {
  std::vector<Ranking> preds(100, ranking({0, 1, 2}));
  std::vector<MultiHotTarget> t;
  for (int i = 0; i < 100; ++i) t.push_back(i < 87 ? target({0}) : target({2}));
  auto a = absent_audit(Role::catalyst, preds, t);
  EXPECT_DOUBLE_EQ(a.all_at1(), 0.87);
  EXPECT_DOUBLE_EQ(a.present_at1(), 0.0);
  EXPECT_DOUBLE_EQ(a.absent_at1(), 1.0);
  EXPECT_DOUBLE_EQ(a.absent_share(), 0.87);
}

TEST(Bootstrap, IdenticalSystemsGiveZeroInterval) {
  std::vector<std::uint8_t> a(500);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = i % 3 == 0;
  auto r = paired_bootstrap(a, a, {2000, 7, 0.95, 1});
  EXPECT_EQ(r.delta, 0.0);
  EXPECT_EQ(r.lower, 0.0);
  EXPECT_EQ(r.upper, 0.0);
}

TEST(Bootstrap, DeterministicAndThreadIndependent) {
  testutil::Rng rng(32);
  std::bernoulli_distribution pa(0.5), pb(0.55);
  std::vector<std::uint8_t> a(3000), b(3000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = pa(rng);
    b[i] = pb(rng);
  }
  auto r1 = paired_bootstrap(a, b, {1000, 42, 0.95, 1});
  auto r2 = paired_bootstrap(a, b, {1000, 42, 0.95, 1});
  auto r4 = paired_bootstrap(a, b, {1000, 42, 0.95, 4});
  EXPECT_EQ(r1.lower, r2.lower);
  EXPECT_EQ(r1.upper, r2.upper);
  EXPECT_EQ(r1.lower, r4.lower);
  EXPECT_EQ(r1.upper, r4.upper);
  auto other = paired_bootstrap(a, b, {1000, 43, 0.95, 1});
  EXPECT_TRUE(other.lower != r1.lower || other.upper != r1.upper);
  EXPECT_LE(r1.lower, r1.delta);
  EXPECT_GE(r1.upper, r1.delta);
}

TEST(Bootstrap, MatchesIndependentResampler) {
  // SplitMix64 streams written out here, one per resample.
  auto mix = [](std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::vector<std::uint8_t> a = {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1};
  std::vector<std::uint8_t> b = {1, 1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 1};
  const std::size_t n = a.size(), reps = 301;
  const std::uint64_t seed = 99, golden = 0x9e3779b97f4a7c15ULL;
  std::vector<double> d;
  for (std::size_t r = 0; r < reps; ++r) {
    std::uint64_t state = mix(seed + (r + 1) * golden);
    long s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      state += golden;
      const std::uint64_t x = mix(state);
      const auto j = static_cast<std::size_t>((static_cast<unsigned __int128>(x) * n) >> 64);
      s += int(b[j]) - int(a[j]);
    }
    d.push_back(static_cast<double>(s) / n);
  }
  std::sort(d.begin(), d.end());
  auto pct = [&](double q) {
    const double pos = q * (d.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (d[hi] - d[lo]) * (pos - lo);
  };
  auto r = paired_bootstrap(a, b, {reps, seed, 0.95, 1});
  EXPECT_DOUBLE_EQ(r.lower, pct(0.025));
  EXPECT_DOUBLE_EQ(r.upper, pct(0.975));
  EXPECT_DOUBLE_EQ(r.delta, 2.0 / 17.0);
}

TEST(Bootstrap, InputErrors) {
  std::vector<std::uint8_t> a(3, 1), b(4, 1), none;
  EXPECT_THROW(paired_bootstrap(a, b), DimensionError);
  EXPECT_THROW(paired_bootstrap(none, none), DataError);
  EXPECT_THROW(paired_bootstrap(a, a, {0, 1, 0.95, 1}), UsageError);
}

TEST(Percentile, LinearInterpolation) {
  std::vector<double> v = {1.0, 2.0, 4.0, 8.0};
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 0.25), 1.75);
}

namespace {

struct AuditFixture {
  synth::SynthCorpus corpus;
  std::vector<ReactionRecord> train;
  std::vector<ReactionRecord> test;
  PrecedentIndex index;
  std::vector<AuditQuery> queries;

  explicit AuditFixture(bool planted) {
    synth::SynthSpec spec;
    spec.clusters = 10;
    spec.test_per_cluster = 4;
    spec.planted_overlaps = planted;
    spec.structured_delta = true;
    corpus = synth::generate(spec);
    train = corpus.dataset.of_split(Split::train);
    test = corpus.dataset.of_split(Split::test);
    index = PrecedentIndex::build(corpus.bank, train, corpus.vocabs, KeyKind::rxn_only);
    auto rows = eval_rows(test, corpus.vocabs);
    for (std::size_t i = 0; i < test.size(); ++i) {
      AuditQuery q;
      q.record = &test[i];
      q.query.id = test[i].id;
      q.query.key = bank_key(corpus.bank, *corpus.bank.find(test[i].id), KeyKind::rxn_only);
      q.target = rows[i].targets[0];
      queries.push_back(std::move(q));
    }
  }
};

}  // namespace

TEST(Overlap, SelfMatchesOnlyAtRungZero) {
  synth::SynthSpec spec;
  spec.clusters = 5;
  auto corpus = synth::generate(spec);
  auto train = corpus.dataset.of_split(Split::train);
  auto idx = PrecedentIndex::build(corpus.bank, train, corpus.vocabs, KeyKind::rxn_only);
  auto rows = eval_rows(train, corpus.vocabs);
  std::vector<AuditQuery> qs;
  for (std::size_t i = 0; i < train.size(); i += 5) {
    AuditQuery q;
    q.record = &train[i];
    q.query.key = bank_key(corpus.bank, *corpus.bank.find(train[i].id), KeyKind::rxn_only);
    q.target = rows[i].targets[0];
    qs.push_back(std::move(q));
  }
  auto a = overlap_audit(idx, train, qs, Role::catalyst, kExclusionLadder, 5);
  EXPECT_EQ(a.rungs[0].self_matches, qs.size());
  for (std::size_t r = 1; r < a.rungs.size(); ++r) EXPECT_EQ(a.rungs[r].self_matches, 0u);
}

TEST(Overlap, AlwaysRelevantGivesOne) {
  AuditFixture f(true);
  auto a = overlap_audit(f.index, f.train, f.queries, Role::catalyst, kExclusionLadder, 5,
                         [](ClassIndex, const MultiHotTarget&) { return true; });
  for (const auto& r : a.rungs) EXPECT_DOUBLE_EQ(r.precision, 1.0);
}

TEST(Overlap, PlantedDuplicatesGiveDecreasingLadder) {
  AuditFixture f(true);
  auto a = overlap_audit(f.index, f.train, f.queries, Role::catalyst);
  ASSERT_EQ(a.rungs.size(), 5u);
  EXPECT_TRUE(a.weakly_decreasing()) << to_json(a).dump();
  EXPECT_GT(a.rungs[0].precision, a.rungs[4].precision);
}

TEST(Overlap, RungPredicates) {
  auto q = OverlapFeatures::of(testutil::record("q", {"CCO", "O"}, {"CC=O"}, {}, Split::test, "pubA"));
  auto same = OverlapFeatures::of(testutil::record("n1", {"O", "CCO"}, {"CC=O"}, {}, Split::train));
  auto pair = OverlapFeatures::of(testutil::record("n2", {"CCO", "N"}, {"CC=O", "Cl"}, {}, Split::train));
  auto product = OverlapFeatures::of(testutil::record("n3", {"CCN"}, {"CC=O"}, {}, Split::train));
  auto pub = OverlapFeatures::of(testutil::record("n4", {"CCCl"}, {"CCBr"}, {}, Split::train, "pubA"));
  auto far = OverlapFeatures::of(testutil::record("n5", {"CCCl"}, {"CCBr"}, {}, Split::train, "pubB"));
  EXPECT_FALSE(excluded_at(Exclusion::none, q, same));
  EXPECT_TRUE(excluded_at(Exclusion::same_canonical_reaction, q, same));
  EXPECT_FALSE(excluded_at(Exclusion::same_canonical_reaction, q, pair));
  EXPECT_TRUE(excluded_at(Exclusion::same_reactant_product_pair, q, pair));
  EXPECT_FALSE(excluded_at(Exclusion::same_reactant_product_pair, q, product));
  EXPECT_TRUE(excluded_at(Exclusion::same_product_string, q, product));
  EXPECT_FALSE(excluded_at(Exclusion::same_product_string, q, pub));
  EXPECT_TRUE(excluded_at(Exclusion::same_product_and_publication, q, pub));
  EXPECT_FALSE(excluded_at(Exclusion::same_product_and_publication, q, far));
  EXPECT_EQ(parse_exclusion("same_product_string"), Exclusion::same_product_string);
  EXPECT_THROW(parse_exclusion("nope"), UsageError);
}

namespace {

std::vector<RetrievalConfig> grid_of(std::initializer_list<std::pair<std::uint32_t, std::optional<double>>> kt) {
  std::vector<RetrievalConfig> out;
  for (auto [k, t] : kt) {
    RetrievalConfig c;
    c.k = k;
    c.temperature = t;
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST(Selection, SingleCandidateGrid) {
  auto corpus = synth::generate({});
  auto split = deterministic_split(corpus.dataset.of_split(Split::train), 0.2);
  SelectionInputs in;
  in.bank = &corpus.bank;
  auto grid = grid_of({{7, 0.3}});
  auto res = select_retrieval(grid, split.train, split.validation, corpus.vocabs, in);
  EXPECT_EQ(res.winner, grid[0]);
  EXPECT_EQ(res.table.size(), 1u);
  EXPECT_EQ(res.train_rows + res.validation_rows, corpus.dataset.counts.train);
}

TEST(Selection, LargerKWinsUnderLabelNoise) {
  synth::SynthSpec spec;
  spec.train_label_noise = 0.45;
  spec.clusters = 30;
  spec.train_per_cluster = 30;
  auto corpus = synth::generate(spec);
  auto split = deterministic_split(corpus.dataset.of_split(Split::train), 0.2);
  SelectionInputs in;
  in.bank = &corpus.bank;
  auto grid = grid_of({{1, std::nullopt}, {15, std::nullopt}});
  auto res = select_retrieval(grid, split.train, split.validation, corpus.vocabs, in);
  EXPECT_EQ(res.winner.k, 15u);
  EXPECT_GT(res.table[1].score, res.table[0].score);
}

TEST(Selection, TieBreakPrefersSmallerKThenTemperature) {
  RetrievalConfig base;
  SelectionCandidate a{base, 0.5, {}}, b{base, 0.5 + 1e-14, {}};
  a.config.k = 5;
  b.config.k = 10;
  EXPECT_TRUE(preferred(a, b));
  EXPECT_FALSE(preferred(b, a));
  b.config.k = 5;
  a.config.temperature = 0.1;
  b.config.temperature = std::nullopt;
  EXPECT_TRUE(preferred(a, b));
  b.config.temperature = 0.1;
  b.config.key_kind = KeyKind::drfp;
  EXPECT_TRUE(preferred(a, b));
  b.config.key_kind = a.config.key_kind;
  b.config.alpha = 0.7;
  EXPECT_TRUE(preferred(a, b));
  b.score = 0.6;
  EXPECT_TRUE(preferred(b, a));
}

TEST(Selection, EmptyGridRejected) {
  auto corpus = synth::generate({});
  auto split = deterministic_split(corpus.dataset.of_split(Split::train), 0.2);
  SelectionInputs in;
  in.bank = &corpus.bank;
  std::vector<RetrievalConfig> none;
  EXPECT_THROW(select_retrieval(none, split.train, split.validation, corpus.vocabs, in), UsageError);
}

TEST(Report, InvariantsAndText) {
  std::vector<ReactionRecord> recs = {
      testutil::record("a", {"C"}, {"CC"}, {std::nullopt, "sol1", "rea1"}, Split::test),
      testutil::record("b", {"N"}, {"CN"}, {"cat1", "sol2", std::nullopt}, Split::test)};
  auto vs = testutil::make_vocabs(1, 2, 1);
  auto rows = eval_rows(recs, vs);
  SystemPredictions p{"knn", {}};
  p.rankings[0] = {ranking({0, 1}), ranking({0, 1})};
  p.rankings[1] = {ranking({1, 2, 0}), ranking({1, 2, 0})};
  p.rankings[2] = {ranking({1, 0}), ranking({1, 0})};
  EvalReport rep;
  rep.rows = rows.size();
  rep.systems.push_back(score_system(p, rows));
  EXPECT_NO_THROW(rep.check_invariants());
  const auto& cat = rep.system("knn")->roles[0];
  EXPECT_DOUBLE_EQ(cat.acc1, 0.5);
  EXPECT_DOUBLE_EQ(cat.audit.present_at1(), 0.0);
  EXPECT_DOUBLE_EQ(cat.audit.absent_at1(), 1.0);
  auto txt = to_text(rep);
  EXPECT_NE(txt.find("knn"), std::string::npos);
  EXPECT_NE(txt.find("absent/present audit"), std::string::npos);
  auto j = to_json(rep);
  EXPECT_DOUBLE_EQ(j["systems"][0]["roles"]["catalyst"]["absent@1"].get<double>(), 1.0);

  rep.systems[0].roles[0].acc1 = 1.5;
  EXPECT_THROW(rep.check_invariants(), InvariantError);
}
