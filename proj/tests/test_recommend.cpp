#include <gtest/gtest.h>

#include <numbers>

#include "support/helpers.hpp"

using namespace condrec;
using testutil::neighbor;

namespace {

RoleDistribution dist(std::vector<double> p, Role r = Role::catalyst) { return RoleDistribution(r, std::move(p)); }

std::vector<double> probs(const RoleDistribution& d) { return {d.probs().begin(), d.probs().end()}; }

void expect_near(const RoleDistribution& d, std::vector<double> want, double tol = 1e-12) {
  ASSERT_EQ(d.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(d[static_cast<ClassIndex>(i)], want[i], tol) << i;
}

}  // namespace

TEST(VoteUniform, CountsOverK) {
  std::vector<Neighbor> nb = {neighbor(0.9, 1), neighbor(0.8, 1), neighbor(0.7, 0), neighbor(0.1, 2)};
  expect_near(vote_uniform(nb, Role::solvent, 4), {0.25, 0.5, 0.25, 0.0});
  std::vector<Neighbor> absent = {neighbor(0.5, 0), neighbor(0.4, 0)};
  expect_near(vote_uniform(absent, Role::catalyst, 3), {1.0, 0.0, 0.0});
}

TEST(VoteSoftmax, TwoNeighborExample) {
  std::vector<Neighbor> nb = {neighbor(1.0, 1), neighbor(0.5, 2)};
  auto d = vote_softmax(nb, 0.5, Role::catalyst, 3);
  // logits 2.0 and 1.0
  const double want = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0));
  EXPECT_NEAR(d[1], want, 1e-12);
  EXPECT_NEAR(d[1], 0.7311, 1e-4);
  EXPECT_NEAR(d[2], 1.0 - want, 1e-12);
}

TEST(VoteSoftmax, EqualSimilaritiesMatchUniform) {
  std::vector<Neighbor> nb = {neighbor(0.3, 1), neighbor(0.3, 2), neighbor(0.3, 2)};
  for (double t : {0.01, 1.0, 50.0}) expect_near(vote_softmax(nb, t, Role::reagent, 3), probs(vote_uniform(nb, Role::reagent, 3)));
}

TEST(VoteSoftmax, HugeTemperatureApproachesUniform) {
  std::vector<Neighbor> nb = {neighbor(1.0, 1), neighbor(-1.0, 2), neighbor(0.2, 0), neighbor(0.9, 1)};
  expect_near(vote_softmax(nb, 1e6, Role::catalyst, 3), probs(vote_uniform(nb, Role::catalyst, 3)), 1e-5);
}

TEST(VoteSoftmax, SmallTemperatureApproachesNearest) {
  std::vector<Neighbor> nb = {neighbor(0.95, 2), neighbor(0.90, 1), neighbor(0.5, 1)};
  EXPECT_GT(vote_softmax(nb, 1e-3, Role::catalyst, 3)[2], 1.0 - 1e-12);
}

TEST(Vote, Errors) {
  std::vector<Neighbor> none;
  EXPECT_THROW(vote_uniform(none, Role::catalyst, 3), EmptyNeighborhoodError);
  EXPECT_THROW(vote_softmax(none, 1.0, Role::catalyst, 3), EmptyNeighborhoodError);
  std::vector<Neighbor> nb = {neighbor(0.5, 1)};
  EXPECT_THROW(vote_softmax(nb, 0.0, Role::catalyst, 3), UsageError);
  EXPECT_THROW(vote_softmax(nb, -1.0, Role::catalyst, 3), UsageError);
  EXPECT_THROW(vote_uniform(nb, Role::catalyst, 1), DataError);
  EXPECT_EQ(probs(vote(nb, std::nullopt, Role::catalyst, 2)), (std::vector<double>{0.0, 1.0}));
}

TEST(FuseHybrid, Examples) {
  auto h = dist({0.6, 0.4});
  auto k = dist({0.2, 0.8});
  expect_near(fuse_hybrid(h, k, 0.5), {0.4, 0.6});
  EXPECT_EQ(probs(fuse_hybrid(h, k, 1.0)), probs(h));
  EXPECT_EQ(probs(fuse_hybrid(h, k, 0.0)), probs(k));
  EXPECT_THROW(fuse_hybrid(h, k, 1.5), UsageError);
  EXPECT_THROW(fuse_hybrid(h, dist({0.5, 0.25, 0.25}), 0.5), DimensionError);
  EXPECT_THROW(fuse_hybrid(h, dist({0.5, 0.5}, Role::solvent), 0.5), DimensionError);
}

TEST(FuseHybrid, StaysOnSimplex) {
  testutil::Rng rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    auto out = fuse_hybrid(dist(testutil::random_simplex(rng, 9)), dist(testutil::random_simplex(rng, 9)), u(rng));
    double total = 0.0;
    for (double v : out.probs()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ConditionPrior, MostlyAbsentCatalyst) {
  auto vs = testutil::make_vocabs(2, 1, 1);
  std::vector<ReactionRecord> train;
  for (int i = 0; i < 100; ++i) {
    std::optional<std::string> cat;
    if (i >= 87) cat = i % 2 ? "cat1" : "cat2";
    train.push_back(testutil::record("t" + std::to_string(i), {"C"}, {"CC"}, {cat, "sol1", std::nullopt}));
  }
  auto p = baseline_prior(train, vs, Role::catalyst);
  EXPECT_NEAR(p[0], 0.87, 1e-12);
  EXPECT_EQ(p.argmax(), 0u);
  EXPECT_NEAR(baseline_prior(train, vs, Role::solvent)[1], 1.0, 1e-12);
}

TEST(ConditionPrior, EvenSplitBreaksTowardLowerClass) {
  auto vs = testutil::make_vocabs(2, 1, 1);
  std::vector<ReactionRecord> train = {
      testutil::record("a", {"C"}, {"CC"}, {"cat2", std::nullopt, std::nullopt}),
      testutil::record("b", {"C"}, {"CC"}, {"cat1", std::nullopt, std::nullopt})};
  auto p = baseline_prior(train, vs, Role::catalyst);
  EXPECT_EQ(p[1], 0.5);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(p.argmax(), 1u);
}

TEST(ConditionPrior, IndexFitMatchesRecordFit) {
  auto corpus = synth::generate({});
  auto train = corpus.dataset.of_split(Split::train);
  auto idx = PrecedentIndex::build(corpus.bank, train, corpus.vocabs, KeyKind::rxn_only);
  auto a = ConditionPrior::fit(train, corpus.vocabs);
  auto b = ConditionPrior::fit(idx);
  for (Role r : kRoles) EXPECT_EQ(probs(a[r]), probs(b[r]));
}

TEST(TemplateMajority, SeenUnseenAndMajority) {
  auto vs = testutil::make_vocabs(2, 2, 2);
  std::vector<ReactionRecord> train = {
      testutil::record("a", {"CCO"}, {"CC=O"}, {"cat1", "sol1", std::nullopt}),
      testutil::record("b", {"CCO"}, {"CC=O"}, {"cat1", "sol2", std::nullopt}),
      testutil::record("c", {"CCO"}, {"CC=O"}, {"cat2", "sol2", std::nullopt}),
      testutil::record("d", {"c1ccccc1Br"}, {"c1ccccc1O"}, {std::nullopt, "sol1", "rea1"})};
  auto tm = TemplateMajority::fit(train, vs);
  auto q = testutil::record("q", {"CCO"}, {"CC=O"}, {}, Split::test);
  ASSERT_TRUE(tm.seen(q));
  auto p = tm.predict(q);
  EXPECT_NEAR(p[0][1], 2.0 / 3.0, 1e-12);
  EXPECT_EQ(p[0].argmax(), 1u);
  EXPECT_EQ(p[1].argmax(), 2u);

  auto once = testutil::record("q2", {"c1ccccc1Br"}, {"c1ccccc1O"}, {}, Split::test);
  EXPECT_EQ(tm.predict(once)[2].argmax(), 1u);

  auto unseen = testutil::record("q3", {"CCCCN"}, {"CCCC=O"}, {}, Split::test);
  EXPECT_FALSE(tm.seen(unseen));
  auto prior = ConditionPrior::fit(train, vs);
  for (Role r : kRoles) EXPECT_EQ(probs(tm.predict(unseen)[role_slot(r)]), probs(prior[r]));
}

namespace {

// 20 unit keys on a circle, 18 degrees apart; labels cycle through classes.
struct CircleCorpus {
  PrecedentIndex index;
  VocabularySet vocabs = testutil::make_vocabs(2, 2, 2);
  std::vector<std::string> ids;
};

CircleCorpus circle() {
  CircleCorpus c;
  FloatMatrix keys(20, 2);
  std::vector<RoleLabels> labels;
  for (std::size_t i = 0; i < 20; ++i) {
    const double a = static_cast<double>(i) * 18.0 * std::numbers::pi / 180.0;
    keys.row(i)[0] = static_cast<float>(std::cos(a));
    keys.row(i)[1] = static_cast<float>(std::sin(a));
    c.ids.push_back("c" + std::string(i < 10 ? "0" : "") + std::to_string(i));
    labels.push_back({static_cast<ClassIndex>(i % 3), static_cast<ClassIndex>((i + 1) % 3),
                      static_cast<ClassIndex>(i % 2 + 1)});
  }
  c.index = PrecedentIndex::from_dense(KeyKind::rxn_only, c.ids, keys, labels, {3, 3, 3});
  return c;
}

Query angle_query(double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  return Query{std::nullopt, {static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a))}, std::nullopt};
}

}  // namespace

TEST(Recommender, HandComputedCircleCorpus) {
  auto c = circle();
  Recommender rec(c.index, nullptr);
  RetrievalConfig cfg;
  cfg.k = 3;
  cfg.temperature = std::nullopt;
  // 5 degrees: nearest are rows 0 (5), 1 (13), 19 (23).
  auto out = rec.recommend(angle_query(5.0), cfg);
  ASSERT_EQ(out.neighbors.size(), 3u);
  EXPECT_EQ(out.neighbors[0].id, "c00");
  EXPECT_EQ(out.neighbors[1].id, "c01");
  EXPECT_EQ(out.neighbors[2].id, "c19");
  // catalyst classes 0, 1, 1; solvent 1, 2, 2; reagent 1, 2, 2
  expect_near(out.distribution(Role::catalyst), {1.0 / 3, 2.0 / 3, 0.0});
  expect_near(out.distribution(Role::solvent), {0.0, 1.0 / 3, 2.0 / 3});
  EXPECT_FALSE(out.heads_used);

  cfg.temperature = 0.1;
  out = rec.recommend(angle_query(5.0), cfg);
  const double deg = std::numbers::pi / 180.0;
  const double w0 = std::exp(std::cos(5 * deg) / 0.1), w1 = std::exp(std::cos(13 * deg) / 0.1),
               w19 = std::exp(std::cos(23 * deg) / 0.1);
  const double z = w0 + w1 + w19;
  expect_near(out.distribution(Role::catalyst), {w0 / z, (w1 + w19) / z, 0.0}, 1e-6);
}

TEST(Recommender, AlphaEndpoints) {
  auto c = circle();
  HeadProbabilities heads;
  FloatMatrix m(1, 3);
  m.data = {0.1f, 0.2f, 0.7f};
  for (Role r : kRoles) heads.set(r, {"q"}, m);
  Recommender rec(c.index, &heads);
  auto q = angle_query(40.0);
  q.id = "q";
  RetrievalConfig cfg;
  cfg.k = 1;
  cfg.temperature = std::nullopt;
  cfg.alpha = 1.0;
  auto out = rec.recommend(q, cfg);
  EXPECT_TRUE(out.heads_used);
  for (Role r : kRoles) expect_near(out.distribution(r), {0.1, 0.2, 0.7}, 1e-7);

  cfg.alpha = 0.0;
  out = rec.recommend(q, cfg);
  // k=1: the nearest neighbor (row 2, 36 degrees) alone
  EXPECT_EQ(out.neighbors.at(0).id, "c02");
  EXPECT_EQ(probs(out.distribution(Role::catalyst)), (std::vector<double>{0.0, 0.0, 1.0}));
  EXPECT_EQ(out.distribution(Role::solvent).argmax(), 0u);

  cfg.alpha = 0.5;
  out = rec.recommend(q, cfg);
  expect_near(out.distribution(Role::catalyst), {0.05, 0.1, 0.85}, 1e-7);
}

TEST(Recommender, MissingHeadsFallBackToNeighbors) {
  auto c = circle();
  HeadProbabilities heads;
  Recommender rec(c.index, &heads);
  auto q = angle_query(0.0);
  q.id = "nope";
  auto out = rec.recommend(q, RetrievalConfig{});
  EXPECT_FALSE(out.heads_used);
  EXPECT_EQ(out.config.alpha, 0.0);
}

TEST(Recommender, SelfExclusionAndPriorFallback) {
  auto c = circle();
  Recommender rec(c.index, nullptr);
  auto q = angle_query(0.0);
  q.id = "c00";
  RetrievalConfig cfg;
  cfg.k = 2;
  auto out = rec.recommend(q, cfg);
  for (const auto& n : out.neighbors) EXPECT_NE(n.id, "c00");

  // A one-row index with its own row excluded leaves no neighbors.
  FloatMatrix k1(1, 2);
  k1.row(0)[0] = 1.0f;
  auto tiny = PrecedentIndex::from_dense(KeyKind::rxn_only, {"only"}, k1, {RoleLabels{1, 2, 0}}, {3, 3, 3});
  Recommender r1(tiny, nullptr);
  q.id = "only";
  out = r1.recommend(q, cfg);
  EXPECT_TRUE(out.knn_fallback);
  EXPECT_EQ(out.distribution(Role::catalyst).argmax(), 1u);
}

TEST(Recommender, JsonSchema) {
  auto c = circle();
  Recommender rec(c.index, nullptr);
  RetrievalConfig cfg;
  cfg.k = 4;
  auto j = to_json(rec.recommend(angle_query(100.0), cfg), c.vocabs, 2);
  for (const char* key : {"query", "config", "heads_used", "knn_fallback", "roles", "neighbors"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["neighbors"].size(), 4u);
  EXPECT_EQ(j["roles"]["catalyst"].size(), 2u);
  const auto& top = j["roles"]["solvent"][0];
  EXPECT_TRUE(top.contains("class"));
  EXPECT_TRUE(top.contains("score"));
  EXPECT_TRUE(top["label"].is_null() || top["label"].is_string());
  EXPECT_TRUE(j["neighbors"][0]["labels"].contains("reagent"));
}
