#pragma once

// Evaluation protocol: top-k accuracy against multi-hot targets, the
// absent/present audit, paired bootstrap intervals, the overlap-exclusion
// ladder and validation-selected retrieval.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "condrec/error.hpp"
#include "condrec/fingerprint.hpp"
#include "condrec/hash.hpp"
#include "condrec/index.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"
#include "condrec/recommend.hpp"
#include "condrec/smiles.hpp"

namespace condrec {

/// Class indices in rank order for one row.
using Ranking = std::vector<ClassIndex>;

inline bool hit_at(std::span<const ClassIndex> ranked, const MultiHotTarget& target, std::size_t k) {
  const std::size_t depth = std::min(k, ranked.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (target.contains(ranked[i])) return true;
  }
  return false;
}

inline void check_aligned(std::size_t predictions, std::size_t targets) {
  if (predictions != targets) {
    throw DimensionError("predictions cover " + std::to_string(predictions) + " rows but targets cover " +
                         std::to_string(targets));
  }
}

/// Per-row 0/1 correctness at depth k.
inline std::vector<std::uint8_t> hits(std::span<const Ranking> predictions,
                                      std::span<const MultiHotTarget> targets, std::size_t k) {
  check_aligned(predictions.size(), targets.size());
  if (k < 1) throw UsageError("k must be >= 1");
  std::vector<std::uint8_t> out(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) out[i] = hit_at(predictions[i], targets[i], k) ? 1 : 0;
  return out;
}

inline double mean_of(std::span<const std::uint8_t> v) {
  if (v.empty()) return 0.0;
  std::size_t s = 0;
  for (auto x : v) s += x;
  return static_cast<double>(s) / static_cast<double>(v.size());
}

/// Fraction of rows with any valid target class in the top k. 0 for no rows.
inline double topk_accuracy(std::span<const Ranking> predictions, std::span<const MultiHotTarget> targets,
                            std::size_t k) {
  auto h = hits(predictions, targets, k);
  return mean_of(h);
}

inline std::vector<Ranking> rankings_of(std::span<const RoleDistribution> dists) {
  std::vector<Ranking> out;
  out.reserve(dists.size());
  for (const auto& d : dists) out.push_back(d.ranking());
  return out;
}

// ---------------------------------------------------------------------------
// Absent/present audit

inline bool is_absent_row(const MultiHotTarget& t) {
  return t.valid_labels().size() == 1 && t.valid_labels().front() == kAbsentClass;
}

struct AbsentAudit {
  Role role = Role::catalyst;
  std::size_t rows = 0;
  std::size_t absent_rows = 0;
  std::size_t present_rows = 0;
  std::size_t all_hits = 0;
  std::size_t present_hits = 0;
  std::size_t absent_hits = 0;
  /// Hits when class 0 is dropped from both prediction and target.
  std::size_t present_masked_hits = 0;

  double all_at1() const { return ratio(all_hits, rows); }
  double present_at1() const { return ratio(present_hits, present_rows); }
  double absent_at1() const { return ratio(absent_hits, absent_rows); }
  double present_masked_at1() const { return ratio(present_masked_hits, present_rows); }
  double absent_share() const { return ratio(absent_rows, rows); }

  /// |all@1 - (n_present * present@1 + n_absent * absent@1) / n|.
  double decomposition_residual() const {
    if (rows == 0) return 0.0;
    const double recon = (static_cast<double>(present_rows) * present_at1() +
                          static_cast<double>(absent_rows) * absent_at1()) /
                         static_cast<double>(rows);
    return std::abs(all_at1() - recon);
  }

  static double ratio(std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  }
};

/// Present rows are those whose target holds any present label; absent rows
/// have the target {0}. A prediction of class 0 can hit only an absent row
/// or a mixed duplicate group.
inline AbsentAudit absent_audit(Role role, std::span<const Ranking> predictions,
                                std::span<const MultiHotTarget> targets) {
  check_aligned(predictions.size(), targets.size());
  AbsentAudit a;
  a.role = role;
  a.rows = predictions.size();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& ranked = predictions[i];
    const auto& t = targets[i];
    const bool hit = hit_at(ranked, t, 1);
    a.all_hits += hit;
    if (is_absent_row(t)) {
      ++a.absent_rows;
      a.absent_hits += hit;
      continue;
    }
    ++a.present_rows;
    a.present_hits += hit;
    for (ClassIndex cls : ranked) {
      if (cls == kAbsentClass) continue;
      a.present_masked_hits += t.contains(cls);
      break;
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Paired bootstrap

struct BootstrapConfig {
  std::size_t resamples = 10'000;
  std::uint64_t seed = 0;
  double confidence = 0.95;
  std::size_t threads = 1;

  void validate() const {
    if (resamples < 1) throw UsageError("bootstrap resamples must be >= 1");
    if (!(confidence > 0.0 && confidence < 1.0)) throw UsageError("confidence must lie in (0, 1)");
  }
};

struct BootstrapResult {
  double delta = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t rows = 0;
  std::size_t resamples = 0;
  double confidence = 0.95;
  std::uint64_t seed = 0;

  bool excludes_zero() const noexcept { return lower > 0.0 || upper < 0.0; }
  bool contains(double v) const noexcept { return lower <= v && v <= upper; }
};

/// Seed for resample r: the SplitMix64 finalizer of seed + (r + 1) * golden
/// increment. Each resample draws n row indices from its own stream.
inline std::uint64_t bootstrap_stream_seed(std::uint64_t seed, std::uint64_t resample) {
  return splitmix64_mix(seed + (resample + 1) * SplitMix64::kIncrement);
}

/// Linear interpolation between order statistics at position q * (n - 1).
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvariantError("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

/// mean(b) - mean(a) with a percentile interval over paired row resamples.
inline BootstrapResult paired_bootstrap(std::span<const std::uint8_t> correct_a,
                                        std::span<const std::uint8_t> correct_b,
                                        const BootstrapConfig& cfg = {}) {
  cfg.validate();
  if (correct_a.size() != correct_b.size()) {
    throw DimensionError("paired bootstrap needs equal lengths, got " + std::to_string(correct_a.size()) +
                         " and " + std::to_string(correct_b.size()));
  }
  const std::size_t n = correct_a.size();
  if (n == 0) throw DataError("paired bootstrap over zero rows");

  std::vector<std::int8_t> diff(n);
  std::int64_t observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = static_cast<std::int8_t>(static_cast<int>(correct_b[i] != 0) - static_cast<int>(correct_a[i] != 0));
    observed += diff[i];
  }
  const double nd = static_cast<double>(n);

  std::vector<double> deltas(cfg.resamples);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      SplitMix64 rng(bootstrap_stream_seed(cfg.seed, r));
      std::int64_t s = 0;
      for (std::size_t i = 0; i < n; ++i) s += diff[rng.below(n)];
      deltas[r] = static_cast<double>(s) / nd;
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.resamples));
  if (threads == 1) {
    work(0, cfg.resamples);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (cfg.resamples + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(cfg.resamples, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  std::sort(deltas.begin(), deltas.end());

  BootstrapResult res;
  res.delta = static_cast<double>(observed) / nd;
  const double tail = (1.0 - cfg.confidence) / 2.0;
  res.lower = percentile_sorted(deltas, tail);
  res.upper = percentile_sorted(deltas, 1.0 - tail);
  res.rows = n;
  res.resamples = cfg.resamples;
  res.confidence = cfg.confidence;
  res.seed = cfg.seed;
  return res;
}

inline nlohmann::json to_json(const BootstrapResult& b) {
  return {{"delta", b.delta},       {"ci_lower", b.lower},     {"ci_upper", b.upper},
          {"rows", b.rows},         {"resamples", b.resamples}, {"confidence", b.confidence},
          {"seed", b.seed},         {"method", "percentile"}};
}

// ---------------------------------------------------------------------------
// Overlap audit

enum class Exclusion : std::uint8_t {
  none = 0,
  same_canonical_reaction = 1,
  same_reactant_product_pair = 2,
  same_product_string = 3,
  same_product_and_publication = 4,
};

inline constexpr std::array<Exclusion, 5> kExclusionLadder = {
    Exclusion::none, Exclusion::same_canonical_reaction, Exclusion::same_reactant_product_pair,
    Exclusion::same_product_string, Exclusion::same_product_and_publication};

constexpr std::string_view exclusion_name(Exclusion e) noexcept {
  switch (e) {
    case Exclusion::none: return "none";
    case Exclusion::same_canonical_reaction: return "same_canonical_reaction";
    case Exclusion::same_reactant_product_pair: return "same_reactant_product_pair";
    case Exclusion::same_product_string: return "same_product_string";
    case Exclusion::same_product_and_publication: return "same_product_and_publication";
  }
  return "?";
}

inline Exclusion parse_exclusion(std::string_view name) {
  for (auto e : kExclusionLadder) {
    if (exclusion_name(e) == name) return e;
  }
  throw UsageError("unknown exclusion rung '" + std::string(name) + "'");
}

/// String features compared by the exclusion rungs.
struct OverlapFeatures {
  std::string id;
  std::string canonical;
  std::string product_string;
  std::vector<std::string> reactants;
  std::vector<std::string> products;
  std::optional<std::string> publication;

  static OverlapFeatures of(const ReactionRecord& r) {
    OverlapFeatures f;
    f.id = r.id;
    try {
      f.reactants = smiles::normalized_sorted(r.reactants);
      f.products = smiles::normalized_sorted(r.products);
    } catch (const ParseError& e) {
      throw DataError("reaction '" + r.id + "': " + e.what(), "parse");
    }
    f.product_string = smiles::join_molecules(f.products);
    f.canonical = smiles::join_molecules(f.reactants) + ">>" + f.product_string;
    f.publication = r.publication_proxy;
    return f;
  }
};

inline bool shares_any(std::span<const std::string> a, std::span<const std::string> b) {
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

/// Cumulative: rung r also applies every rung below it. Rung 2 drops
/// neighbors sharing any (reactant molecule, product molecule) pair; rung 4
/// also drops neighbors from the query's publication proxy.
inline bool excluded_at(Exclusion rung, const OverlapFeatures& q, const OverlapFeatures& n) {
  const auto level = static_cast<int>(rung);
  if (level >= 1 && (q.id == n.id || q.canonical == n.canonical)) return true;
  if (level >= 2 && shares_any(q.reactants, n.reactants) && shares_any(q.products, n.products)) return true;
  if (level >= 3 && q.product_string == n.product_string) return true;
  if (level >= 4 && q.publication && n.publication && *q.publication == *n.publication) return true;
  return false;
}

/// neighbor label -> relevant?  Default: any of the query's valid labels.
using RelevancePredicate = std::function<bool(ClassIndex neighbor_label, const MultiHotTarget& query_target)>;

inline bool default_relevance(ClassIndex label, const MultiHotTarget& target) { return target.contains(label); }

struct OverlapRung {
  Exclusion rung = Exclusion::none;
  double precision = 0.0;
  std::size_t queries = 0;
  /// Queries left with no neighbor after exclusion; they are not averaged.
  std::size_t empty_queries = 0;
  /// Queries whose own id survived into the top k.
  std::size_t self_matches = 0;
};

struct OverlapAudit {
  Role role = Role::catalyst;
  std::size_t k = 5;
  std::vector<OverlapRung> rungs;

  bool weakly_decreasing() const {
    for (std::size_t i = 1; i < rungs.size(); ++i) {
      if (rungs[i].precision > rungs[i - 1].precision) return false;
    }
    return true;
  }
};

struct AuditQuery {
  const ReactionRecord* record = nullptr;
  Query query;
  MultiHotTarget target;
};

/// P@k per rung: for each query, neighbors matching the rung are removed
/// before taking the top k, and the precision is the relevant share of the
/// survivors.
inline OverlapAudit overlap_audit(const PrecedentIndex& index, std::span<const ReactionRecord> indexed,
                                  std::span<const AuditQuery> queries, Role role,
                                  std::span<const Exclusion> ladder = kExclusionLadder, std::size_t k = 5,
                                  const RelevancePredicate& relevant = default_relevance,
                                  std::size_t threads = 1) {
  std::unordered_map<std::string_view, const ReactionRecord*> by_id;
  for (const auto& r : indexed) by_id.emplace(r.id, &r);
  std::vector<OverlapFeatures> row_features(index.size());
  for (std::size_t row = 0; row < index.size(); ++row) {
    auto it = by_id.find(index.ids()[row]);
    if (it == by_id.end()) throw DataError("indexed reaction '" + index.ids()[row] + "' has no record");
    row_features[row] = OverlapFeatures::of(*it->second);
  }

  OverlapAudit audit;
  audit.role = role;
  audit.k = k;
  for (Exclusion rung : ladder) {
    OverlapRung out;
    out.rung = rung;
    double total = 0.0;
    for (const auto& q : queries) {
      const auto qf = OverlapFeatures::of(*q.record);
      PrecedentIndex::SearchOptions opts;
      opts.threads = threads;
      if (rung != Exclusion::none) {
        opts.exclude = [&](std::size_t row) { return excluded_at(rung, qf, row_features[row]); };
      }
      auto nbs = q.query.fingerprint ? index.search(*q.query.fingerprint, k, opts)
                                     : index.search(q.query.key, k, opts);
      ++out.queries;
      if (nbs.empty()) {
        ++out.empty_queries;
        continue;
      }
      std::size_t good = 0;
      for (const auto& nb : nbs) {
        good += relevant(nb.label(role), q.target) ? 1 : 0;
        if (nb.id == q.record->id) ++out.self_matches;
      }
      total += static_cast<double>(good) / static_cast<double>(nbs.size());
    }
    const std::size_t scored = out.queries - out.empty_queries;
    out.precision = scored == 0 ? 0.0 : total / static_cast<double>(scored);
    audit.rungs.push_back(out);
  }
  return audit;
}

inline nlohmann::json to_json(const OverlapAudit& a) {
  nlohmann::json rungs = nlohmann::json::array();
  for (const auto& r : a.rungs) {
    rungs.push_back({{"exclusion", exclusion_name(r.rung)},
                     {"precision_at_k", r.precision},
                     {"queries", r.queries},
                     {"empty_queries", r.empty_queries},
                     {"self_matches", r.self_matches}});
  }
  return {{"role", role_name(a.role)}, {"k", a.k}, {"relevance", "neighbor label in query's valid labels"},
          {"rungs", std::move(rungs)}};
}

// ---------------------------------------------------------------------------
// Scoring systems over a query set

struct RoleMetrics {
  Role role = Role::catalyst;
  double acc1 = 0.0;
  double acc3 = 0.0;
  double acc5 = 0.0;
  AbsentAudit audit;
};

inline RoleMetrics score_role(Role role, std::span<const Ranking> predictions,
                              std::span<const MultiHotTarget> targets) {
  RoleMetrics m;
  m.role = role;
  m.acc1 = topk_accuracy(predictions, targets, 1);
  m.acc3 = topk_accuracy(predictions, targets, 3);
  m.acc5 = topk_accuracy(predictions, targets, 5);
  m.audit = absent_audit(role, predictions, targets);
  return m;
}

/// Per-role rankings for every evaluated row of one predictor.
struct SystemPredictions {
  std::string name;
  std::array<std::vector<Ranking>, kRoleCount> rankings;
};

struct SystemResult {
  std::string name;
  std::array<RoleMetrics, kRoleCount> roles;
};

struct Comparison {
  Role role = Role::catalyst;
  std::string baseline;
  std::string candidate;
  BootstrapResult result;
};

struct EvalRow {
  std::string id;
  std::array<MultiHotTarget, kRoleCount> targets;
};

struct EvalReport {
  std::string split = "test";
  std::size_t rows = 0;
  RetrievalConfig config;
  BootstrapConfig bootstrap;
  std::vector<SystemResult> systems;
  std::vector<Comparison> comparisons;
  std::optional<nlohmann::json> selection;
  std::optional<nlohmann::json> overlap;
  nlohmann::json provenance = nlohmann::json::object();

  const SystemResult* system(std::string_view name) const {
    for (const auto& s : systems) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  /// Accuracies within [0, 1], row partitions summing, CI bracketing and the
  /// decomposition identity to 1e-12.
  void check_invariants() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    for (const auto& s : systems) {
      for (const auto& m : s.roles) {
        const auto& a = m.audit;
        if (!in_unit(m.acc1) || !in_unit(m.acc3) || !in_unit(m.acc5) || !in_unit(a.present_at1()) ||
            !in_unit(a.absent_at1())) {
          throw InvariantError(s.name + ": accuracy outside [0, 1]");
        }
        if (m.acc1 > m.acc3 || m.acc3 > m.acc5) throw InvariantError(s.name + ": Acc@k not monotone in k");
        if (a.present_rows + a.absent_rows != a.rows) throw InvariantError(s.name + ": row partition mismatch");
        if (a.decomposition_residual() > 1e-12) {
          throw InvariantError(s.name + ": all@1 does not decompose into present and absent rows");
        }
      }
    }
  }
};

inline std::vector<EvalRow> eval_rows(std::span<const ReactionRecord> records, const VocabularySet& vocabs) {
  auto targets = duplicate_group_targets(records, vocabs);
  std::vector<EvalRow> rows;
  rows.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) rows.push_back({records[i].id, std::move(targets[i])});
  return rows;
}

inline std::vector<MultiHotTarget> role_targets(std::span<const EvalRow> rows, Role role) {
  std::vector<MultiHotTarget> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.targets[role_slot(role)]);
  return out;
}

inline SystemResult score_system(const SystemPredictions& p, std::span<const EvalRow> rows) {
  SystemResult s;
  s.name = p.name;
  for (Role r : kRoles) {
    auto t = role_targets(rows, r);
    s.roles[role_slot(r)] = score_role(r, p.rankings[role_slot(r)], t);
  }
  return s;
}

inline Comparison compare_systems(Role role, const SystemPredictions& baseline, const SystemPredictions& candidate,
                                  std::span<const EvalRow> rows, const BootstrapConfig& cfg) {
  auto t = role_targets(rows, role);
  auto a = hits(baseline.rankings[role_slot(role)], t, 1);
  auto b = hits(candidate.rankings[role_slot(role)], t, 1);
  return Comparison{role, baseline.name, candidate.name, paired_bootstrap(a, b, cfg)};
}

inline nlohmann::json to_json(const RoleMetrics& m) {
  const auto& a = m.audit;
  return {{"acc@1", m.acc1},
          {"acc@3", m.acc3},
          {"acc@5", m.acc5},
          {"all@1", a.all_at1()},
          {"present@1", a.present_at1()},
          {"absent@1", a.absent_at1()},
          {"present_masked@1", a.present_masked_at1()},
          {"rows", a.rows},
          {"present_rows", a.present_rows},
          {"absent_rows", a.absent_rows},
          {"absent_share", a.absent_share()}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json systems = nlohmann::json::array();
  for (const auto& s : r.systems) {
    nlohmann::json roles = nlohmann::json::object();
    for (const auto& m : s.roles) roles[std::string(role_name(m.role))] = to_json(m);
    systems.push_back({{"name", s.name}, {"roles", std::move(roles)}});
  }
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : r.comparisons) {
    comps.push_back({{"role", role_name(c.role)},
                     {"baseline", c.baseline},
                     {"candidate", c.candidate},
                     {"metric", "acc@1"},
                     {"bootstrap", to_json(c.result)}});
  }
  nlohmann::json j = {{"split", r.split},
                      {"rows", r.rows},
                      {"config", r.config},
                      {"bootstrap", {{"resamples", r.bootstrap.resamples},
                                     {"seed", r.bootstrap.seed},
                                     {"confidence", r.bootstrap.confidence},
                                     {"method", "percentile"},
                                     {"rng", "splitmix64, one stream per resample"}}},
                      {"systems", std::move(systems)},
                      {"comparisons", std::move(comps)},
                      {"provenance", r.provenance}};
  if (r.selection) j["selection"] = *r.selection;
  if (r.overlap) j["overlap"] = *r.overlap;
  return j;
}

inline std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

/// Plain-text tables: accuracy per system and role, the absent/present
/// audit, and bootstrap deltas.
inline std::string to_text(const EvalReport& r) {
  std::string out;
  out += "split " + r.split + ", " + std::to_string(r.rows) + " rows, key " +
         std::string(key_kind_name(r.config.key_kind)) + ", k=" + std::to_string(r.config.k) + ", t=" +
         r.config.temperature_label() + ", alpha=" + fixed(r.config.alpha, 2) + "\n\n";

  out += pad("system", 20);
  for (Role role : kRoles) {
    const std::string n(role_name(role));
    out += pad(n.substr(0, 3) + "@1", 8) + pad(n.substr(0, 3) + "@3", 8) + pad(n.substr(0, 3) + "@5", 8);
  }
  out += "\n";
  for (const auto& s : r.systems) {
    out += pad(s.name, 20);
    for (const auto& m : s.roles) out += pad(fixed(m.acc1), 8) + pad(fixed(m.acc3), 8) + pad(fixed(m.acc5), 8);
    out += "\n";
  }

  out += "\nabsent/present audit (acc@1)\n";
  out += pad("system", 20) + pad("role", 10) + pad("absent", 18) + pad("all", 8) + pad("present", 9) +
         pad("absent", 8) + "masked\n";
  for (const auto& s : r.systems) {
    for (const auto& m : s.roles) {
      const auto& a = m.audit;
      out += pad(s.name, 20) + pad(std::string(role_name(m.role)), 10) +
             pad(std::to_string(a.absent_rows) + " (" + fixed(100.0 * a.absent_share(), 1) + "%)", 18) +
             pad(fixed(a.all_at1()), 8) + pad(fixed(a.present_at1()), 9) + pad(fixed(a.absent_at1()), 8) +
             fixed(a.present_masked_at1()) + "\n";
    }
  }

  if (!r.comparisons.empty()) {
    out += "\npaired bootstrap, acc@1 delta (" + std::to_string(r.bootstrap.resamples) + " resamples, " +
           fixed(100.0 * r.bootstrap.confidence, 0) + "% percentile CI)\n";
    for (const auto& c : r.comparisons) {
      out += pad(c.candidate + " - " + c.baseline, 28) + pad(std::string(role_name(c.role)), 10) +
             pad((c.result.delta >= 0 ? "+" : "") + fixed(100.0 * c.result.delta, 2), 8) + "[" +
             fixed(100.0 * c.result.lower, 2) + ", " + fixed(100.0 * c.result.upper, 2) + "]\n";
    }
  }
  if (r.overlap) {
    out += "\noverlap audit\n";
    for (const auto& rung : (*r.overlap)["rungs"]) {
      out += pad(rung["exclusion"].get<std::string>(), 32) + fixed(rung["precision_at_k"].get<double>(), 4) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation-selected retrieval

/// Mean Acc@k over one role, or over all roles when `role` is empty.
struct SelectionMetric {
  std::optional<Role> role;
  std::size_t k = 1;

  std::string name() const {
    return "acc@" + std::to_string(k) + (role ? "/" + std::string(role_name(*role)) : "/mean");
  }
};

struct SelectionCandidate {
  RetrievalConfig config;
  double score = 0.0;
  std::array<double, kRoleCount> role_scores{};
};

struct SelectionResult {
  RetrievalConfig winner;
  SelectionMetric metric;
  std::vector<SelectionCandidate> table;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
};

/// Strict preference: higher score, then smaller k, smaller t (uniform is
/// the t -> infinity limit), key kind order, smaller alpha.
inline bool preferred(const SelectionCandidate& a, const SelectionCandidate& b) {
  constexpr double kScoreTie = 1e-12;
  if (std::abs(a.score - b.score) > kScoreTie) return a.score > b.score;
  if (a.config.k != b.config.k) return a.config.k < b.config.k;
  const double ta = a.config.temperature.value_or(std::numeric_limits<double>::infinity());
  const double tb = b.config.temperature.value_or(std::numeric_limits<double>::infinity());
  if (ta != tb) return ta < tb;
  if (a.config.key_kind != b.config.key_kind) return a.config.key_kind < b.config.key_kind;
  return a.config.alpha < b.config.alpha;
}

struct SelectionInputs {
  /// Embedding keys for selection-train and validation ids; unused by drfp.
  const EmbeddingBank* bank = nullptr;
  /// Optional head probabilities for validation ids; when absent the
  /// neighbor vote alone is scored.
  const HeadProbabilities* heads = nullptr;
  DrfpParams drfp;
  std::size_t threads = 1;
};

inline Query query_for(const ReactionRecord& rec, KeyKind kind, const SelectionInputs& in) {
  Query q;
  q.id = rec.id;
  if (kind == KeyKind::drfp) {
    q.fingerprint = drfp_style(rec, in.drfp);
  } else {
    if (in.bank == nullptr) throw UsageError("embedding keys need a bank");
    auto row = in.bank->find(rec.id);
    if (!row) throw DataError("reaction '" + rec.id + "' has no embedding in the bank");
    q.key = bank_key(*in.bank, *row, kind);
  }
  return q;
}

/// Builds one index per key kind on selection-train only, scores every
/// candidate on selection-validation, and returns the preferred one with the
/// full score table. Only tagged subsets are accepted.
inline SelectionResult select_retrieval(std::span<const RetrievalConfig> grid, const SelectionTrain& train,
                                        const SelectionValidation& validation, const VocabularySet& vocabs,
                                        const SelectionInputs& in, const SelectionMetric& metric = {}) {
  if (grid.empty()) throw UsageError("selection grid is empty");
  if (train.size() == 0) throw DataError("selection-train subset is empty");
  if (validation.size() == 0) throw DataError("selection-validation subset is empty");
  for (const auto& cfg : grid) cfg.validate();

  auto rows = eval_rows(validation.records(), vocabs);
  std::map<KeyKind, PrecedentIndex> indexes;
  std::map<KeyKind, std::vector<Query>> queries;
  for (const auto& cfg : grid) {
    if (indexes.count(cfg.key_kind)) continue;
    indexes.emplace(cfg.key_kind, cfg.key_kind == KeyKind::drfp
                                      ? PrecedentIndex::build_drfp(train.records(), vocabs, in.drfp)
                                      : PrecedentIndex::build(*in.bank, train.records(), vocabs, cfg.key_kind));
    auto& qs = queries[cfg.key_kind];
    for (const auto& rec : validation.records()) qs.push_back(query_for(rec, cfg.key_kind, in));
  }

  SelectionResult result;
  result.metric = metric;
  result.train_rows = train.size();
  result.validation_rows = validation.size();
  RecommendOptions ropts;
  ropts.threads = in.threads;
  for (const auto& cfg : grid) {
    Recommender rec(indexes.at(cfg.key_kind), in.heads);
    SystemPredictions preds;
    for (const auto& q : queries.at(cfg.key_kind)) {
      auto out = rec.recommend(q, cfg, ropts);
      for (Role r : kRoles) preds.rankings[role_slot(r)].push_back(out.distribution(r).ranking());
    }
    SelectionCandidate cand;
    cand.config = cfg;
    double sum = 0.0;
    for (Role r : kRoles) {
      auto t = role_targets(rows, r);
      cand.role_scores[role_slot(r)] = topk_accuracy(preds.rankings[role_slot(r)], t, metric.k);
      sum += cand.role_scores[role_slot(r)];
    }
    cand.score = metric.role ? cand.role_scores[role_slot(*metric.role)] : sum / static_cast<double>(kRoleCount);
    result.table.push_back(cand);
  }
  const auto best = std::min_element(result.table.begin(), result.table.end(),
                                     [](const auto& a, const auto& b) { return preferred(a, b); });
  result.winner = best->config;
  return result;
}

inline nlohmann::json to_json(const SelectionResult& s) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& c : s.table) {
    table.push_back({{"config", c.config},
                     {"score", c.score},
                     {"catalyst", c.role_scores[0]},
                     {"solvent", c.role_scores[1]},
                     {"reagent", c.role_scores[2]}});
  }
  return {{"winner", s.winner},
          {"metric", s.metric.name()},
          {"tie_break", "smaller k, then smaller t (uniform last), then key kind order, then smaller alpha"},
          {"selection_train_rows", s.train_rows},
          {"selection_validation_rows", s.validation_rows},
          {"candidates", std::move(table)}};
}

inline RetrievalConfig retrieval_config_from_json(const nlohmann::json& j) {
  RetrievalConfig c;
  c.key_kind = parse_key_kind(j.at("key").get<std::string>());
  c.k = j.at("k").get<std::uint32_t>();
  const auto& t = j.at("temperature");
  c.temperature = t.is_string() ? parse_temperature(t.get<std::string>()) : std::optional<double>(t.get<double>());
  c.alpha = j.at("alpha").get<double>();
  c.validate();
  return c;
}

}  // namespace condrec
