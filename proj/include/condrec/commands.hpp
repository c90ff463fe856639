#pragma once

// Pipeline stages behind the command-line tool. Each command validates its
// options, reads its inputs, writes primary outputs under --out and ends
// with a run manifest.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condrec/binary_io.hpp"
#include "condrec/error.hpp"
#include "condrec/eval.hpp"
#include "condrec/fingerprint.hpp"
#include "condrec/index.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"
#include "condrec/recommend.hpp"
#include "condrec/synthetic.hpp"
#include "condrec/version.hpp"

namespace condrec::cli {

namespace fs = std::filesystem;

struct Options {
  fs::path dataset;
  fs::path vocab;
  fs::path bank;
  fs::path index;
  fs::path heads;
  fs::path out;
  fs::path spec;

  std::string key = "rxn";
  std::uint32_t k = 10;
  std::string temp = "uniform";
  double alpha = 0.5;
  std::string role;
  std::uint64_t seed = 0;
  std::size_t resamples = 10'000;
  std::string exclusion = "same_product_and_publication";
  std::size_t threads = 1;

  std::string split = "test";
  std::vector<std::string> query_ids;
  std::size_t top = 10;

  double validation_fraction = 0.1;
  std::string grid_k = "1,5,10,15";
  std::string grid_temp = "uniform,0.07";
  std::string grid_key = "rxn,rxn+delta";

  std::size_t drfp_bits = 2048;
  std::uint32_t drfp_k = 10;
  std::string drfp_temp = "uniform";
  std::size_t audit_k = 5;

  std::string host = "127.0.0.1";
  int port = 8080;
  std::uint32_t max_k = 100;
};

inline nlohmann::json to_json(const Options& o) {
  return {{"dataset", o.dataset.string()},
          {"vocab", o.vocab.string()},
          {"bank", o.bank.string()},
          {"index", o.index.string()},
          {"heads", o.heads.string()},
          {"out", o.out.string()},
          {"spec", o.spec.string()},
          {"key", o.key},
          {"k", o.k},
          {"temp", o.temp},
          {"alpha", o.alpha},
          {"role", o.role},
          {"seed", o.seed},
          {"resamples", o.resamples},
          {"exclusion", o.exclusion},
          {"threads", o.threads},
          {"split", o.split},
          {"query_ids", o.query_ids},
          {"top", o.top},
          {"validation_fraction", o.validation_fraction},
          {"grid_k", o.grid_k},
          {"grid_temp", o.grid_temp},
          {"grid_key", o.grid_key},
          {"drfp_bits", o.drfp_bits},
          {"drfp_k", o.drfp_k},
          {"drfp_temp", o.drfp_temp},
          {"audit_k", o.audit_k}};
}

// ---------------------------------------------------------------------------
// Option parsing helpers

inline RetrievalConfig retrieval_config(const Options& o) {
  RetrievalConfig c;
  c.key_kind = parse_key_kind(o.key);
  c.k = o.k;
  c.temperature = parse_temperature(o.temp);
  c.alpha = o.alpha;
  c.validate();
  return c;
}

inline DrfpParams drfp_params(const Options& o) {
  DrfpParams p;
  p.nbits = o.drfp_bits;
  ReactionFingerprint probe(p.nbits);
  return p;
}

inline std::vector<Role> roles_of(const Options& o) {
  if (o.role.empty() || o.role == "all") return {kRoles.begin(), kRoles.end()};
  return {parse_role(o.role)};
}

inline Split eval_split(const Options& o) {
  auto s = parse_split(o.split);
  if (!s) throw UsageError("unknown split '" + o.split + "'");
  if (*s == Split::train) throw UsageError("evaluation on the train split is not allowed");
  return *s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<RetrievalConfig> selection_grid(const Options& o) {
  std::vector<RetrievalConfig> grid;
  const auto keys = split_list(o.grid_key);
  const auto ks = split_list(o.grid_k);
  const auto temps = split_list(o.grid_temp);
  if (keys.empty() || ks.empty() || temps.empty()) throw UsageError("selection grid is empty");
  for (const auto& key : keys) {
    for (const auto& k : ks) {
      for (const auto& t : temps) {
        RetrievalConfig c;
        c.key_kind = parse_key_kind(key);
        try {
          std::size_t used = 0;
          const long v = std::stol(k, &used);
          if (used != k.size() || v < 1) throw std::invalid_argument("k");
          c.k = static_cast<std::uint32_t>(v);
        } catch (const std::exception&) {
          throw UsageError("grid k values must be positive integers, got '" + k + "'");
        }
        c.temperature = parse_temperature(t);
        c.alpha = o.alpha;
        c.validate();
        grid.push_back(c);
      }
    }
  }
  return grid;
}

inline void require_file(const fs::path& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string("missing required flag ") + flag);
  if (!fs::exists(p)) throw DataError(std::string(flag) + " path does not exist: " + p.string(), "missing_file");
}

inline void require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("missing required flag --out");
}

inline fs::path vocab_dir(const Options& o) {
  return o.vocab.empty() ? o.dataset.parent_path() / "vocab" : o.vocab;
}

// ---------------------------------------------------------------------------
// Run manifest

struct InputChecksum {
  std::string path;
  std::uint64_t bytes = 0;
  std::uint64_t fnv1a64 = 0;
};

inline InputChecksum checksum_of(const fs::path& path) {
  InputChecksum c;
  c.path = path.string();
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& f : files) {
    auto data = io::read_file(f);
    c.bytes += data.size();
    if (files.size() > 1) h = fnv1a64(fs::relative(f, path).generic_string(), h);
    h = fnv1a64(std::span<const std::uint8_t>(data), h);
  }
  c.fnv1a64 = h;
  return c;
}

class RunManifest {
 public:
  RunManifest(std::string command, const Options& opts)
      : command_(std::move(command)), config_(cli::to_json(opts)), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) {
    if (!p.empty() && fs::exists(p)) inputs_.push_back(checksum_of(p));
  }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void note(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

  nlohmann::json to_json() const {
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& c : inputs_) {
      inputs.push_back({{"path", c.path}, {"bytes", c.bytes}, {"fnv1a64", io::hex64(c.fnv1a64)}});
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::json j = {{"command", command_}, {"version", kVersion}, {"config", config_},
                        {"inputs", std::move(inputs)}, {"outputs", outputs_}, {"wall_time_seconds", wall}};
    for (auto it = extra_.begin(); it != extra_.end(); ++it) j[it.key()] = it.value();
    return j;
  }

  void write(const fs::path& out_dir) const {
    io::write_text_atomic(out_dir / "manifest.json", to_json().dump(2) + "\n");
  }

 private:
  std::string command_;
  nlohmann::json config_;
  std::chrono::steady_clock::time_point start_;
  std::vector<InputChecksum> inputs_;
  std::vector<std::string> outputs_;
  nlohmann::json extra_ = nlohmann::json::object();
};

inline void write_json(const fs::path& path, const nlohmann::json& j, RunManifest& m) {
  io::write_text_atomic(path, j.dump(2) + "\n");
  m.output(path);
}

inline void write_text(const fs::path& path, const std::string& text, RunManifest& m) {
  io::write_text_atomic(path, text);
  m.output(path);
}

// ---------------------------------------------------------------------------
// Shared loading

struct Inputs {
  Dataset dataset;
  VocabularySet vocabs;
  std::optional<EmbeddingBank> bank;
  std::optional<HeadProbabilities> heads;
  std::optional<PrecedentIndex> index;

  std::vector<ReactionRecord> train() const { return dataset.of_split(Split::train); }
};

inline Inputs load_inputs(const Options& o, RunManifest& m, bool need_bank, bool want_heads, bool want_index) {
  Inputs in;
  require_file(o.dataset, "--dataset");
  const auto vdir = vocab_dir(o);
  require_file(vdir, "--vocab");
  if (need_bank) require_file(o.bank, "--bank");
  if (want_heads && !o.heads.empty()) require_file(o.heads, "--heads");
  if (want_index && !o.index.empty()) require_file(o.index, "--index");

  in.dataset = load_reactions(o.dataset);
  m.input(o.dataset);
  in.vocabs = VocabularySet::load_dir(vdir);
  m.input(vdir);
  validate_dataset(in.dataset, in.vocabs);
  if (!o.bank.empty()) {
    require_file(o.bank, "--bank");
    in.bank = load_embedding_bank(o.bank);
    m.input(o.bank);
  }
  if (want_heads && !o.heads.empty()) {
    in.heads = load_head_probabilities(o.heads);
    in.heads->check_against(in.vocabs);
    m.input(o.heads);
  }
  if (want_index && !o.index.empty()) {
    in.index = PrecedentIndex::load(o.index);
    m.input(o.index);
  }
  return in;
}

/// Query key for a record against an index: bank row for embedding keys,
/// drfp-style fingerprint for fingerprint keys.
inline Query query_for_record(const ReactionRecord& rec, const PrecedentIndex& index, const EmbeddingBank* bank) {
  Query q;
  q.id = rec.id;
  if (index.key_kind() == KeyKind::drfp) {
    q.fingerprint = drfp_style(rec, index.drfp_params());
    return q;
  }
  if (bank == nullptr) throw UsageError("embedding-keyed index needs --bank for queries");
  auto row = bank->find(rec.id);
  if (!row) throw DataError("reaction '" + rec.id + "' has no embedding in the bank", "unknown_id");
  q.key = bank_key(*bank, *row, index.key_kind());
  return q;
}

inline PrecedentIndex build_index_for(const Inputs& in, KeyKind kind, const DrfpParams& drfp) {
  auto train = in.train();
  if (kind == KeyKind::drfp) return PrecedentIndex::build_drfp(train, in.vocabs, drfp);
  if (!in.bank) throw UsageError("embedding keys need --bank");
  return PrecedentIndex::build(*in.bank, train, in.vocabs, kind);
}

inline void check_index_vocab(const PrecedentIndex& index, const VocabularySet& vocabs) {
  for (Role r : kRoles) {
    if (index.vocab_sizes()[role_slot(r)] != vocabs[r].size_with_absent()) {
      throw DataError("index was built with a different " + std::string(role_name(r)) + " vocabulary",
                      "schema_mismatch");
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation driver

struct EvalInputs {
  const Dataset* dataset = nullptr;
  const VocabularySet* vocabs = nullptr;
  const EmbeddingBank* bank = nullptr;
  const HeadProbabilities* heads = nullptr;
  /// Prebuilt train index for the configured key kind; built when null.
  const PrecedentIndex* index = nullptr;
  RetrievalConfig config;
  Split split = Split::test;
  BootstrapConfig bootstrap;
  DrfpParams drfp;
  std::uint32_t drfp_k = 10;
  std::optional<double> drfp_temperature;
  bool baselines = true;
  std::size_t threads = 1;
};

inline std::array<Ranking, kRoleCount> rank_all(const std::array<RoleDistribution, kRoleCount>& d) {
  return {d[0].ranking(), d[1].ranking(), d[2].ranking()};
}

inline void push_rankings(SystemPredictions& p, const std::array<RoleDistribution, kRoleCount>& d) {
  for (Role r : kRoles) p.rankings[role_slot(r)].push_back(d[role_slot(r)].ranking());
}

/// Scores prior, template majority, DRFP k-NN, embedding k-NN and, with
/// head probabilities, head-only and hybrid predictors on one split, plus
/// paired bootstrap deltas of the hybrid against each component.
inline EvalReport evaluate(const EvalInputs& in) {
  in.config.validate();
  const auto train = in.dataset->of_split(Split::train);
  const auto rows_records = in.dataset->of_split(in.split);
  if (rows_records.empty()) throw DataError("no records in the " + std::string(split_name(in.split)) + " split");
  if (train.empty()) throw DataError("no train records");
  const auto rows = eval_rows(rows_records, *in.vocabs);

  std::optional<PrecedentIndex> built;
  const PrecedentIndex* index = in.index;
  if (index == nullptr) {
    if (in.config.key_kind == KeyKind::drfp) {
      built = PrecedentIndex::build_drfp(train, *in.vocabs, in.drfp);
    } else {
      if (in.bank == nullptr) throw UsageError("embedding keys need --bank");
      built = PrecedentIndex::build(*in.bank, train, *in.vocabs, in.config.key_kind);
    }
    index = &*built;
  }
  check_index_vocab(*index, *in.vocabs);
  if (index->key_kind() != in.config.key_kind) {
    throw UsageError("index key kind " + std::string(key_kind_name(index->key_kind())) +
                     " does not match --key " + std::string(key_kind_name(in.config.key_kind)));
  }

  EvalReport report;
  report.split = std::string(split_name(in.split));
  report.rows = rows.size();
  report.config = in.config;
  report.bootstrap = in.bootstrap;
  report.provenance = {
      {"index", {{"key", key_kind_name(index->key_kind())}, {"rows", index->size()}, {"dim", index->dim()},
                 {"search", "exact inner product over unit-normalized keys; ties by ascending reaction id"}}},
      {"targets", "multi-hot union over duplicate canonical-reaction groups within the split"},
      {"present_only", "rows whose target holds a present label; class-0 predictions count as misses"},
      {"present_masked", "class 0 removed from prediction and target before ranking"},
      {"template_key", "fnv1a64 over u32 nbits and u32 active bit positions of the drfp-style fingerprint"},
      {"drfp", {{"nbits", in.drfp.nbits}, {"n_min", in.drfp.n_min}, {"n_max", in.drfp.n_max},
                {"k", in.drfp_k}, {"vote", in.drfp_temperature ? "softmax" : "uniform"}}},
      {"version", kVersion}};

  std::vector<SystemPredictions> systems;
  if (in.baselines) {
    SystemPredictions prior{"prior", {}};
    auto cp = ConditionPrior::fit(train, *in.vocabs);
    const std::array<Ranking, kRoleCount> prior_rank = {cp[Role::catalyst].ranking(), cp[Role::solvent].ranking(),
                                                        cp[Role::reagent].ranking()};
    for (std::size_t i = 0; i < rows_records.size(); ++i) {
      for (Role r : kRoles) prior.rankings[role_slot(r)].push_back(prior_rank[role_slot(r)]);
    }
    systems.push_back(std::move(prior));

    SystemPredictions tm{"template_majority", {}};
    auto tmaj = TemplateMajority::fit(train, *in.vocabs, in.drfp);
    for (const auto& rec : rows_records) push_rankings(tm, tmaj.predict(rec));
    systems.push_back(std::move(tm));

    SystemPredictions dk{"drfp_knn", {}};
    auto drfp_index = index->key_kind() == KeyKind::drfp && index->drfp_params().nbits == in.drfp.nbits
                          ? std::optional<PrecedentIndex>()
                          : std::optional<PrecedentIndex>(PrecedentIndex::build_drfp(train, *in.vocabs, in.drfp));
    const PrecedentIndex& di = drfp_index ? *drfp_index : *index;
    Recommender drec(di, nullptr);
    RetrievalConfig dcfg;
    dcfg.key_kind = KeyKind::drfp;
    dcfg.k = in.drfp_k;
    dcfg.temperature = in.drfp_temperature;
    dcfg.alpha = 0.0;
    RecommendOptions dopts;
    dopts.threads = in.threads;
    for (const auto& rec : rows_records) {
      Query q;
      q.id = rec.id;
      q.fingerprint = drfp_style(rec, di.drfp_params());
      push_rankings(dk, drec.recommend(q, dcfg, dopts).distributions);
    }
    systems.push_back(std::move(dk));
  }

  SystemPredictions knn{"knn", {}};
  SystemPredictions head{"head", {}};
  SystemPredictions hybrid{"hybrid", {}};
  const bool with_heads = in.heads != nullptr;
  Recommender rec(*index, in.heads);
  RecommendOptions ropts;
  ropts.threads = in.threads;
  for (const auto& r : rows_records) {
    auto q = query_for_record(r, *index, in.bank);
    auto out = rec.recommend(q, in.config, ropts);
    std::array<RoleDistribution, kRoleCount> knn_d;
    for (Role role : kRoles) {
      const std::size_t size = index->vocab_sizes()[role_slot(role)];
      knn_d[role_slot(role)] = out.knn_fallback ? ConditionPrior::fit(*index)[role]
                                                : vote(out.neighbors, in.config.temperature, role, size);
    }
    push_rankings(knn, knn_d);
    if (with_heads) {
      std::array<RoleDistribution, kRoleCount> head_d;
      for (Role role : kRoles) {
        auto h = in.heads->get(role, r.id);
        if (!h) throw DataError("head probabilities missing for reaction '" + r.id + "'", "missing_heads");
        head_d[role_slot(role)] = std::move(*h);
      }
      push_rankings(head, head_d);
      push_rankings(hybrid, out.distributions);
    }
  }
  systems.push_back(knn);
  if (with_heads) {
    systems.push_back(head);
    systems.push_back(hybrid);
  }

  for (const auto& s : systems) report.systems.push_back(score_system(s, rows));
  if (with_heads) {
    for (Role role : kRoles) {
      report.comparisons.push_back(compare_systems(role, head, hybrid, rows, in.bootstrap));
      report.comparisons.push_back(compare_systems(role, knn, hybrid, rows, in.bootstrap));
    }
  }
  report.check_invariants();
  return report;
}

inline EvalInputs eval_inputs(const Options& o, const Inputs& in) {
  EvalInputs e;
  e.dataset = &in.dataset;
  e.vocabs = &in.vocabs;
  e.bank = in.bank ? &*in.bank : nullptr;
  e.heads = in.heads ? &*in.heads : nullptr;
  e.index = in.index ? &*in.index : nullptr;
  e.config = retrieval_config(o);
  e.split = eval_split(o);
  e.bootstrap.resamples = o.resamples;
  e.bootstrap.seed = o.seed;
  e.bootstrap.threads = o.threads;
  e.drfp = drfp_params(o);
  e.drfp_k = o.drfp_k;
  e.drfp_temperature = parse_temperature(o.drfp_temp);
  e.threads = o.threads;
  return e;
}

// ---------------------------------------------------------------------------
// Commands

/// Validates a reaction TSV against vocabularies (derived from the labels
/// seen, sorted, when --vocab is not given) and writes the normalized
/// dataset, vocabularies and a split/absent summary.
inline void cmd_ingest(const Options& o) {
  require_file(o.dataset, "--dataset");
  require_out(o);
  if (!o.bank.empty()) require_file(o.bank, "--bank");
  RunManifest m("ingest", o);
  auto ds = load_reactions(o.dataset);
  m.input(o.dataset);
  VocabularySet vocabs;
  if (!o.vocab.empty()) {
    require_file(o.vocab, "--vocab");
    vocabs = VocabularySet::load_dir(o.vocab);
    m.input(o.vocab);
  } else {
    std::array<RoleVocabulary, kRoleCount> arr;
    for (Role r : kRoles) {
      std::set<std::string> seen;
      for (const auto& rec : ds.records) {
        if (rec.condition(r)) seen.insert(*rec.condition(r));
      }
      arr[role_slot(r)] = RoleVocabulary(r, {seen.begin(), seen.end()});
    }
    vocabs = VocabularySet(std::move(arr));
  }
  validate_dataset(ds, vocabs);

  nlohmann::json summary;
  summary["splits"] = {{"train", ds.counts.train}, {"validation", ds.counts.validation}, {"test", ds.counts.test}};
  summary["duplicate_groups"] = count_duplicate_groups(ds.records);
  nlohmann::json roles = nlohmann::json::object();
  for (Role r : kRoles) {
    nlohmann::json per_split = nlohmann::json::object();
    for (Split s : {Split::train, Split::validation, Split::test}) {
      std::size_t n = 0;
      std::size_t absent = 0;
      for (const auto& rec : ds.records) {
        if (rec.split != s) continue;
        ++n;
        absent += rec.condition(r) ? 0 : 1;
      }
      per_split[std::string(split_name(s))] = {
          {"rows", n}, {"absent", absent}, {"absent_share", n ? static_cast<double>(absent) / n : 0.0}};
    }
    roles[std::string(role_name(r))] = {{"size_present", vocabs[r].size_present()},
                                        {"size_with_absent", vocabs[r].size_with_absent()},
                                        {"absent", std::move(per_split)}};
  }
  summary["roles"] = std::move(roles);
  if (!o.bank.empty()) {
    auto bank = load_embedding_bank(o.bank);
    m.input(o.bank);
    std::size_t covered = 0;
    for (const auto& rec : ds.records) covered += bank.find(rec.id) ? 1 : 0;
    summary["bank"] = {{"rows", bank.size()}, {"dim", bank.dim()}, {"has_delta", bank.has_delta()},
                       {"records_covered", covered}};
  }

  fs::create_directories(o.out);
  vocabs.save_dir(o.out / "vocab");
  m.output(o.out / "vocab");
  save_reactions(ds.records, o.out / "reactions.tsv");
  m.output(o.out / "reactions.tsv");
  write_json(o.out / "summary.json", summary, m);
  m.write(o.out);
}

inline void cmd_build_index(const Options& o) {
  require_out(o);
  const auto kind = parse_key_kind(o.key);
  const auto drfp = drfp_params(o);
  RunManifest m("build-index", o);
  auto in = load_inputs(o, m, kind != KeyKind::drfp, false, false);
  auto index = build_index_for(in, kind, drfp);
  fs::create_directories(o.out);
  index.save(o.out / "index.bin");
  m.output(o.out / "index.bin");
  m.note("index", {{"rows", index.size()}, {"dim", index.dim()}, {"key", key_kind_name(kind)}});
  m.write(o.out);
}

/// Recommendations for --query ids (or every record of --split), one JSON
/// object per query in request order.
inline nlohmann::json recommend_queries(const Options& o, const Inputs& in, const PrecedentIndex& index) {
  const auto cfg = retrieval_config(o);
  if (index.key_kind() != cfg.key_kind) {
    throw UsageError("index key kind " + std::string(key_kind_name(index.key_kind())) + " does not match --key " +
                     std::string(key_kind_name(cfg.key_kind)));
  }
  check_index_vocab(index, in.vocabs);
  std::unordered_map<std::string_view, const ReactionRecord*> by_id;
  for (const auto& r : in.dataset.records) by_id.emplace(r.id, &r);
  std::vector<const ReactionRecord*> queries;
  if (!o.query_ids.empty()) {
    for (const auto& id : o.query_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("unknown reaction id '" + id + "'", "unknown_id");
      queries.push_back(it->second);
    }
  } else {
    const auto split = parse_split(o.split);
    if (!split) throw UsageError("unknown split '" + o.split + "'");
    for (const auto& r : in.dataset.records) {
      if (r.split == *split) queries.push_back(&r);
    }
  }
  Recommender rec(index, in.heads ? &*in.heads : nullptr);
  RecommendOptions ropts;
  ropts.threads = o.threads;
  nlohmann::json list = nlohmann::json::array();
  for (const auto* r : queries) {
    auto q = query_for_record(*r, index, in.bank ? &*in.bank : nullptr);
    list.push_back(to_json(rec.recommend(q, cfg, ropts), in.vocabs, o.top));
  }
  return {{"config", cfg}, {"version", kVersion}, {"recommendations", std::move(list)}};
}

inline void cmd_recommend(const Options& o) {
  require_out(o);
  const auto cfg = retrieval_config(o);
  RunManifest m("recommend", o);
  auto in = load_inputs(o, m, false, true, true);
  if (!in.index) in.index = build_index_for(in, cfg.key_kind, drfp_params(o));
  auto doc = recommend_queries(o, in, *in.index);
  fs::create_directories(o.out);
  write_json(o.out / "recommendations.json", doc, m);
  m.write(o.out);
}

inline void cmd_evaluate(const Options& o) {
  require_out(o);
  retrieval_config(o);
  eval_split(o);
  RunManifest m("evaluate", o);
  auto in = load_inputs(o, m, false, true, true);
  auto report = evaluate(eval_inputs(o, in));
  fs::create_directories(o.out);
  write_json(o.out / "report.json", to_json(report), m);
  write_text(o.out / "report.txt", to_text(report), m);
  m.write(o.out);
}

/// Validation-selected retrieval: grid scored on a hash split of train, the
/// winner then evaluated once on the held-out split with a full-train index.
inline void cmd_select(const Options& o) {
  require_out(o);
  const auto grid = selection_grid(o);
  eval_split(o);
  SelectionMetric metric;
  if (!o.role.empty() && o.role != "all") metric.role = parse_role(o.role);
  RunManifest m("select", o);
  auto in = load_inputs(o, m, false, false, false);
  const auto train = in.train();
  auto split = deterministic_split(train, o.validation_fraction);
  SelectionInputs sin;
  sin.bank = in.bank ? &*in.bank : nullptr;
  sin.drfp = drfp_params(o);
  sin.threads = o.threads;
  auto sel = select_retrieval(grid, split.train, split.validation, in.vocabs, sin, metric);

  Options final_opts = o;
  final_opts.key = std::string(key_kind_name(sel.winner.key_kind));
  final_opts.k = sel.winner.k;
  final_opts.temp = sel.winner.temperature_label();
  if (sel.winner.temperature) {
    std::ostringstream os;
    os.precision(17);
    os << *sel.winner.temperature;
    final_opts.temp = os.str();
  }
  // The held-out run reads head probabilities only after the winner is fixed.
  if (!o.heads.empty()) {
    require_file(o.heads, "--heads");
    in.heads = load_head_probabilities(o.heads);
    in.heads->check_against(in.vocabs);
    m.input(o.heads);
  }
  auto e = eval_inputs(final_opts, in);
  e.config = sel.winner;
  auto report = evaluate(e);
  report.selection = to_json(sel);

  fs::create_directories(o.out);
  write_json(o.out / "selection.json", to_json(sel), m);
  write_json(o.out / "report.json", to_json(report), m);
  write_text(o.out / "report.txt", to_text(report), m);
  m.note("selected", sel.winner);
  m.write(o.out);
}

/// Overlap-exclusion ladder up to --exclusion and the absent/present audit
/// of the configured k-NN predictor and the prior on --split.
inline void cmd_audit(const Options& o) {
  require_out(o);
  const auto cfg = retrieval_config(o);
  const auto top_rung = parse_exclusion(o.exclusion);
  const auto roles = roles_of(o);
  eval_split(o);
  RunManifest m("audit", o);
  auto in = load_inputs(o, m, false, false, true);
  if (!in.index) in.index = build_index_for(in, cfg.key_kind, drfp_params(o));
  check_index_vocab(*in.index, in.vocabs);
  const auto train = in.train();
  const auto records = in.dataset.of_split(eval_split(o));
  const auto rows = eval_rows(records, in.vocabs);

  std::vector<Exclusion> ladder;
  for (auto e : kExclusionLadder) {
    if (static_cast<int>(e) <= static_cast<int>(top_rung)) ladder.push_back(e);
  }
  nlohmann::json overlap = nlohmann::json::array();
  std::string text = "overlap audit, P@" + std::to_string(o.audit_k) + "\n";
  for (Role role : roles) {
    std::vector<AuditQuery> queries;
    for (std::size_t i = 0; i < records.size(); ++i) {
      queries.push_back({&records[i], query_for_record(records[i], *in.index, in.bank ? &*in.bank : nullptr),
                         rows[i].targets[role_slot(role)]});
    }
    auto audit = overlap_audit(*in.index, train, queries, role, ladder, o.audit_k, default_relevance, o.threads);
    overlap.push_back(to_json(audit));
    for (const auto& r : audit.rungs) {
      text += pad(std::string(role_name(role)), 10) + pad(std::string(exclusion_name(r.rung)), 32) +
              fixed(r.precision, 4) + "\n";
    }
  }

  EvalInputs e = eval_inputs(o, in);
  e.index = &*in.index;
  e.baselines = false;
  auto knn_report = evaluate(e);
  auto cp = ConditionPrior::fit(train, in.vocabs);
  nlohmann::json absent = nlohmann::json::array();
  text += "\nabsent/present audit (acc@1)\n";
  for (Role role : roles) {
    const auto t = role_targets(rows, role);
    std::vector<Ranking> prior_rank(records.size(), cp[role].ranking());
    const auto pa = absent_audit(role, prior_rank, t);
    const auto& ka = knn_report.system("knn")->roles[role_slot(role)].audit;
    for (const auto& [name, a] : {std::pair<std::string, const AbsentAudit&>{"prior", pa}, {"knn", ka}}) {
      absent.push_back({{"system", name},
                        {"role", role_name(role)},
                        {"rows", a.rows},
                        {"absent_rows", a.absent_rows},
                        {"absent_share", a.absent_share()},
                        {"all@1", a.all_at1()},
                        {"present@1", a.present_at1()},
                        {"absent@1", a.absent_at1()},
                        {"present_masked@1", a.present_masked_at1()}});
      text += pad(name, 8) + pad(std::string(role_name(role)), 10) +
              pad(std::to_string(a.absent_rows) + " (" + fixed(100.0 * a.absent_share(), 1) + "%)", 18) +
              pad(fixed(a.all_at1()), 8) + pad(fixed(a.present_at1()), 8) + fixed(a.absent_at1()) + "\n";
    }
  }
  nlohmann::json doc = {{"config", cfg}, {"split", o.split}, {"overlap", std::move(overlap)},
                        {"absent", std::move(absent)}};
  fs::create_directories(o.out);
  write_json(o.out / "audit.json", doc, m);
  write_text(o.out / "audit.txt", text, m);
  m.write(o.out);
}

/// Writes a planted synthetic corpus: reactions.tsv, vocab/, bank.bin and
/// heads.bin. --spec is a JSON corpus description; --seed overrides its seed.
inline void cmd_synth(const Options& o) {
  require_out(o);
  synth::SynthSpec spec;
  RunManifest m("synth", o);
  if (!o.spec.empty()) {
    require_file(o.spec, "--spec");
    try {
      spec = nlohmann::json::parse(io::read_text(o.spec)).get<synth::SynthSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(o.spec.string() + ": " + e.what(), "schema_mismatch");
    }
    m.input(o.spec);
  }
  if (o.seed != 0) spec.seed = o.seed;
  auto corpus = synth::generate(spec);
  fs::create_directories(o.out);
  save_reactions(corpus.dataset.records, o.out / "reactions.tsv");
  m.output(o.out / "reactions.tsv");
  corpus.vocabs.save_dir(o.out / "vocab");
  m.output(o.out / "vocab");
  save_embedding_bank(corpus.bank, o.out / "bank.bin");
  m.output(o.out / "bank.bin");
  save_head_probabilities(corpus.heads, o.out / "heads.bin");
  m.output(o.out / "heads.bin");
  nlohmann::json spec_json = spec;
  write_json(o.out / "spec.json", spec_json, m);
  m.write(o.out);
}

}  // namespace condrec::cli
