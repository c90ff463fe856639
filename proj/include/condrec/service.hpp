#pragma once

// HTTP JSON front end over an immutable precedent index.
//
//   POST /v1/recommend  {"id": ...} | {"vector": [...]} | {"smiles": "r>>p"}
//                       | {"reactants": [...], "products": [...]}
//                       optional "k", "temperature", "alpha", "top"
//   GET  /v1/health
//
// Request handling is split from the transport so handlers can be called
// directly; `bind` attaches them to an httplib server.

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "condrec/error.hpp"
#include "condrec/fingerprint.hpp"
#include "condrec/index.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"
#include "condrec/recommend.hpp"
#include "condrec/version.hpp"

namespace condrec::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path index_path;
  std::filesystem::path bank_path;
  std::filesystem::path heads_path;
  /// Reaction records, needed for id queries against a fingerprint index.
  std::filesystem::path dataset_path;
  std::filesystem::path vocab_path;
  RetrievalConfig defaults;
  std::uint32_t max_k = 100;
  std::size_t top = 10;
  std::chrono::seconds request_timeout{30};
  std::size_t workers = 4;
  std::size_t search_threads = 1;
};

/// Everything a request reads; never mutated after it is installed.
struct ServiceState {
  PrecedentIndex index;
  VocabularySet vocabs;
  std::optional<EmbeddingBank> bank;
  std::optional<HeadProbabilities> heads;
  std::unordered_map<std::string, ReactionRecord> records;
};

inline std::shared_ptr<const ServiceState> load_state(const ServiceConfig& cfg) {
  auto st = std::make_shared<ServiceState>();
  st->index = PrecedentIndex::load(cfg.index_path);
  st->vocabs = VocabularySet::load_dir(cfg.vocab_path);
  for (Role r : kRoles) {
    if (st->index.vocab_sizes()[role_slot(r)] != st->vocabs[r].size_with_absent()) {
      throw DataError("index and vocabulary disagree on the " + std::string(role_name(r)) + " size",
                      "schema_mismatch");
    }
  }
  if (!cfg.bank_path.empty()) st->bank = load_embedding_bank(cfg.bank_path);
  if (!cfg.heads_path.empty()) {
    st->heads = load_head_probabilities(cfg.heads_path);
    st->heads->check_against(st->vocabs);
  }
  if (!cfg.dataset_path.empty()) {
    auto ds = load_reactions(cfg.dataset_path);
    for (auto& r : ds.records) {
      auto id = r.id;
      st->records.emplace(std::move(id), std::move(r));
    }
  }
  return st;
}

struct Reply {
  int status = 200;
  nlohmann::json body;
};

inline Reply error_reply(int status, std::string code, std::string message) {
  return {status, {{"code", std::move(code)}, {"message", std::move(message)}}};
}

class RecommendationService {
 public:
  explicit RecommendationService(ServiceConfig cfg) : cfg_(std::move(cfg)) { cfg_.defaults.validate(); }

  ~RecommendationService() {
    if (loader_.joinable()) loader_.join();
  }

  RecommendationService(const RecommendationService&) = delete;
  RecommendationService& operator=(const RecommendationService&) = delete;

  const ServiceConfig& config() const noexcept { return cfg_; }

  void install(std::shared_ptr<const ServiceState> state) {
    std::lock_guard lock(mu_);
    state_ = std::move(state);
    load_error_.reset();
  }

  /// Loads artifacts on a background thread; requests see 503 until done.
  void load_async() {
    loader_ = std::thread([this] {
      try {
        install(load_state(cfg_));
      } catch (const std::exception& e) {
        std::lock_guard lock(mu_);
        load_error_ = e.what();
      }
    });
  }

  void wait_loaded() {
    if (loader_.joinable()) loader_.join();
  }

  std::shared_ptr<const ServiceState> state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  std::optional<std::string> load_error() const {
    std::lock_guard lock(mu_);
    return load_error_;
  }

  Reply health() const {
    auto st = state();
    if (!st) {
      auto err = load_error();
      return {503, {{"status", err ? "failed" : "loading"},
                    {"message", err.value_or("index not loaded")},
                    {"version", kVersion}}};
    }
    return {200, {{"status", "ok"},
                  {"index_size", st->index.size()},
                  {"dim", st->index.dim()},
                  {"key", key_kind_name(st->index.key_kind())},
                  {"version", kVersion}}};
  }

  Reply recommend(std::string_view content_type, std::string_view body) const {
    if (content_type.substr(0, content_type.find(';')) != "application/json") {
      return error_reply(415, "unsupported_media_type", "content type must be application/json");
    }
    auto st = state();
    if (!st) return error_reply(503, "not_loaded", "index not loaded");

    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, "malformed_body", std::string("request body is not valid JSON: ") + e.what());
    }
    if (!req.is_object()) return error_reply(400, "malformed_body", "request body must be a JSON object");
    try {
      return recommend_parsed(*st, req);
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, "malformed_body", e.what());
    } catch (const DimensionError& e) {
      return error_reply(422, "dimension_mismatch", e.what());
    } catch (const UsageError& e) {
      return error_reply(400, "bad_request", e.what());
    } catch (const DataError& e) {
      return error_reply(400, e.kind(), e.what());
    } catch (const Error& e) {
      return error_reply(500, e.kind(), e.what());
    } catch (const std::exception& e) {
      return error_reply(500, "internal", e.what());
    }
  }

  void bind(httplib::Server& server) const {
    server.set_read_timeout(cfg_.request_timeout);
    server.set_write_timeout(cfg_.request_timeout);
    const std::size_t workers = cfg_.workers;
    server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Post("/v1/recommend", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, recommend(req.get_header_value("Content-Type"), req.body));
    });
  }

 private:
  Reply recommend_parsed(const ServiceState& st, const nlohmann::json& req) const {
    static constexpr std::array<std::string_view, 9> kFields = {"id", "vector", "smiles", "reactants", "products",
                                                                "k",  "temperature", "alpha", "top"};
    for (auto it = req.begin(); it != req.end(); ++it) {
      if (std::find(kFields.begin(), kFields.end(), it.key()) == kFields.end()) {
        return error_reply(400, "malformed_body", "unknown field '" + it.key() + "'");
      }
    }
    const bool by_id = req.contains("id");
    const bool by_vector = req.contains("vector");
    const bool by_smiles = req.contains("smiles") || req.contains("reactants") || req.contains("products");
    if (by_id + by_vector + by_smiles != 1) {
      return error_reply(400, "malformed_body", "exactly one of id, vector or smiles must be given");
    }

    RetrievalConfig cfg = cfg_.defaults;
    cfg.key_kind = st.index.key_kind();
    if (req.contains("k")) {
      const auto& k = req.at("k");
      if (!k.is_number_integer() || k.get<std::int64_t>() < 1) {
        return error_reply(400, "bad_request", "k must be a positive integer");
      }
      if (k.get<std::int64_t>() > cfg_.max_k) {
        return error_reply(400, "bad_request", "k exceeds max_k (" + std::to_string(cfg_.max_k) + ")");
      }
      cfg.k = k.get<std::uint32_t>();
    }
    if (cfg.k > cfg_.max_k) return error_reply(400, "bad_request", "k exceeds max_k (" + std::to_string(cfg_.max_k) + ")");
    if (req.contains("temperature")) {
      const auto& t = req.at("temperature");
      if (t.is_string()) {
        cfg.temperature = parse_temperature(t.get<std::string>());
      } else if (t.is_number() && t.get<double>() > 0.0) {
        cfg.temperature = t.get<double>();
      } else {
        return error_reply(400, "bad_request", "temperature must be \"uniform\" or a positive number");
      }
    }
    if (req.contains("alpha")) {
      const auto& a = req.at("alpha");
      if (!a.is_number() || a.get<double>() < 0.0 || a.get<double>() > 1.0) {
        return error_reply(400, "bad_request", "alpha must be a number in [0, 1]");
      }
      cfg.alpha = a.get<double>();
    }
    std::size_t top = cfg_.top;
    if (req.contains("top")) {
      const auto& t = req.at("top");
      if (!t.is_number_integer() || t.get<std::int64_t>() < 1) {
        return error_reply(400, "bad_request", "top must be a positive integer");
      }
      top = t.get<std::size_t>();
    }
    cfg.validate();

    Query q;
    const bool drfp = st.index.key_kind() == KeyKind::drfp;
    if (by_id) {
      if (!req.at("id").is_string()) return error_reply(400, "malformed_body", "id must be a string");
      const auto id = req.at("id").get<std::string>();
      q.id = id;
      if (drfp) {
        auto it = st.records.find(id);
        if (it == st.records.end()) return error_reply(404, "unknown_id", "unknown reaction id '" + id + "'");
        q.fingerprint = drfp_style(it->second, st.index.drfp_params());
      } else {
        auto row = st.bank ? st.bank->find(id) : std::nullopt;
        if (!row) return error_reply(404, "unknown_id", "unknown reaction id '" + id + "'");
        q.key = bank_key(*st.bank, *row, st.index.key_kind());
      }
    } else if (by_vector) {
      const auto& v = req.at("vector");
      if (!v.is_array()) return error_reply(400, "malformed_body", "vector must be an array of numbers");
      for (const auto& x : v) {
        if (!x.is_number()) return error_reply(400, "malformed_body", "vector must be an array of numbers");
        q.key.push_back(x.get<float>());
      }
      if (q.key.size() != st.index.dim()) {
        return error_reply(422, "dimension_mismatch",
                           "vector has dimension " + std::to_string(q.key.size()) + ", index expects " +
                               std::to_string(st.index.dim()));
      }
    } else {
      if (!drfp) {
        return error_reply(422, "smiles_unsupported",
                           "SMILES queries need a fingerprint-keyed index; this index uses embedding keys");
      }
      std::vector<std::string> reactants;
      std::vector<std::string> products;
      if (req.contains("smiles")) {
        if (req.contains("reactants") || req.contains("products")) {
          return error_reply(400, "malformed_body", "give either smiles or reactants/products");
        }
        const auto s = req.at("smiles").get<std::string>();
        const auto arrow = s.find(">>");
        if (arrow == std::string::npos) return error_reply(400, "malformed_body", "smiles must contain '>>'");
        reactants = detail::molecules_of(std::string_view(s).substr(0, arrow));
        products = detail::molecules_of(std::string_view(s).substr(arrow + 2));
      } else {
        reactants = req.at("reactants").get<std::vector<std::string>>();
        products = req.at("products").get<std::vector<std::string>>();
      }
      if (reactants.empty() || products.empty()) {
        return error_reply(400, "malformed_body", "reactants and products must be nonempty");
      }
      try {
        q.fingerprint = drfp_style(reactants, products, st.index.drfp_params());
      } catch (const ParseError& e) {
        return error_reply(400, "parse", e.what());
      }
    }

    Recommender rec(st.index, st.heads ? &*st.heads : nullptr);
    RecommendOptions opts;
    opts.threads = cfg_.search_threads;
    auto out = rec.recommend(q, cfg, opts);
    return {200, to_json(out, st.vocabs, top)};
  }

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::shared_ptr<const ServiceState> state_;
  std::optional<std::string> load_error_;
  std::thread loader_;
};

}  // namespace condrec::service
