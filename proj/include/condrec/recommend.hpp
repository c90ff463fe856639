#pragma once

// Neighbor voting, hybrid head/neighbor fusion, the matched baselines
// (condition prior, template majority) and end-to-end recommendation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "condrec/error.hpp"
#include "condrec/fingerprint.hpp"
#include "condrec/index.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"

namespace condrec {

class EmptyNeighborhoodError : public DataError {
 public:
  EmptyNeighborhoodError() : DataError("cannot vote over an empty neighbor set", "empty_neighborhood") {}
};

/// p(y) = (neighbors labelled y) / (neighbor count). Absent labels vote for
/// class 0.
inline RoleDistribution vote_uniform(std::span<const Neighbor> neighbors, Role role,
                                     std::size_t size_with_absent) {
  if (neighbors.empty()) throw EmptyNeighborhoodError();
  std::vector<double> p(size_with_absent, 0.0);
  for (const auto& nb : neighbors) {
    const ClassIndex cls = nb.label(role);
    if (cls >= size_with_absent) throw DataError("neighbor label outside the vocabulary");
    p[cls] += 1.0;
  }
  const double k = static_cast<double>(neighbors.size());
  for (double& v : p) v /= k;
  return RoleDistribution(role, std::move(p));
}

/// Similarity-softmax weights exp(s_j / t) / sum exp(s_l / t), computed with
/// the maximum similarity subtracted first.
inline std::vector<double> softmax_weights(std::span<const Neighbor> neighbors, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError("vote temperature must be positive and finite");
  }
  if (neighbors.empty()) throw EmptyNeighborhoodError();
  double peak = neighbors.front().similarity;
  for (const auto& nb : neighbors) peak = std::max(peak, nb.similarity);
  std::vector<double> w;
  w.reserve(neighbors.size());
  double total = 0.0;
  for (const auto& nb : neighbors) {
    w.push_back(std::exp((nb.similarity - peak) / temperature));
    total += w.back();
  }
  for (double& v : w) v /= total;
  return w;
}

inline RoleDistribution vote_softmax(std::span<const Neighbor> neighbors, double temperature,
                                     Role role, std::size_t size_with_absent) {
  auto w = softmax_weights(neighbors, temperature);
  std::vector<double> p(size_with_absent, 0.0);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const ClassIndex cls = neighbors[j].label(role);
    if (cls >= size_with_absent) throw DataError("neighbor label outside the vocabulary");
    p[cls] += w[j];
  }
  return RoleDistribution(role, std::move(p));
}

/// Uniform vote when `temperature` is empty, softmax vote otherwise.
inline RoleDistribution vote(std::span<const Neighbor> neighbors, std::optional<double> temperature,
                             Role role, std::size_t size_with_absent) {
  return temperature ? vote_softmax(neighbors, *temperature, role, size_with_absent)
                     : vote_uniform(neighbors, role, size_with_absent);
}

/// alpha * p_head + (1 - alpha) * p_knn.
inline RoleDistribution fuse_hybrid(const RoleDistribution& p_head, const RoleDistribution& p_knn,
                                    double alpha) {
  if (p_head.role() != p_knn.role()) throw DimensionError("fusing distributions of different roles");
  if (p_head.size() != p_knn.size()) {
    throw DimensionError("fusing distributions of sizes " + std::to_string(p_head.size()) + " and " +
                         std::to_string(p_knn.size()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  const double beta = 1.0 - alpha;
  std::vector<double> out(p_head.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = alpha * p_head.probs()[i] + beta * p_knn.probs()[i];
  }
  return RoleDistribution(p_head.role(), std::move(out));
}

/// Per-role empirical label frequencies over the training set.
class ConditionPrior {
 public:
  ConditionPrior() = default;

  static ConditionPrior fit(std::span<const ReactionRecord> train, const VocabularySet& vocabs) {
    if (train.empty()) throw DataError("condition prior needs at least one training record");
    ConditionPrior prior;
    for (Role r : kRoles) {
      std::vector<double> counts(vocabs[r].size_with_absent(), 0.0);
      for (const auto& rec : train) counts[vocabs[r].remap(rec.condition(r))] += 1.0;
      prior.dists_[role_slot(r)] = normalize(r, std::move(counts));
    }
    return prior;
  }

  /// Frequencies of the labels stored in an index (its rows are the train set).
  static ConditionPrior fit(const PrecedentIndex& index) {
    if (index.size() == 0) throw DataError("condition prior over an empty index");
    ConditionPrior prior;
    for (Role r : kRoles) {
      std::vector<double> counts(index.vocab_sizes()[role_slot(r)], 0.0);
      for (std::size_t i = 0; i < index.size(); ++i) counts[index.labels(i)[role_slot(r)]] += 1.0;
      prior.dists_[role_slot(r)] = normalize(r, std::move(counts));
    }
    return prior;
  }

  const RoleDistribution& operator[](Role role) const { return dists_[role_slot(role)]; }

  static RoleDistribution normalize(Role role, std::vector<double> counts) {
    double total = 0.0;
    for (double c : counts) total += c;
    for (double& c : counts) c /= total;
    return RoleDistribution(role, std::move(counts));
  }

 private:
  std::array<RoleDistribution, kRoleCount> dists_;
};

inline RoleDistribution baseline_prior(std::span<const ReactionRecord> train, const VocabularySet& vocabs,
                                       Role role) {
  return ConditionPrior::fit(train, vocabs)[role];
}

/// Label frequencies among training reactions sharing the query's template
/// key (a hash of its DRFP-style active bits), falling back to the prior.
class TemplateMajority {
 public:
  static TemplateMajority fit(std::span<const ReactionRecord> train, const VocabularySet& vocabs,
                              const DrfpParams& params = {}) {
    TemplateMajority tm;
    tm.params_ = params;
    tm.prior_ = ConditionPrior::fit(train, vocabs);
    for (Role r : kRoles) tm.sizes_[role_slot(r)] = vocabs[r].size_with_absent();
    for (const auto& rec : train) {
      const auto key = template_key(drfp_style(rec, params));
      auto& counts = tm.counts_[key];
      if (counts[0].empty()) {
        for (Role r : kRoles) counts[role_slot(r)].assign(tm.sizes_[role_slot(r)], 0.0);
      }
      const auto labels = remap_record(rec, vocabs);
      for (Role r : kRoles) counts[role_slot(r)][labels[role_slot(r)]] += 1.0;
    }
    return tm;
  }

  std::array<RoleDistribution, kRoleCount> predict(const ReactionRecord& query) const {
    auto it = counts_.find(template_key(drfp_style(query, params_)));
    std::array<RoleDistribution, kRoleCount> out;
    for (Role r : kRoles) {
      out[role_slot(r)] = it == counts_.end()
                              ? prior_[r]
                              : ConditionPrior::normalize(r, it->second[role_slot(r)]);
    }
    return out;
  }

  bool seen(const ReactionRecord& query) const {
    return counts_.count(template_key(drfp_style(query, params_))) != 0;
  }

  const DrfpParams& params() const noexcept { return params_; }

 private:
  DrfpParams params_;
  ConditionPrior prior_;
  std::array<std::size_t, kRoleCount> sizes_{};
  std::unordered_map<std::uint64_t, std::array<std::vector<double>, kRoleCount>> counts_;
};

inline RoleDistribution baseline_template_majority(std::span<const ReactionRecord> train,
                                                   const VocabularySet& vocabs,
                                                   const ReactionRecord& query, Role role,
                                                   const DrfpParams& params = {}) {
  return TemplateMajority::fit(train, vocabs, params).predict(query)[role_slot(role)];
}

struct RankedLabel {
  ClassIndex cls;
  double score;
};

struct Recommendation {
  std::optional<std::string> query_id;
  RetrievalConfig config;
  bool heads_used = false;
  bool knn_fallback = false;
  std::array<RoleDistribution, kRoleCount> distributions;
  std::vector<Neighbor> neighbors;

  const RoleDistribution& distribution(Role role) const { return distributions[role_slot(role)]; }

  std::vector<RankedLabel> ranked(Role role, std::size_t top = SIZE_MAX) const {
    const auto& d = distribution(role);
    auto order = d.ranking();
    std::vector<RankedLabel> out;
    for (std::size_t i = 0; i < order.size() && i < top; ++i) out.push_back({order[i], d[order[i]]});
    return out;
  }
};

/// A retrieval query: a dense key (or a fingerprint for drfp indexes) plus
/// the reaction id when known, used for head lookup and self-exclusion.
struct Query {
  std::optional<std::string> id;
  std::vector<float> key;
  std::optional<ReactionFingerprint> fingerprint;
};

struct RecommendOptions {
  std::size_t threads = 1;
  /// Drop the query's own row when its id is indexed.
  bool exclude_self = true;
};

/// Shared state for producing recommendations; immutable after construction.
class Recommender {
 public:
  Recommender(const PrecedentIndex& index, const HeadProbabilities* heads)
      : index_(&index), heads_(heads) {
    if (index.size() > 0) prior_ = ConditionPrior::fit(index);
  }

  const PrecedentIndex& index() const noexcept { return *index_; }

  Recommendation recommend(const Query& query, const RetrievalConfig& config,
                           const RecommendOptions& opts = {}) const {
    config.validate();
    Recommendation rec;
    rec.query_id = query.id;
    rec.config = config;

    PrecedentIndex::SearchOptions sopts;
    sopts.threads = opts.threads;
    std::optional<std::size_t> self_row;
    if (opts.exclude_self && query.id) self_row = index_->find(*query.id);
    if (self_row) sopts.exclude = [row = *self_row](std::size_t r) { return r == row; };
    rec.neighbors = query.fingerprint ? index_->search(*query.fingerprint, config.k, sopts)
                                      : index_->search(query.key, config.k, sopts);

    std::array<std::optional<RoleDistribution>, kRoleCount> head;
    bool all_heads = heads_ != nullptr && query.id.has_value();
    if (all_heads) {
      for (Role r : kRoles) {
        head[role_slot(r)] = heads_->get(r, *query.id);
        if (!head[role_slot(r)]) all_heads = false;
      }
    }
    rec.heads_used = all_heads && config.alpha > 0.0;
    if (!rec.heads_used) rec.config.alpha = 0.0;

    rec.knn_fallback = rec.neighbors.empty();
    for (Role r : kRoles) {
      const std::size_t size = index_->vocab_sizes()[role_slot(r)];
      RoleDistribution knn =
          rec.knn_fallback ? fallback_prior(r) : vote(rec.neighbors, config.temperature, r, size);
      if (rec.heads_used) {
        if (head[role_slot(r)]->size() != size) {
          throw DimensionError("head probabilities and index disagree on the " +
                               std::string(role_name(r)) + " vocabulary size");
        }
        rec.distributions[role_slot(r)] = fuse_hybrid(*head[role_slot(r)], knn, config.alpha);
      } else {
        rec.distributions[role_slot(r)] = std::move(knn);
      }
    }
    return rec;
  }

 private:
  const RoleDistribution& fallback_prior(Role role) const {
    if (!prior_) throw EmptyNeighborhoodError();
    return (*prior_)[role];
  }

  const PrecedentIndex* index_;
  const HeadProbabilities* heads_;
  std::optional<ConditionPrior> prior_;
};

inline nlohmann::json label_json(const RoleVocabulary& vocab, ClassIndex cls) {
  auto label = vocab.label_of(cls);
  return label ? nlohmann::json(*label) : nlohmann::json(nullptr);
}

/// JSON document: per-role ranked labels with scores, the neighbor set with
/// similarities and labels, and the configuration that produced it.
inline nlohmann::json to_json(const Recommendation& rec, const VocabularySet& vocabs,
                              std::size_t top = 10) {
  nlohmann::json j;
  j["query"] = rec.query_id ? nlohmann::json{{"id", *rec.query_id}} : nlohmann::json::object();
  j["config"] = rec.config;
  j["heads_used"] = rec.heads_used;
  j["knn_fallback"] = rec.knn_fallback;
  nlohmann::json roles = nlohmann::json::object();
  for (Role r : kRoles) {
    nlohmann::json ranked = nlohmann::json::array();
    for (const auto& rl : rec.ranked(r, top)) {
      ranked.push_back({{"class", rl.cls}, {"label", label_json(vocabs[r], rl.cls)}, {"score", rl.score}});
    }
    roles[std::string(role_name(r))] = std::move(ranked);
  }
  j["roles"] = std::move(roles);
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& nb : rec.neighbors) {
    nlohmann::json labels = nlohmann::json::object();
    for (Role r : kRoles) labels[std::string(role_name(r))] = label_json(vocabs[r], nb.label(r));
    neighbors.push_back({{"id", nb.id}, {"similarity", nb.similarity}, {"labels", std::move(labels)}});
  }
  j["neighbors"] = std::move(neighbors);
  return j;
}

}  // namespace condrec
