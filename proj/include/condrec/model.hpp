#pragma once

// Domain types shared by every module: condition roles, role vocabularies
// with the absent-class protocol, reaction records, per-role probability
// distributions, and retrieval configurations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "condrec/error.hpp"

namespace condrec {

enum class Role : std::uint8_t { catalyst = 0, solvent = 1, reagent = 2 };

inline constexpr std::array<Role, 3> kRoles = {Role::catalyst, Role::solvent,
                                               Role::reagent};
inline constexpr std::size_t kRoleCount = kRoles.size();

constexpr std::size_t role_slot(Role role) noexcept {
  return static_cast<std::size_t>(role);
}

constexpr std::string_view role_name(Role role) noexcept {
  switch (role) {
    case Role::catalyst: return "catalyst";
    case Role::solvent: return "solvent";
    case Role::reagent: return "reagent";
  }
  return "?";
}

inline Role parse_role(std::string_view name) {
  for (Role r : kRoles) {
    if (role_name(r) == name) return r;
  }
  throw UsageError("unknown role '" + std::string(name) +
                   "' (expected catalyst, solvent or reagent)");
}

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

constexpr std::string_view split_name(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view name) noexcept {
  if (name == "train") return Split::train;
  if (name == "validation" || name == "val") return Split::validation;
  if (name == "test") return Split::test;
  return std::nullopt;
}

using ClassIndex = std::uint32_t;
inline constexpr ClassIndex kAbsentClass = 0;

/// Ordered label list for one role. Class 0 is reserved for "absent"; the
/// label at file line i (0-based) is class i + 1.
class RoleVocabulary {
 public:
  RoleVocabulary() = default;

  RoleVocabulary(Role role, std::vector<std::string> labels)
      : role_(role), labels_(std::move(labels)) {
    index_.reserve(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) {
        throw VocabularyError(std::string(role_name(role_)) +
                              " vocabulary has an empty label at position " +
                              std::to_string(i));
      }
      auto [it, fresh] = index_.emplace(labels_[i], static_cast<ClassIndex>(i + 1));
      if (!fresh) {
        throw VocabularyError(std::string(role_name(role_)) +
                              " vocabulary repeats label '" + labels_[i] + "'");
      }
    }
  }

  /// One label per line, UTF-8; a trailing '\r' is dropped, blank lines are
  /// not allowed except a final newline.
  static RoleVocabulary load(Role role, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
      throw DataError("cannot open " + std::string(role_name(role)) +
                      " vocabulary file " + path.string());
    }
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      labels.push_back(line);
    }
    while (!labels.empty() && labels.back().empty()) labels.pop_back();
    return RoleVocabulary(role, std::move(labels));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path.string());
    for (const auto& label : labels_) out << label << '\n';
  }

  Role role() const noexcept { return role_; }
  std::size_t size_present() const noexcept { return labels_.size(); }
  std::size_t size_with_absent() const noexcept { return labels_.size() + 1; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  bool contains(std::string_view label) const {
    return index_.find(std::string(label)) != index_.end();
  }

  ClassIndex remap(const std::optional<std::string>& raw) const {
    if (!raw) return kAbsentClass;
    auto it = index_.find(*raw);
    if (it == index_.end()) {
      throw VocabularyError("label '" + *raw + "' is not in the " +
                            std::string(role_name(role_)) + " vocabulary");
    }
    return it->second;
  }

  /// Inverse of remap; the absent class maps to nullopt.
  std::optional<std::string> label_of(ClassIndex cls) const {
    if (cls == kAbsentClass) return std::nullopt;
    if (cls > labels_.size()) {
      throw VocabularyError("class " + std::to_string(cls) + " is outside the " +
                            std::string(role_name(role_)) + " vocabulary");
    }
    return labels_[cls - 1];
  }

 private:
  Role role_ = Role::catalyst;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, ClassIndex> index_;
};

/// Absent/None maps to class 0; vocabulary position i maps to i + 1.
inline ClassIndex remap_absent(const std::optional<std::string>& raw,
                               const RoleVocabulary& vocab) {
  return vocab.remap(raw);
}

/// The three role vocabularies, addressable by Role.
class VocabularySet {
 public:
  VocabularySet() = default;
  explicit VocabularySet(std::array<RoleVocabulary, kRoleCount> vocabs)
      : vocabs_(std::move(vocabs)) {
    for (Role r : kRoles) {
      if (vocabs_[role_slot(r)].role() != r) {
        throw VocabularyError("vocabulary slot mismatch for role " +
                              std::string(role_name(r)));
      }
    }
  }

  /// Reads catalyst.txt, solvent.txt and reagent.txt from `dir`.
  static VocabularySet load_dir(const std::filesystem::path& dir) {
    std::array<RoleVocabulary, kRoleCount> vocabs;
    for (Role r : kRoles) {
      vocabs[role_slot(r)] =
          RoleVocabulary::load(r, dir / (std::string(role_name(r)) + ".txt"));
    }
    return VocabularySet(std::move(vocabs));
  }

  void save_dir(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (Role r : kRoles) {
      (*this)[r].save(dir / (std::string(role_name(r)) + ".txt"));
    }
  }

  const RoleVocabulary& operator[](Role role) const noexcept {
    return vocabs_[role_slot(role)];
  }

 private:
  std::array<RoleVocabulary, kRoleCount> vocabs_;
};

struct ReactionRecord {
  std::string id;
  std::vector<std::string> reactants;
  std::vector<std::string> products;
  std::array<std::optional<std::string>, kRoleCount> conditions;
  Split split = Split::train;
  std::optional<std::string> publication_proxy;

  const std::optional<std::string>& condition(Role role) const noexcept {
    return conditions[role_slot(role)];
  }
};

/// Checks the structural invariants and vocabulary membership of a record.
inline void validate_record(const ReactionRecord& record, const VocabularySet& vocabs) {
  if (record.reactants.empty()) {
    throw DataError("reaction '" + record.id + "' has no reactants");
  }
  if (record.products.empty()) {
    throw DataError("reaction '" + record.id + "' has no products");
  }
  for (Role r : kRoles) {
    const auto& label = record.condition(r);
    if (label && !vocabs[r].contains(*label)) {
      throw VocabularyError("reaction '" + record.id + "': label '" + *label +
                            "' is not in the " + std::string(role_name(r)) +
                            " vocabulary");
    }
  }
}

inline std::array<ClassIndex, kRoleCount> remap_record(const ReactionRecord& record,
                                                       const VocabularySet& vocabs) {
  std::array<ClassIndex, kRoleCount> out{};
  for (Role r : kRoles) out[role_slot(r)] = vocabs[r].remap(record.condition(r));
  return out;
}

inline constexpr double kSimplexTolerance = 1e-9;

/// Probability vector over one role's classes, absent class included.
class RoleDistribution {
 public:
  RoleDistribution() = default;

  RoleDistribution(Role role, std::vector<double> probs)
      : role_(role), probs_(std::move(probs)) {
    if (probs_.empty()) {
      throw InvariantError("empty distribution for role " +
                           std::string(role_name(role_)));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      if (!(probs_[i] >= 0.0) || !std::isfinite(probs_[i])) {
        throw InvariantError(std::string(role_name(role_)) +
                             " distribution has invalid entry " +
                             std::to_string(probs_[i]) + " at class " +
                             std::to_string(i));
      }
      total += probs_[i];
    }
    if (std::abs(total - 1.0) > kSimplexTolerance) {
      throw InvariantError(std::string(role_name(role_)) +
                           " distribution sums to " + std::to_string(total));
    }
  }

  static RoleDistribution one_hot(Role role, std::size_t size, ClassIndex cls) {
    std::vector<double> p(size, 0.0);
    p.at(cls) = 1.0;
    return RoleDistribution(role, std::move(p));
  }

  Role role() const noexcept { return role_; }
  std::size_t size() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](ClassIndex cls) const { return probs_.at(cls); }

  /// Class indices by probability descending, ties by ascending index.
  std::vector<ClassIndex> ranking() const {
    std::vector<ClassIndex> order(probs_.size());
    std::iota(order.begin(), order.end(), ClassIndex{0});
    std::stable_sort(order.begin(), order.end(), [this](ClassIndex a, ClassIndex b) {
      return probs_[a] > probs_[b];
    });
    return order;
  }

  ClassIndex argmax() const { return ranking().front(); }

  /// Class 0 masked out and the remainder renormalized. A distribution with
  /// all of its mass on class 0 becomes uniform over the present classes.
  RoleDistribution present_only() const {
    std::vector<double> p = probs_;
    p[kAbsentClass] = 0.0;
    double total = 0.0;
    for (double v : p) total += v;
    if (p.size() == 1) {
      throw InvariantError("present-only view of a vocabulary with no present labels");
    }
    if (total <= 0.0) {
      for (std::size_t i = 1; i < p.size(); ++i) p[i] = 1.0 / static_cast<double>(p.size() - 1);
    } else {
      for (double& v : p) v /= total;
    }
    return RoleDistribution(role_, std::move(p));
  }

 private:
  Role role_ = Role::catalyst;
  std::vector<double> probs_;
};

/// Set of class indices accepted as correct for one role of one reaction.
class MultiHotTarget {
 public:
  MultiHotTarget() = default;

  MultiHotTarget(Role role, std::vector<ClassIndex> valid, std::size_t size_with_absent)
      : role_(role), valid_(std::move(valid)) {
    std::sort(valid_.begin(), valid_.end());
    valid_.erase(std::unique(valid_.begin(), valid_.end()), valid_.end());
    if (valid_.empty()) {
      throw InvariantError("empty multi-hot target for role " +
                           std::string(role_name(role_)));
    }
    if (valid_.back() >= size_with_absent) {
      throw InvariantError("multi-hot target class " + std::to_string(valid_.back()) +
                           " exceeds vocabulary size " +
                           std::to_string(size_with_absent));
    }
  }

  Role role() const noexcept { return role_; }
  const std::vector<ClassIndex>& valid_labels() const noexcept { return valid_; }

  bool contains(ClassIndex cls) const {
    return std::binary_search(valid_.begin(), valid_.end(), cls);
  }

 private:
  Role role_ = Role::catalyst;
  std::vector<ClassIndex> valid_;
};

/// Union of remapped labels across every annotation in a duplicate group.
inline std::array<MultiHotTarget, kRoleCount> build_multihot(
    std::span<const ReactionRecord* const> group, const VocabularySet& vocabs) {
  if (group.empty()) throw InvariantError("build_multihot on an empty group");
  std::array<MultiHotTarget, kRoleCount> out;
  for (Role r : kRoles) {
    std::vector<ClassIndex> valid;
    valid.reserve(group.size());
    for (const ReactionRecord* rec : group) valid.push_back(vocabs[r].remap(rec->condition(r)));
    out[role_slot(r)] = MultiHotTarget(r, std::move(valid), vocabs[r].size_with_absent());
  }
  return out;
}

inline std::array<MultiHotTarget, kRoleCount> build_multihot(
    std::span<const ReactionRecord> group, const VocabularySet& vocabs) {
  std::vector<const ReactionRecord*> ptrs;
  ptrs.reserve(group.size());
  for (const auto& rec : group) ptrs.push_back(&rec);
  return build_multihot(std::span<const ReactionRecord* const>(ptrs), vocabs);
}

enum class KeyKind : std::uint8_t { rxn_only = 0, rxn_concat_delta = 1, drfp = 2 };

constexpr std::string_view key_kind_name(KeyKind kind) noexcept {
  switch (kind) {
    case KeyKind::rxn_only: return "rxn";
    case KeyKind::rxn_concat_delta: return "rxn+delta";
    case KeyKind::drfp: return "drfp";
  }
  return "?";
}

inline KeyKind parse_key_kind(std::string_view name) {
  if (name == "rxn" || name == "rxn_only") return KeyKind::rxn_only;
  if (name == "rxn+delta" || name == "rxn_concat_delta") return KeyKind::rxn_concat_delta;
  if (name == "drfp") return KeyKind::drfp;
  throw UsageError("unknown key kind '" + std::string(name) +
                   "' (expected rxn, rxn+delta or drfp)");
}

/// Neighbor count, vote temperature (nullopt = uniform vote) and the
/// head/neighbor mixing weight.
struct RetrievalConfig {
  KeyKind key_kind = KeyKind::rxn_only;
  std::uint32_t k = 10;
  std::optional<double> temperature;
  double alpha = 0.5;

  void validate() const {
    if (k < 1) throw UsageError("k must be >= 1");
    if (temperature && !(*temperature > 0.0 && std::isfinite(*temperature))) {
      throw UsageError("temperature must be a positive finite number");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  }

  std::string temperature_label() const {
    if (!temperature) return "uniform";
    std::ostringstream os;
    os << *temperature;
    return os.str();
  }

  friend bool operator==(const RetrievalConfig&, const RetrievalConfig&) = default;
};

inline std::optional<double> parse_temperature(std::string_view text) {
  if (text == "uniform") return std::nullopt;
  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(std::string(text), &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw UsageError("temperature must be 'uniform' or a positive number, got '" +
                     std::string(text) + "'");
  }
  if (!(value > 0.0)) throw UsageError("temperature must be positive");
  return value;
}

inline void to_json(nlohmann::json& j, const RetrievalConfig& cfg) {
  j = nlohmann::json{{"key", key_kind_name(cfg.key_kind)},
                     {"k", cfg.k},
                     {"temperature", cfg.temperature ? nlohmann::json(*cfg.temperature)
                                                     : nlohmann::json("uniform")},
                     {"alpha", cfg.alpha}};
}

}  // namespace condrec
