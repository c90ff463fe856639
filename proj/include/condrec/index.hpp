#pragma once

// Train-only precedent index with exact top-k inner-product search over
// unit-normalized keys. Ranking is by similarity descending, ties broken by
// ascending reaction id, so results do not depend on row order or on the
// number of worker threads.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "condrec/error.hpp"
#include "condrec/fingerprint.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"
#include "condrec/tensor_file.hpp"

namespace condrec {

using RoleLabels = std::array<ClassIndex, kRoleCount>;

struct Neighbor {
  std::string id;
  std::size_t row = 0;
  double similarity = 0.0;
  RoleLabels labels{};

  ClassIndex label(Role role) const noexcept { return labels[role_slot(role)]; }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct SearchOptions {
  std::size_t threads = 1;
  /// Rows for which this returns true are skipped.
  std::function<bool(std::size_t)> exclude;
};

inline constexpr std::string_view kIndexMagic = "HIRESIDX";
inline constexpr std::uint32_t kIndexFormatVersion = 1;
inline constexpr double kUnitNormTolerance = 1e-6;

/// Concatenated bank key for one row, not yet normalized.
inline std::vector<float> bank_key(const EmbeddingBank& bank, std::size_t row, KeyKind kind) {
  auto rxn = bank.z_rxn().row(row);
  std::vector<float> key(rxn.begin(), rxn.end());
  if (kind == KeyKind::rxn_concat_delta) {
    if (!bank.has_delta()) {
      throw DataError("key kind rxn+delta needs an embedding bank with z_delta");
    }
    auto delta = bank.z_delta()->row(row);
    key.insert(key.end(), delta.begin(), delta.end());
  } else if (kind == KeyKind::drfp) {
    throw UsageError("drfp keys come from reaction SMILES, not from an embedding bank");
  }
  return key;
}

inline std::optional<std::vector<float>> bank_key(const EmbeddingBank& bank, std::string_view id,
                                                  KeyKind kind) {
  auto row = bank.find(id);
  if (!row) return std::nullopt;
  return bank_key(bank, *row, kind);
}

class PrecedentIndex {
 public:
  enum class Storage : std::uint8_t { dense = 0, binary = 1 };

  using SearchOptions = condrec::SearchOptions;

  PrecedentIndex() = default;

  /// Normalizes each key row; zero rows are rejected.
  static PrecedentIndex from_dense(KeyKind kind, std::vector<std::string> ids, FloatMatrix keys,
                                   std::vector<RoleLabels> labels,
                                   std::array<std::uint32_t, kRoleCount> vocab_sizes) {
    if (keys.rows != ids.size() || labels.size() != ids.size()) {
      throw DimensionError("index ids, keys and labels differ in length");
    }
    if (keys.cols == 0) throw DimensionError("index key dimension is zero");
    for (std::size_t i = 0; i < keys.rows; ++i) {
      auto row = keys.row(i);
      double sq = 0.0;
      for (float v : row) {
        if (!std::isfinite(v)) throw DataError("non-finite key for reaction '" + ids[i] + "'");
        sq += static_cast<double>(v) * static_cast<double>(v);
      }
      if (sq == 0.0) throw DataError("zero-norm key for reaction '" + ids[i] + "'");
      const double norm = std::sqrt(sq);
      for (float& v : row) v = static_cast<float>(static_cast<double>(v) / norm);
    }
    PrecedentIndex idx;
    idx.kind_ = kind;
    idx.storage_ = Storage::dense;
    idx.dim_ = keys.cols;
    idx.keys_ = std::move(keys);
    idx.ids_ = std::move(ids);
    idx.labels_ = std::move(labels);
    idx.vocab_sizes_ = vocab_sizes;
    idx.finish();
    return idx;
  }

  static PrecedentIndex from_fingerprints(std::vector<std::string> ids,
                                          std::vector<ReactionFingerprint> fps,
                                          std::vector<RoleLabels> labels,
                                          std::array<std::uint32_t, kRoleCount> vocab_sizes,
                                          const DrfpParams& params) {
    if (fps.size() != ids.size() || labels.size() != ids.size()) {
      throw DimensionError("index ids, fingerprints and labels differ in length");
    }
    PrecedentIndex idx;
    idx.kind_ = KeyKind::drfp;
    idx.storage_ = Storage::binary;
    idx.dim_ = params.nbits;
    idx.drfp_ = params;
    for (std::size_t i = 0; i < fps.size(); ++i) {
      if (fps[i].nbits() != params.nbits) throw DimensionError("fingerprint length mismatch");
      if (fps[i].popcount() == 0) throw DataError("zero-norm key for reaction '" + ids[i] + "'");
    }
    idx.fingerprints_ = std::move(fps);
    idx.ids_ = std::move(ids);
    idx.labels_ = std::move(labels);
    idx.vocab_sizes_ = vocab_sizes;
    idx.finish();
    return idx;
  }

  /// Index over train records using keys drawn from the bank.
  static PrecedentIndex build(const EmbeddingBank& bank, std::span<const ReactionRecord> train,
                              const VocabularySet& vocabs, KeyKind kind) {
    if (kind == KeyKind::drfp) throw UsageError("use build_drfp for fingerprint-keyed indexes");
    if (kind == KeyKind::rxn_concat_delta && !bank.has_delta()) {
      throw DataError("key kind rxn+delta needs an embedding bank with z_delta");
    }
    const std::size_t dim = bank.dim() * (kind == KeyKind::rxn_concat_delta ? 2 : 1);
    FloatMatrix keys(train.size(), dim);
    std::vector<std::string> ids;
    std::vector<RoleLabels> labels;
    ids.reserve(train.size());
    labels.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto& rec = train[i];
      require_train(rec);
      auto row = bank.find(rec.id);
      if (!row) throw DataError("reaction '" + rec.id + "' has no embedding in the bank");
      auto key = bank_key(bank, *row, kind);
      std::copy(key.begin(), key.end(), keys.row(i).begin());
      ids.push_back(rec.id);
      labels.push_back(remap_record(rec, vocabs));
    }
    return from_dense(kind, std::move(ids), std::move(keys), std::move(labels), sizes_of(vocabs));
  }

  static PrecedentIndex build_drfp(std::span<const ReactionRecord> train, const VocabularySet& vocabs,
                                   const DrfpParams& params = {}) {
    std::vector<std::string> ids;
    std::vector<ReactionFingerprint> fps;
    std::vector<RoleLabels> labels;
    for (const auto& rec : train) {
      require_train(rec);
      ids.push_back(rec.id);
      fps.push_back(drfp_style(rec, params));
      labels.push_back(remap_record(rec, vocabs));
    }
    return from_fingerprints(std::move(ids), std::move(fps), std::move(labels), sizes_of(vocabs),
                             params);
  }

  KeyKind key_kind() const noexcept { return kind_; }
  Storage storage() const noexcept { return storage_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const RoleLabels& labels(std::size_t row) const { return labels_.at(row); }
  const std::array<std::uint32_t, kRoleCount>& vocab_sizes() const noexcept { return vocab_sizes_; }
  const DrfpParams& drfp_params() const noexcept { return drfp_; }
  std::span<const float> key(std::size_t row) const { return keys_.row(row); }
  const ReactionFingerprint& fingerprint(std::size_t row) const { return fingerprints_.at(row); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = row_of_.find(std::string(id));
    if (it == row_of_.end()) return std::nullopt;
    return it->second;
  }

  /// Exact top-k for a dense query. The query is normalized first. For a
  /// fingerprint-keyed index the query must be a 0/1 vector of length nbits.
  std::vector<Neighbor> search(std::span<const float> query, std::size_t k,
                               const SearchOptions& opts = {}) const {
    if (query.size() != dim_) {
      throw DimensionError("query has dimension " + std::to_string(query.size()) +
                           ", index expects " + std::to_string(dim_));
    }
    if (storage_ == Storage::binary) {
      ReactionFingerprint fp(dim_);
      for (std::size_t j = 0; j < query.size(); ++j) {
        if (query[j] == 1.0f) {
          fp.set(j);
        } else if (query[j] != 0.0f) {
          throw DimensionError("fingerprint-keyed index needs a 0/1 query vector");
        }
      }
      return search(fp, k, opts);
    }
    auto unit = normalize_query(query);
    return run(k, opts, [&](std::size_t row) {
      auto key = keys_.row(row);
      double dot = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) dot += static_cast<double>(key[j]) * unit[j];
      return dot;
    });
  }

  /// Cosine similarity between bit vectors: |a AND b| / sqrt(|a| |b|).
  std::vector<Neighbor> search(const ReactionFingerprint& query, std::size_t k,
                               const SearchOptions& opts = {}) const {
    if (storage_ != Storage::binary) {
      throw UsageError("fingerprint queries need a fingerprint-keyed index");
    }
    if (query.nbits() != dim_) throw DimensionError("query fingerprint length mismatch");
    const double q_pop = static_cast<double>(query.popcount());
    if (q_pop == 0.0) throw DataError("zero-norm query fingerprint");
    return run(k, opts, [&](std::size_t row) {
      const auto& fp = fingerprints_[row];
      std::size_t inter = 0;
      for (std::size_t w = 0; w < fp.words().size(); ++w) {
        inter += static_cast<std::size_t>(std::popcount(fp.words()[w] & query.words()[w]));
      }
      return static_cast<double>(inter) / std::sqrt(q_pop * static_cast<double>(pop_[row]));
    });
  }

  /// Unit-normalizes a dense query in double precision.
  static std::vector<double> normalize_query(std::span<const float> query) {
    double sq = 0.0;
    for (float v : query) {
      if (!std::isfinite(v)) throw DataError("non-finite value in query key");
      sq += static_cast<double>(v) * static_cast<double>(v);
    }
    if (sq == 0.0) throw DataError("zero-norm query key");
    const double norm = std::sqrt(sq);
    std::vector<double> unit(query.size());
    for (std::size_t j = 0; j < query.size(); ++j) unit[j] = static_cast<double>(query[j]) / norm;
    return unit;
  }

  tensors::TensorFile to_file() const {
    tensors::TensorFile f{std::string(kIndexMagic)};
    const std::uint32_t version = kIndexFormatVersion;
    f.put_u32("format_version", {1}, std::span<const std::uint32_t>(&version, 1));
    const std::uint8_t kind = static_cast<std::uint8_t>(kind_);
    f.put_u8("key_kind", {1}, std::span<const std::uint8_t>(&kind, 1));
    const std::uint8_t storage = static_cast<std::uint8_t>(storage_);
    f.put_u8("storage", {1}, std::span<const std::uint8_t>(&storage, 1));
    const std::uint32_t dim = static_cast<std::uint32_t>(dim_);
    f.put_u32("dim", {1}, std::span<const std::uint32_t>(&dim, 1));
    f.put_strings("ids", ids_);
    std::vector<std::uint32_t> flat;
    flat.reserve(labels_.size() * kRoleCount);
    for (const auto& l : labels_) flat.insert(flat.end(), l.begin(), l.end());
    f.put_u32("labels", {labels_.size(), kRoleCount}, flat);
    f.put_u32("vocab_sizes", {kRoleCount}, vocab_sizes_);
    if (storage_ == Storage::dense) {
      f.put_f32("keys", {keys_.rows, keys_.cols}, keys_.data);
    } else {
      std::vector<std::uint8_t> bits;
      for (const auto& fp : fingerprints_) {
        auto p = fp.packed();
        bits.insert(bits.end(), p.begin(), p.end());
      }
      f.put_u8("bits", {fingerprints_.size(), (dim_ + 7) / 8}, bits);
      const std::array<std::uint32_t, 3> params = {static_cast<std::uint32_t>(drfp_.nbits),
                                                   static_cast<std::uint32_t>(drfp_.n_min),
                                                   static_cast<std::uint32_t>(drfp_.n_max)};
      f.put_u32("drfp_params", {3}, params);
    }
    return f;
  }

  void save(const std::filesystem::path& path) const { to_file().save(path); }

  static PrecedentIndex from_file(const tensors::TensorFile& f) {
    auto one_u32 = [&](const std::string& name) {
      auto v = f.u32(name);
      if (v.size() != 1) throw FormatError("index section '" + name + "' must hold one value");
      return v[0];
    };
    auto one_u8 = [&](const std::string& name) {
      auto v = f.u8(name);
      if (v.size() != 1) throw FormatError("index section '" + name + "' must hold one value");
      return v[0];
    };
    if (const auto v = one_u32("format_version"); v != kIndexFormatVersion) {
      throw FormatError("unsupported index format version " + std::to_string(v));
    }
    const auto kind = one_u8("key_kind");
    const auto storage = one_u8("storage");
    if (kind > static_cast<std::uint8_t>(KeyKind::drfp) || storage > 1) {
      throw FormatError("index has an unknown key kind or storage tag");
    }
    const std::size_t dim = one_u32("dim");
    auto ids = f.strings("ids");
    auto flat = f.u32("labels");
    if (flat.size() != ids.size() * kRoleCount) throw FormatError("index labels do not match ids");
    std::vector<RoleLabels> labels(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t r = 0; r < kRoleCount; ++r) labels[i][r] = flat[i * kRoleCount + r];
    auto sizes_v = f.u32("vocab_sizes");
    if (sizes_v.size() != kRoleCount) throw FormatError("index vocab_sizes must hold 3 values");
    std::array<std::uint32_t, kRoleCount> sizes{sizes_v[0], sizes_v[1], sizes_v[2]};

    PrecedentIndex idx;
    idx.kind_ = static_cast<KeyKind>(kind);
    idx.storage_ = static_cast<Storage>(storage);
    idx.dim_ = dim;
    idx.ids_ = std::move(ids);
    idx.labels_ = std::move(labels);
    idx.vocab_sizes_ = sizes;
    if (idx.storage_ == Storage::dense) {
      const auto& s = f.get("keys");
      if (s.shape.size() != 2 || s.shape[0] != idx.ids_.size() || s.shape[1] != dim) {
        throw FormatError("index keys section has the wrong shape");
      }
      idx.keys_ = FloatMatrix(idx.ids_.size(), dim);
      idx.keys_.data = f.f32("keys");
    } else {
      auto params = f.u32("drfp_params");
      if (params.size() != 3 || params[0] != dim) throw FormatError("index drfp_params are inconsistent");
      idx.drfp_ = DrfpParams{params[0], params[1], params[2]};
      auto bits = f.u8("bits");
      const std::size_t row_bytes = (dim + 7) / 8;
      if (bits.size() != idx.ids_.size() * row_bytes) throw FormatError("index bits section has the wrong size");
      for (std::size_t i = 0; i < idx.ids_.size(); ++i) {
        idx.fingerprints_.push_back(ReactionFingerprint::from_packed(
            dim, std::span<const std::uint8_t>(bits).subspan(i * row_bytes, row_bytes)));
      }
    }
    idx.finish();
    return idx;
  }

  static PrecedentIndex load(const std::filesystem::path& path) {
    return from_file(tensors::TensorFile::load(path, kIndexMagic));
  }

 private:
  static void require_train(const ReactionRecord& rec) {
    if (rec.split != Split::train) {
      throw LeakageError("reaction '" + rec.id + "' from the " + std::string(split_name(rec.split)) +
                         " split cannot enter the precedent index");
    }
  }

  static std::array<std::uint32_t, kRoleCount> sizes_of(const VocabularySet& vocabs) {
    std::array<std::uint32_t, kRoleCount> out{};
    for (Role r : kRoles) out[role_slot(r)] = static_cast<std::uint32_t>(vocabs[r].size_with_absent());
    return out;
  }

  void finish() {
    row_of_.clear();
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!row_of_.emplace(ids_[i], i).second) {
        throw DataError("index repeats reaction id '" + ids_[i] + "'");
      }
    }
    std::vector<std::uint32_t> order(ids_.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return ids_[a] < ids_[b]; });
    id_rank_.assign(ids_.size(), 0);
    for (std::uint32_t r = 0; r < order.size(); ++r) id_rank_[order[r]] = r;
    pop_.clear();
    for (const auto& fp : fingerprints_) pop_.push_back(static_cast<std::uint32_t>(fp.popcount()));
    for (const auto& l : labels_) {
      for (std::size_t r = 0; r < kRoleCount; ++r) {
        if (l[r] >= vocab_sizes_[r]) throw DataError("index label outside its vocabulary");
      }
    }
  }

  struct Candidate {
    double similarity;
    std::uint32_t row;
  };

  // true when a ranks strictly ahead of b
  bool ahead(const Candidate& a, const Candidate& b) const noexcept {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return id_rank_[a.row] < id_rank_[b.row];
  }

  template <class Similarity>
  std::vector<Candidate> scan(std::size_t begin, std::size_t end, std::size_t k,
                              const SearchOptions& opts, const Similarity& similarity) const {
    auto worse_on_top = [this](const Candidate& a, const Candidate& b) { return ahead(a, b); };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse_on_top)> heap(worse_on_top);
    for (std::size_t row = begin; row < end; ++row) {
      if (opts.exclude && opts.exclude(row)) continue;
      Candidate c{similarity(row), static_cast<std::uint32_t>(row)};
      if (heap.size() < k) {
        heap.push(c);
      } else if (ahead(c, heap.top())) {
        heap.pop();
        heap.push(c);
      }
    }
    std::vector<Candidate> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
      out.push_back(heap.top());
      heap.pop();
    }
    return out;
  }

  template <class Similarity>
  std::vector<Neighbor> run(std::size_t k, const SearchOptions& opts, const Similarity& similarity) const {
    if (k < 1) throw UsageError("k must be >= 1");
    const std::size_t n = ids_.size();
    std::vector<Candidate> merged;
    const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, n));
    if (threads == 1) {
      merged = scan(0, n, k, opts, similarity);
    } else {
      std::vector<std::vector<Candidate>> parts(threads);
      std::vector<std::thread> workers;
      const std::size_t block = (n + threads - 1) / threads;
      for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = std::min(n, t * block);
        const std::size_t end = std::min(n, begin + block);
        workers.emplace_back([&, t, begin, end] { parts[t] = scan(begin, end, k, opts, similarity); });
      }
      for (auto& w : workers) w.join();
      for (auto& p : parts) merged.insert(merged.end(), p.begin(), p.end());
    }
    std::sort(merged.begin(), merged.end(),
              [this](const Candidate& a, const Candidate& b) { return ahead(a, b); });
    if (merged.size() > k) merged.resize(k);
    std::vector<Neighbor> out;
    out.reserve(merged.size());
    for (const auto& c : merged) {
      out.push_back(Neighbor{ids_[c.row], c.row, c.similarity, labels_[c.row]});
    }
    return out;
  }

  KeyKind kind_ = KeyKind::rxn_only;
  Storage storage_ = Storage::dense;
  std::size_t dim_ = 0;
  FloatMatrix keys_;
  std::vector<ReactionFingerprint> fingerprints_;
  std::vector<std::uint32_t> pop_;
  std::vector<std::string> ids_;
  std::vector<RoleLabels> labels_;
  std::array<std::uint32_t, kRoleCount> vocab_sizes_{};
  DrfpParams drfp_;
  std::unordered_map<std::string, std::size_t> row_of_;
  std::vector<std::uint32_t> id_rank_;
};

}  // namespace condrec
