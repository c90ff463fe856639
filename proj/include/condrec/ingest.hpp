#pragma once

// Dataset, embedding-bank and head-probability ingestion.
//
// Reaction TSV (schema v1), tab separated, header row required:
//   id  reactants  products  catalyst  solvent  reagent  split  publication_proxy
// Molecule lists are dot-joined SMILES; an empty condition cell means absent.
//
// Bank container (little-endian):
//   "HIRESEMB" | u32 version | u32 n | u32 d | u8 flags | payload | ids | u64 fnv1a
//   flags bit 0: z_delta present; bits 1-2: role tag (0 none, 1 catalyst,
//   2 solvent, 3 reagent); bit 3: bit-packed payload.
//   Dense payload: z_rxn as n*d f32 row-major, then z_delta when flagged.
//   Bit-packed payload: n rows of ceil(d/8) bytes, bit j in byte j/8 at
//   position j%8 (LSB first).
//   ids: n strings, each u32 length + UTF-8 bytes.
//   The trailing u64 is FNV-1a 64 over every preceding byte.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "condrec/binary_io.hpp"
#include "condrec/error.hpp"
#include "condrec/hash.hpp"
#include "condrec/model.hpp"
#include "condrec/smiles.hpp"

namespace condrec {

/// Row-major float32 matrix.
struct FloatMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  FloatMatrix() = default;
  FloatMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  friend bool operator==(const FloatMatrix&, const FloatMatrix&) = default;
};

namespace bank {

inline constexpr std::string_view kMagic = "HIRESEMB";
inline constexpr std::uint32_t kVersion = 1;

inline constexpr std::uint8_t kFlagDelta = 0x01;
inline constexpr std::uint8_t kFlagRoleMask = 0x06;
inline constexpr std::uint8_t kFlagBitPacked = 0x08;

inline std::uint8_t role_tag(std::optional<Role> role) {
  return role ? static_cast<std::uint8_t>((role_slot(*role) + 1) << 1) : 0;
}

inline std::optional<Role> role_from_flags(std::uint8_t flags) {
  const int tag = (flags & kFlagRoleMask) >> 1;
  if (tag == 0) return std::nullopt;
  return kRoles[static_cast<std::size_t>(tag - 1)];
}

/// One decoded container. Exactly one of dense/bits is populated.
struct Container {
  std::uint8_t flags = 0;
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  FloatMatrix dense;
  std::optional<FloatMatrix> dense_delta;
  std::vector<std::uint8_t> bits;  // bit-packed rows
  std::vector<std::string> ids;

  std::size_t packed_row_bytes() const noexcept { return (d + 7) / 8; }
};

inline void encode(io::ByteWriter& w, const Container& c) {
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(c.n);
  w.u32(c.d);
  w.u8(c.flags);
  if (c.flags & kFlagBitPacked) {
    w.bytes(c.bits);
  } else {
    w.f32_array(c.dense.data);
    if (c.flags & kFlagDelta) w.f32_array(c.dense_delta->data);
  }
  for (const auto& id : c.ids) w.str(id);
}

inline std::vector<std::uint8_t> encode_sealed(const Container& c) {
  io::ByteWriter w;
  encode(w, c);
  w.seal();
  return w.take();
}

/// Decodes one sealed container starting at the reader's position.
inline Container decode(io::ByteReader& r) {
  const std::size_t start = r.position();
  auto magic = r.take(kMagic.size());
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), magic.size()) != kMagic) {
    throw FormatError(r.what() + ": bad magic (expected HIRESEMB)");
  }
  if (const auto version = r.u32(); version != kVersion) {
    throw FormatError(r.what() + ": unsupported version " + std::to_string(version));
  }
  Container c;
  c.n = r.u32();
  c.d = r.u32();
  c.flags = r.u8();
  if (c.d == 0) throw DimensionError(r.what() + ": declared dimension is zero");

  const std::uint64_t n = c.n;
  const std::uint64_t d = c.d;
  std::uint64_t payload = 0;
  if (c.flags & kFlagBitPacked) {
    payload = n * ((d + 7) / 8);
  } else {
    payload = n * d * 4 * ((c.flags & kFlagDelta) ? 2 : 1);
  }
  // every id costs at least its 4-byte length prefix, plus the checksum
  const std::uint64_t minimum = payload + n * 4 + 8;
  if (r.remaining() < minimum) {
    throw DimensionError(r.what() + ": declared " + std::to_string(n) + "x" +
                         std::to_string(d) + " payload needs at least " +
                         std::to_string(minimum) + " bytes, " +
                         std::to_string(r.remaining()) + " present");
  }

  if (c.flags & kFlagBitPacked) {
    auto src = r.take(payload);
    c.bits.assign(src.begin(), src.end());
  } else {
    c.dense = FloatMatrix(c.n, c.d);
    r.f32_array(c.dense.data);
    if (c.flags & kFlagDelta) {
      c.dense_delta = FloatMatrix(c.n, c.d);
      r.f32_array(c.dense_delta->data);
    }
  }
  c.ids.reserve(c.n);
  for (std::uint32_t i = 0; i < c.n; ++i) c.ids.push_back(r.str());

  const std::size_t body_end = r.position();
  const std::uint64_t stored = r.u64();
  r.seek(start);
  auto body = r.take(body_end - start);
  r.u64();
  if (stored != fnv1a64(body)) throw FormatError(r.what() + ": checksum mismatch");

  auto check_finite = [&](const FloatMatrix& m, const char* what) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (float v : m.row(i)) {
        if (!std::isfinite(v)) {
          throw DataError(r.what() + ": non-finite value in " + what + " row " +
                          std::to_string(i) + " (id '" + c.ids[i] + "')");
        }
      }
    }
  };
  if (!(c.flags & kFlagBitPacked)) {
    check_finite(c.dense, "z_rxn");
    if (c.dense_delta) check_finite(*c.dense_delta, "z_delta");
  }
  return c;
}

}  // namespace bank

/// Dense reaction embeddings keyed by reaction id.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;

  EmbeddingBank(std::vector<std::string> ids, FloatMatrix z_rxn,
                std::optional<FloatMatrix> z_delta = std::nullopt)
      : ids_(std::move(ids)), z_rxn_(std::move(z_rxn)), z_delta_(std::move(z_delta)) {
    if (z_rxn_.rows != ids_.size()) {
      throw DimensionError("embedding bank has " + std::to_string(ids_.size()) +
                           " ids but " + std::to_string(z_rxn_.rows) + " rows");
    }
    if (z_rxn_.cols == 0) throw DimensionError("embedding bank dimension is zero");
    if (z_delta_ && (z_delta_->rows != z_rxn_.rows || z_delta_->cols != z_rxn_.cols)) {
      throw DimensionError("z_delta shape does not match z_rxn");
    }
    for (std::size_t i = 0; i < z_rxn_.rows; ++i) {
      for (float v : z_rxn_.row(i)) {
        if (!std::isfinite(v)) {
          throw DataError("non-finite value in z_rxn row " + std::to_string(i));
        }
      }
      if (z_delta_) {
        for (float v : z_delta_->row(i)) {
          if (!std::isfinite(v)) {
            throw DataError("non-finite value in z_delta row " + std::to_string(i));
          }
        }
      }
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!row_of_.emplace(ids_[i], i).second) {
        throw DataError("embedding bank repeats id '" + ids_[i] + "'");
      }
    }
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return z_rxn_.cols; }
  bool has_delta() const noexcept { return z_delta_.has_value(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const FloatMatrix& z_rxn() const noexcept { return z_rxn_; }
  const std::optional<FloatMatrix>& z_delta() const noexcept { return z_delta_; }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = row_of_.find(std::string(id));
    if (it == row_of_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const EmbeddingBank& a, const EmbeddingBank& b) {
    return a.ids_ == b.ids_ && a.z_rxn_ == b.z_rxn_ && a.z_delta_ == b.z_delta_;
  }

 private:
  std::vector<std::string> ids_;
  FloatMatrix z_rxn_;
  std::optional<FloatMatrix> z_delta_;
  std::unordered_map<std::string, std::size_t> row_of_;
};

inline std::vector<std::uint8_t> encode_embedding_bank(const EmbeddingBank& b) {
  bank::Container c;
  c.n = static_cast<std::uint32_t>(b.size());
  c.d = static_cast<std::uint32_t>(b.dim());
  c.flags = b.has_delta() ? bank::kFlagDelta : 0;
  c.dense = b.z_rxn();
  c.dense_delta = b.z_delta();
  c.ids = b.ids();
  return bank::encode_sealed(c);
}

inline void save_embedding_bank(const EmbeddingBank& b, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_embedding_bank(b));
}

inline EmbeddingBank decode_embedding_bank(std::span<const std::uint8_t> data,
                                           const std::string& what = "embedding bank") {
  io::ByteReader r(data, what);
  auto c = bank::decode(r);
  if (c.flags & bank::kFlagBitPacked) {
    throw FormatError(what + " holds a bit-packed payload, not embeddings");
  }
  if (r.remaining() != 0) throw FormatError(what + " has trailing bytes");
  return EmbeddingBank(std::move(c.ids), std::move(c.dense), std::move(c.dense_delta));
}

inline EmbeddingBank load_embedding_bank(const std::filesystem::path& path) {
  return decode_embedding_bank(io::read_file(path), path.string());
}

/// Learned-head probabilities per role, keyed by reaction id. On disk: one
/// to three bank containers back to back, each tagged with its role and with
/// d equal to the role's class count including absent.
class HeadProbabilities {
 public:
  struct Table {
    std::vector<std::string> ids;
    FloatMatrix probs;
    std::unordered_map<std::string, std::size_t> row_of;
  };

  static constexpr double kRowTolerance = 1e-6;

  void set(Role role, std::vector<std::string> ids, FloatMatrix probs) {
    if (ids.size() != probs.rows) {
      throw DimensionError("head probabilities for " + std::string(role_name(role)) +
                           " have mismatched id and row counts");
    }
    Table t;
    t.ids = std::move(ids);
    t.probs = std::move(probs);
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
      double total = 0.0;
      for (float v : t.probs.row(i)) {
        if (!(v >= 0.0f) || !std::isfinite(v)) {
          throw DataError("head probabilities for " + std::string(role_name(role)) +
                          " row " + std::to_string(i) + " contain an invalid entry");
        }
        total += v;
      }
      if (std::abs(total - 1.0) > kRowTolerance) {
        throw DataError("head probabilities for " + std::string(role_name(role)) + " row " +
                        std::to_string(i) + " (id '" + t.ids[i] + "') sum to " +
                        std::to_string(total));
      }
      if (!t.row_of.emplace(t.ids[i], i).second) {
        throw DataError("head probabilities repeat id '" + t.ids[i] + "'");
      }
    }
    tables_[role_slot(role)] = std::move(t);
  }

  bool has(Role role) const noexcept { return tables_[role_slot(role)].has_value(); }
  const std::optional<Table>& table(Role role) const noexcept { return tables_[role_slot(role)]; }

  /// Row renormalized in double precision so it satisfies the simplex check.
  std::optional<RoleDistribution> get(Role role, std::string_view id) const {
    const auto& t = tables_[role_slot(role)];
    if (!t) return std::nullopt;
    auto it = t->row_of.find(std::string(id));
    if (it == t->row_of.end()) return std::nullopt;
    auto row = t->probs.row(it->second);
    std::vector<double> p(row.begin(), row.end());
    double total = 0.0;
    for (double v : p) total += v;
    for (double& v : p) v /= total;
    return RoleDistribution(role, std::move(p));
  }

  void check_against(const VocabularySet& vocabs) const {
    for (Role r : kRoles) {
      const auto& t = tables_[role_slot(r)];
      if (t && t->probs.cols != vocabs[r].size_with_absent()) {
        throw DimensionError("head probabilities for " + std::string(role_name(r)) + " have " +
                             std::to_string(t->probs.cols) + " classes, vocabulary has " +
                             std::to_string(vocabs[r].size_with_absent()));
      }
    }
  }

 private:
  std::array<std::optional<Table>, kRoleCount> tables_;
};

inline std::vector<std::uint8_t> encode_head_probabilities(const HeadProbabilities& heads) {
  io::ByteWriter all;
  for (Role r : kRoles) {
    const auto& t = heads.table(r);
    if (!t) continue;
    bank::Container c;
    c.n = static_cast<std::uint32_t>(t->ids.size());
    c.d = static_cast<std::uint32_t>(t->probs.cols);
    c.flags = bank::role_tag(r);
    c.dense = t->probs;
    c.ids = t->ids;
    all.bytes(bank::encode_sealed(c));
  }
  return all.take();
}

inline void save_head_probabilities(const HeadProbabilities& heads,
                                    const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_head_probabilities(heads));
}

inline HeadProbabilities load_head_probabilities(const std::filesystem::path& path) {
  auto data = io::read_file(path);
  io::ByteReader r(data, path.string());
  HeadProbabilities heads;
  while (r.remaining() > 0) {
    auto c = bank::decode(r);
    auto role = bank::role_from_flags(c.flags);
    if (!role) throw FormatError(path.string() + ": head probability container lacks a role tag");
    if (c.flags & (bank::kFlagBitPacked | bank::kFlagDelta)) {
      throw FormatError(path.string() + ": head probability container has unexpected flags");
    }
    if (heads.has(*role)) {
      throw FormatError(path.string() + ": repeated role " + std::string(role_name(*role)));
    }
    heads.set(*role, std::move(c.ids), std::move(c.dense));
  }
  return heads;
}

// ---------------------------------------------------------------------------
// Reaction TSV

inline constexpr std::array<std::string_view, 8> kTsvColumns = {
    "id", "reactants", "products", "catalyst", "solvent", "reagent", "split", "publication_proxy"};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  std::size_t total() const noexcept { return train + validation + test; }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct Dataset {
  std::vector<ReactionRecord> records;
  SplitCounts counts;

  std::vector<ReactionRecord> of_split(Split split) const {
    std::vector<ReactionRecord> out;
    for (const auto& r : records) {
      if (r.split == split) out.push_back(r);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    auto pos = s.find(sep, begin);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(begin));
      break;
    }
    out.push_back(s.substr(begin, pos - begin));
    begin = pos + 1;
  }
  return out;
}

inline std::vector<std::string> molecules_of(std::string_view cell) {
  std::vector<std::string> out;
  if (cell.empty()) return out;
  for (auto part : split_on(cell, '.')) out.emplace_back(part);
  return out;
}

inline void count_split(SplitCounts& c, Split s) {
  switch (s) {
    case Split::train: ++c.train; break;
    case Split::validation: ++c.validation; break;
    case Split::test: ++c.test; break;
  }
}

}  // namespace detail

inline constexpr int kTsvSchemaVersion = 1;

inline Dataset parse_reactions(std::string_view text, int schema_version = kTsvSchemaVersion) {
  if (schema_version != kTsvSchemaVersion) {
    throw UsageError("unsupported reaction TSV schema version " + std::to_string(schema_version));
  }
  Dataset ds;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t begin = 0;
  bool header_seen = false;
  while (begin < text.size()) {
    auto end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(begin, end - begin);
    begin = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    auto cells = detail::split_on(line, '\t');
    if (!header_seen) {
      header_seen = true;
      bool header_ok = cells.size() == kTsvColumns.size() &&
                       std::equal(cells.begin(), cells.end(), kTsvColumns.begin());
      if (!header_ok) throw ParseError("line 1: header does not match schema v1", line_no, ParseError::npos);
      continue;
    }
    auto fail = [&](const std::string& why) -> ParseError {
      return ParseError("line " + std::to_string(line_no) + ": " + why, line_no, ParseError::npos);
    };
    if (cells.size() != kTsvColumns.size()) {
      throw fail("expected " + std::to_string(kTsvColumns.size()) + " columns, found " +
                 std::to_string(cells.size()));
    }
    ReactionRecord rec;
    rec.id = std::string(cells[0]);
    if (rec.id.empty()) throw fail("empty id");
    rec.reactants = detail::molecules_of(cells[1]);
    rec.products = detail::molecules_of(cells[2]);
    if (rec.reactants.empty()) throw fail("no reactants");
    if (rec.products.empty()) throw fail("no products");
    for (const auto& m : rec.reactants) {
      if (m.empty()) throw fail("empty reactant molecule");
    }
    for (const auto& m : rec.products) {
      if (m.empty()) throw fail("empty product molecule");
    }
    for (std::size_t r = 0; r < kRoleCount; ++r) {
      if (!cells[3 + r].empty()) rec.conditions[r] = std::string(cells[3 + r]);
    }
    auto split = parse_split(cells[6]);
    if (!split) throw fail("unknown split '" + std::string(cells[6]) + "'");
    rec.split = *split;
    if (!cells[7].empty()) rec.publication_proxy = std::string(cells[7]);
    if (auto [it, fresh] = seen.emplace(rec.id, line_no); !fresh) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + rec.id +
                      "' (first seen on line " + std::to_string(it->second) + ")");
    }
    detail::count_split(ds.counts, rec.split);
    ds.records.push_back(std::move(rec));
  }
  if (!header_seen) throw ParseError("reaction file is empty", 0, ParseError::npos);
  return ds;
}

inline Dataset load_reactions(const std::filesystem::path& path,
                              int schema_version = kTsvSchemaVersion) {
  try {
    return parse_reactions(io::read_text(path), schema_version);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line(), e.position());
  }
}

inline std::string format_reactions(std::span<const ReactionRecord> records) {
  std::string out;
  for (std::size_t i = 0; i < kTsvColumns.size(); ++i) {
    if (i) out += '\t';
    out += kTsvColumns[i];
  }
  out += '\n';
  for (const auto& r : records) {
    out += r.id;
    out += '\t';
    out += smiles::join_molecules(r.reactants);
    out += '\t';
    out += smiles::join_molecules(r.products);
    for (Role role : kRoles) {
      out += '\t';
      if (r.condition(role)) out += *r.condition(role);
    }
    out += '\t';
    out += split_name(r.split);
    out += '\t';
    if (r.publication_proxy) out += *r.publication_proxy;
    out += '\n';
  }
  return out;
}

inline void save_reactions(std::span<const ReactionRecord> records,
                           const std::filesystem::path& path) {
  io::write_text_atomic(path, format_reactions(records));
}

inline void validate_dataset(const Dataset& ds, const VocabularySet& vocabs) {
  for (const auto& r : ds.records) validate_record(r, vocabs);
}

inline std::string canonical_reaction(const ReactionRecord& r) {
  try {
    return smiles::canonical_reaction(r.reactants, r.products);
  } catch (const ParseError& e) {
    throw DataError("reaction '" + r.id + "': " + e.what(), "parse");
  }
}

/// For each record, the multi-hot targets formed by the union over every
/// record in `records` sharing its canonical reaction string.
inline std::vector<std::array<MultiHotTarget, kRoleCount>> duplicate_group_targets(
    std::span<const ReactionRecord> records, const VocabularySet& vocabs) {
  std::map<std::string, std::vector<const ReactionRecord*>> groups;
  std::vector<std::string> keys;
  keys.reserve(records.size());
  for (const auto& r : records) {
    keys.push_back(canonical_reaction(r));
    groups[keys.back()].push_back(&r);
  }
  std::map<std::string, std::array<MultiHotTarget, kRoleCount>> group_targets;
  for (const auto& [key, members] : groups) {
    group_targets.emplace(key, build_multihot(std::span<const ReactionRecord* const>(members), vocabs));
  }
  std::vector<std::array<MultiHotTarget, kRoleCount>> out;
  out.reserve(records.size());
  for (const auto& key : keys) out.push_back(group_targets.at(key));
  return out;
}

/// Number of canonical reaction strings shared by two or more records.
inline std::size_t count_duplicate_groups(std::span<const ReactionRecord> records) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[canonical_reaction(r)];
  std::size_t groups = 0;
  for (const auto& [key, n] : counts) groups += n > 1 ? 1 : 0;
  return groups;
}

// ---------------------------------------------------------------------------
// Deterministic selection split

struct SelectionTrainTag {};
struct SelectionValidationTag {};

/// Train-split records carrying a compile-time subset tag. Only
/// deterministic_split can create them.
template <class Tag>
class TaggedRecords {
 public:
  const std::vector<ReactionRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

 private:
  explicit TaggedRecords(std::vector<ReactionRecord> records) : records_(std::move(records)) {}

  std::vector<ReactionRecord> records_;

  template <class T>
  friend struct SelectionSplitBuilder;
};

using SelectionTrain = TaggedRecords<SelectionTrainTag>;
using SelectionValidation = TaggedRecords<SelectionValidationTag>;

struct SelectionSplit {
  SelectionTrain train;
  SelectionValidation validation;
};

inline constexpr std::uint64_t kSplitBuckets = 1'000'000;

/// true when the canonical reaction string hashes into the validation share.
inline bool hashes_to_validation(std::string_view canonical, double validation_fraction) {
  const std::uint64_t bucket = fnv1a64(canonical) % kSplitBuckets;
  return static_cast<double>(bucket) < validation_fraction * static_cast<double>(kSplitBuckets);
}

template <class T = void>
struct SelectionSplitBuilder {
  static SelectionSplit build(std::span<const ReactionRecord> train_records,
                              double validation_fraction) {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw UsageError("validation fraction must lie strictly between 0 and 1");
    }
    std::vector<ReactionRecord> sel_train;
    std::vector<ReactionRecord> sel_val;
    for (const auto& r : train_records) {
      if (r.split != Split::train) {
        throw LeakageError("record '" + r.id + "' from the " + std::string(split_name(r.split)) +
                           " split was passed to the selection split");
      }
      if (hashes_to_validation(canonical_reaction(r), validation_fraction)) {
        sel_val.push_back(r);
      } else {
        sel_train.push_back(r);
      }
    }
    return SelectionSplit{SelectionTrain(std::move(sel_train)),
                          SelectionValidation(std::move(sel_val))};
  }
};

/// Partitions train records by an FNV-1a hash of their canonical reaction
/// string. Any non-train record raises LeakageError.
inline SelectionSplit deterministic_split(std::span<const ReactionRecord> train_records,
                                          double validation_fraction) {
  return SelectionSplitBuilder<>::build(train_records, validation_fraction);
}

}  // namespace condrec
