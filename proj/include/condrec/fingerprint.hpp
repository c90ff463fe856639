#pragma once

// DRFP-style differential reaction fingerprints built from token shingles:
// the symmetric difference of the reactant-side and product-side shingle
// sets, each shingle hashed with FNV-1a 64 and folded mod nbits.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <iterator>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "condrec/binary_io.hpp"
#include "condrec/error.hpp"
#include "condrec/hash.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"
#include "condrec/smiles.hpp"

namespace condrec {

class ReactionFingerprint {
 public:
  ReactionFingerprint() = default;

  explicit ReactionFingerprint(std::size_t nbits) : nbits_(nbits), words_((nbits + 63) / 64, 0) {
    if (nbits == 0 || !std::has_single_bit(nbits)) {
      throw UsageError("fingerprint length must be a power of two, got " + std::to_string(nbits));
    }
  }

  std::size_t nbits() const noexcept { return nbits_; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  void set(std::size_t bit) { words_.at(bit / 64) |= std::uint64_t{1} << (bit % 64); }
  bool test(std::size_t bit) const { return (words_.at(bit / 64) >> (bit % 64)) & 1u; }

  std::size_t popcount() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  std::vector<std::uint32_t> active_bits() const {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < nbits_; ++i) {
      if (test(i)) out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
  }

  /// LSB-first packing matching the bank container's bit-packed payload.
  std::vector<std::uint8_t> packed() const {
    std::vector<std::uint8_t> out((nbits_ + 7) / 8, 0);
    for (std::size_t i = 0; i < nbits_; ++i) {
      if (test(i)) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    return out;
  }

  static ReactionFingerprint from_packed(std::size_t nbits, std::span<const std::uint8_t> bytes) {
    ReactionFingerprint fp(nbits);
    if (bytes.size() != (nbits + 7) / 8) throw DimensionError("packed fingerprint size mismatch");
    for (std::size_t i = 0; i < nbits; ++i) {
      if ((bytes[i / 8] >> (i % 8)) & 1u) fp.set(i);
    }
    return fp;
  }

  friend bool operator==(const ReactionFingerprint&, const ReactionFingerprint&) = default;

 private:
  std::size_t nbits_ = 0;
  std::vector<std::uint64_t> words_;
};

struct DrfpParams {
  std::size_t nbits = 2048;
  std::size_t n_min = 1;
  std::size_t n_max = 3;
};

inline std::set<std::string> shingle_set(std::span<const std::string> molecules,
                                         const DrfpParams& params) {
  std::set<std::string> out;
  for (const auto& mol : molecules) {
    auto tokens = smiles::tokenize(smiles::strip_atom_maps(mol));
    for (auto& s : smiles::shingles(tokens, params.n_min, params.n_max)) out.insert(std::move(s));
  }
  return out;
}

/// Shingles present on exactly one side of the reaction.
inline std::vector<std::string> differential_shingles(std::span<const std::string> reactants,
                                                      std::span<const std::string> products,
                                                      const DrfpParams& params) {
  auto lhs = shingle_set(reactants, params);
  auto rhs = shingle_set(products, params);
  std::vector<std::string> diff;
  std::set_symmetric_difference(lhs.begin(), lhs.end(), rhs.begin(), rhs.end(),
                                std::back_inserter(diff));
  return diff;
}

inline ReactionFingerprint drfp_style(std::span<const std::string> reactants,
                                      std::span<const std::string> products,
                                      const DrfpParams& params = {}) {
  ReactionFingerprint fp(params.nbits);
  for (const auto& s : differential_shingles(reactants, products, params)) {
    fp.set(static_cast<std::size_t>(fnv1a64(s) % params.nbits));
  }
  return fp;
}

inline ReactionFingerprint drfp_style(const ReactionRecord& reaction, const DrfpParams& params = {}) {
  try {
    return drfp_style(reaction.reactants, reaction.products, params);
  } catch (const ParseError& e) {
    throw DataError("reaction '" + reaction.id + "': " + e.what(), "parse");
  }
}

/// |a AND b| / |a OR b|, and 1 when both are empty.
inline double tanimoto(const ReactionFingerprint& a, const ReactionFingerprint& b) {
  if (a.nbits() != b.nbits()) {
    throw DimensionError("tanimoto on fingerprints of length " + std::to_string(a.nbits()) +
                         " and " + std::to_string(b.nbits()));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(a.words()[i] & b.words()[i]));
    uni += static_cast<std::size_t>(std::popcount(a.words()[i] | b.words()[i]));
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Template proxy: FNV-1a 64 over the active bit positions as u32 LE.
inline std::uint64_t template_key(const ReactionFingerprint& fp) {
  io::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(fp.nbits()));
  for (auto bit : fp.active_bits()) w.u32(bit);
  return fnv1a64(std::span<const std::uint8_t>(w.buffer()));
}

struct FingerprintBank {
  std::size_t nbits = 2048;
  std::vector<std::string> ids;
  std::vector<ReactionFingerprint> fingerprints;
};

inline void save_fingerprint_bank(const FingerprintBank& b, const std::filesystem::path& path) {
  bank::Container c;
  c.n = static_cast<std::uint32_t>(b.ids.size());
  c.d = static_cast<std::uint32_t>(b.nbits);
  c.flags = bank::kFlagBitPacked;
  for (const auto& fp : b.fingerprints) {
    if (fp.nbits() != b.nbits) throw DimensionError("fingerprint bank mixes lengths");
    auto row = fp.packed();
    c.bits.insert(c.bits.end(), row.begin(), row.end());
  }
  c.ids = b.ids;
  io::write_file_atomic(path, bank::encode_sealed(c));
}

inline FingerprintBank load_fingerprint_bank(const std::filesystem::path& path) {
  auto data = io::read_file(path);
  io::ByteReader r(data, path.string());
  auto c = bank::decode(r);
  if (!(c.flags & bank::kFlagBitPacked)) {
    throw FormatError(path.string() + " is not a bit-packed fingerprint bank");
  }
  FingerprintBank out;
  out.nbits = c.d;
  out.ids = std::move(c.ids);
  const std::size_t row_bytes = c.packed_row_bytes();
  for (std::size_t i = 0; i < c.n; ++i) {
    out.fingerprints.push_back(ReactionFingerprint::from_packed(
        c.d, std::span<const std::uint8_t>(c.bits).subspan(i * row_bytes, row_bytes)));
  }
  return out;
}

}  // namespace condrec
