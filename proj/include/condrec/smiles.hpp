#pragma once

// Tokenizer-level SMILES handling: lexing into atoms, bonds, ring closures
// and branches; atom-map removal; token n-gram shingles; canonical reaction
// strings. No valence, aromaticity or canonical-ordering logic.

#include <algorithm>
#include <cctype>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condrec/error.hpp"

namespace condrec::smiles {

enum class TokenKind {
  atom,
  bracket_atom,
  bond,
  ring_closure,
  branch_open,
  branch_close,
  dot,
};

struct Token {
  TokenKind kind;
  std::string text;
  std::optional<int> atom_map;  // bracket atoms only

  friend bool operator==(const Token&, const Token&) = default;
};

class SmilesError : public ParseError {
 public:
  SmilesError(const std::string& message, std::size_t position)
      : ParseError(message + " at position " + std::to_string(position), npos, position) {}
};

namespace detail {

inline bool is_bond_char(char c) {
  return c == '-' || c == '=' || c == '#' || c == '$' || c == ':' || c == '/' ||
         c == '\\';
}

inline bool is_organic_single(char c) {
  switch (c) {
    case 'B': case 'C': case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
    case 'b': case 'c': case 'n': case 'o': case 'p': case 's': case '*':
      return true;
    default:
      return false;
  }
}

// Parses a trailing ":<digits>" inside a bracket atom body (without brackets).
inline std::optional<int> parse_atom_map(std::string_view body) {
  auto colon = body.rfind(':');
  if (colon == std::string_view::npos || colon + 1 >= body.size()) return std::nullopt;
  int value = 0;
  for (std::size_t i = colon + 1; i < body.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(body[i]))) return std::nullopt;
    value = value * 10 + (body[i] - '0');
  }
  return value;
}

}  // namespace detail

/// Splits a SMILES string (possibly dot-separated) into tokens whose texts
/// concatenate back to the input.
inline std::vector<Token> tokenize(std::string_view smiles) {
  std::vector<Token> tokens;
  std::vector<std::size_t> open_branches;
  std::size_t i = 0;
  const std::size_t n = smiles.size();
  while (i < n) {
    const char c = smiles[i];
    if (static_cast<unsigned char>(c) > 0x7f) {
      throw SmilesError("non-ASCII character", i);
    }
    if (c == '[') {
      auto close = smiles.find(']', i + 1);
      auto nested = smiles.find('[', i + 1);
      if (close == std::string_view::npos || (nested != std::string_view::npos && nested < close)) {
        throw SmilesError("unbalanced bracket", i);
      }
      if (close == i + 1) throw SmilesError("empty bracket atom", i);
      std::string_view text = smiles.substr(i, close - i + 1);
      tokens.push_back({TokenKind::bracket_atom, std::string(text),
                        detail::parse_atom_map(text.substr(1, text.size() - 2))});
      i = close + 1;
    } else if (c == ']') {
      throw SmilesError("unbalanced bracket", i);
    } else if (c == '(') {
      open_branches.push_back(i);
      tokens.push_back({TokenKind::branch_open, "(", std::nullopt});
      ++i;
    } else if (c == ')') {
      if (open_branches.empty()) throw SmilesError("unbalanced parenthesis", i);
      open_branches.pop_back();
      tokens.push_back({TokenKind::branch_close, ")", std::nullopt});
      ++i;
    } else if (c == '.') {
      if (!open_branches.empty()) throw SmilesError("unbalanced parenthesis", open_branches.back());
      tokens.push_back({TokenKind::dot, ".", std::nullopt});
      ++i;
    } else if (detail::is_bond_char(c)) {
      tokens.push_back({TokenKind::bond, std::string(1, c), std::nullopt});
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      tokens.push_back({TokenKind::ring_closure, std::string(1, c), std::nullopt});
      ++i;
    } else if (c == '%') {
      if (i + 2 >= n || !std::isdigit(static_cast<unsigned char>(smiles[i + 1])) ||
          !std::isdigit(static_cast<unsigned char>(smiles[i + 2]))) {
        throw SmilesError("malformed two-digit ring closure", i);
      }
      tokens.push_back({TokenKind::ring_closure, std::string(smiles.substr(i, 3)), std::nullopt});
      i += 3;
    } else if ((c == 'C' && i + 1 < n && smiles[i + 1] == 'l') ||
               (c == 'B' && i + 1 < n && smiles[i + 1] == 'r')) {
      tokens.push_back({TokenKind::atom, std::string(smiles.substr(i, 2)), std::nullopt});
      i += 2;
    } else if (detail::is_organic_single(c)) {
      tokens.push_back({TokenKind::atom, std::string(1, c), std::nullopt});
      ++i;
    } else {
      throw SmilesError(std::string("unexpected character '") + c + "'", i);
    }
  }
  if (!open_branches.empty()) throw SmilesError("unbalanced parenthesis", open_branches.back());
  return tokens;
}

inline std::string concat(std::span<const Token> tokens) {
  std::string out;
  for (const auto& t : tokens) out += t.text;
  return out;
}

/// Removes ":n" atom-map suffixes from bracket atoms; brackets are kept.
inline std::string strip_atom_maps(std::string_view smiles) {
  auto tokens = tokenize(smiles);
  std::string out;
  out.reserve(smiles.size());
  for (const auto& t : tokens) {
    if (t.kind == TokenKind::bracket_atom && t.atom_map) {
      auto colon = t.text.rfind(':');
      out += t.text.substr(0, colon);
      out += ']';
    } else {
      out += t.text;
    }
  }
  return out;
}

/// Contiguous token n-grams (n in [n_min, n_max]), token texts concatenated.
/// Windows never span a dot. Output order: per dot-separated segment, by n,
/// then by start position.
inline std::vector<std::string> shingles(std::span<const Token> tokens, std::size_t n_min,
                                         std::size_t n_max) {
  if (n_min < 1 || n_max < n_min) {
    throw UsageError("shingle window requires 1 <= n_min <= n_max");
  }
  std::vector<std::string> out;
  std::size_t begin = 0;
  auto emit_segment = [&](std::size_t seg_begin, std::size_t seg_end) {
    const std::size_t m = seg_end - seg_begin;
    for (std::size_t len = n_min; len <= n_max && len <= m; ++len) {
      for (std::size_t s = seg_begin; s + len <= seg_end; ++s) {
        std::string gram = tokens[s].text;
        for (std::size_t j = s + 1; j < s + len; ++j) gram += tokens[j].text;
        out.push_back(std::move(gram));
      }
    }
  };
  for (std::size_t i = 0; i <= tokens.size(); ++i) {
    if (i == tokens.size() || tokens[i].kind == TokenKind::dot) {
      emit_segment(begin, i);
      begin = i + 1;
    }
  }
  return out;
}

inline std::string normalize_molecule(std::string_view smiles) { return strip_atom_maps(smiles); }

inline std::vector<std::string> normalized_sorted(std::span<const std::string> molecules) {
  std::vector<std::string> out;
  out.reserve(molecules.size());
  for (const auto& m : molecules) out.push_back(normalize_molecule(m));
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string join_molecules(std::span<const std::string> molecules) {
  std::string out;
  for (std::size_t i = 0; i < molecules.size(); ++i) {
    if (i) out += '.';
    out += molecules[i];
  }
  return out;
}

/// Sorted normalized reactants, ">>", sorted normalized products.
inline std::string canonical_reaction(std::span<const std::string> reactants,
                                      std::span<const std::string> products) {
  auto r = normalized_sorted(reactants);
  auto p = normalized_sorted(products);
  return join_molecules(r) + ">>" + join_molecules(p);
}

}  // namespace condrec::smiles
