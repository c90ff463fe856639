#pragma once

// Forward-only representation kernels: atom-map-biased multi-head
// cross-attention, the difference/sum decomposition of pooled role vectors,
// and softmax-gated fusion of six projected reaction streams. Parameters are
// loaded from a named-tensor file; nothing here trains.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condrec/error.hpp"
#include "condrec/tensor_file.hpp"

namespace condrec::kernel {

/// Row-major double matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }

  bool empty() const noexcept { return rows == 0 || cols == 0; }

  Matrix transposed() const {
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// a [n x m] times b [m x p].
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul of " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " by " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

/// Queries attend over keys per head. `atom_map` is the binary product-to-
/// reactant map [n_q x n_k]; an empty matrix means no bias term at all.
/// `beta` holds one value per head, or a single value shared by all heads.
struct AttentionInputs {
  Matrix queries;
  Matrix keys;
  Matrix values;
  Matrix atom_map;
  std::vector<double> beta;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
};

inline void check(const AttentionInputs& in) {
  const std::size_t width = in.heads * in.head_dim;
  if (in.heads == 0 || in.head_dim == 0) throw DimensionError("attention needs heads, head_dim >= 1");
  if (in.queries.cols != width || in.keys.cols != width || in.values.cols != width) {
    throw DimensionError("attention inputs must have heads*head_dim = " + std::to_string(width) +
                         " columns");
  }
  if (in.keys.rows != in.values.rows) throw DimensionError("keys and values differ in row count");
  if (in.keys.rows == 0) throw DimensionError("attention over zero keys");
  if (!in.atom_map.empty()) {
    if (in.atom_map.rows != in.queries.rows || in.atom_map.cols != in.keys.rows) {
      throw DimensionError("atom map must be " + std::to_string(in.queries.rows) + "x" +
                           std::to_string(in.keys.rows));
    }
    for (double m : in.atom_map.data) {
      if (m != 0.0 && m != 1.0) throw DataError("atom map entries must be 0 or 1");
    }
    if (in.beta.size() != 1 && in.beta.size() != in.heads) {
      throw DimensionError("beta must have 1 or heads entries");
    }
  }
}

/// softmax(Q_h K_h^T / sqrt(d_h) + beta_h M) V_h for every head h, with the
/// head outputs laid side by side.
inline Matrix biased_cross_attention(const AttentionInputs& in) {
  check(in);
  const std::size_t nq = in.queries.rows;
  const std::size_t nk = in.keys.rows;
  const std::size_t dh = in.head_dim;
  const bool biased = !in.atom_map.empty();
  const double scale = std::sqrt(static_cast<double>(dh));
  Matrix out(nq, in.heads * dh);
  std::vector<double> scores(nk);
  for (std::size_t h = 0; h < in.heads; ++h) {
    const std::size_t off = h * dh;
    const double beta = biased ? (in.beta.size() == 1 ? in.beta[0] : in.beta[h]) : 0.0;
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < nk; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += in.queries(i, off + c) * in.keys(j, off + c);
        scores[j] = dot / scale;
        if (biased) scores[j] += beta * in.atom_map(i, j);
      }
      const double peak = *std::max_element(scores.begin(), scores.end());
      double total = 0.0;
      for (double& s : scores) {
        s = std::exp(s - peak);
        total += s;
      }
      for (double& s : scores) s /= total;
      for (std::size_t j = 0; j < nk; ++j) {
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += scores[j] * in.values(j, off + c);
      }
    }
  }
  return out;
}

struct RolePooledPair {
  std::vector<double> reactant;
  std::vector<double> product;
};

struct DeltaSigma {
  std::vector<double> delta;  // product - reactant
  std::vector<double> sigma;  // product + reactant
};

inline DeltaSigma delta_sigma(const RolePooledPair& pair) {
  if (pair.reactant.size() != pair.product.size()) {
    throw DimensionError("pooled reactant and product vectors differ in length");
  }
  DeltaSigma out;
  out.delta.resize(pair.product.size());
  out.sigma.resize(pair.product.size());
  for (std::size_t i = 0; i < pair.product.size(); ++i) {
    out.delta[i] = pair.product[i] - pair.reactant[i];
    out.sigma[i] = pair.product[i] + pair.reactant[i];
  }
  return out;
}

enum class Stream : std::size_t {
  rp_context = 0,
  difference,
  sum,
  engineered,
  dft,
  center_difference,
};

inline constexpr std::size_t kStreamCount = 6;

inline constexpr std::array<std::string_view, kStreamCount> kStreamNames = {
    "rp_context", "difference", "sum", "engineered", "dft", "center_difference"};

struct StreamSet {
  std::array<std::vector<double>, kStreamCount> streams;
  std::vector<double> gate;
};

inline constexpr double kGateTolerance = 1e-9;

/// Sum over streams of gate[s] * stream[s].
inline std::vector<double> gated_fusion(const StreamSet& set) {
  if (set.gate.size() != kStreamCount) throw DimensionError("gate must have 6 weights");
  double total = 0.0;
  for (double g : set.gate) {
    if (!(g >= 0.0)) throw InvariantError("gate weights must be non-negative");
    total += g;
  }
  if (std::abs(total - 1.0) > kGateTolerance) {
    throw InvariantError("gate weights sum to " + std::to_string(total) + ", not 1");
  }
  const std::size_t d = set.streams[0].size();
  for (const auto& s : set.streams) {
    if (s.size() != d) throw DimensionError("streams differ in dimension");
  }
  std::vector<double> out(d, 0.0);
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    for (std::size_t i = 0; i < d; ++i) out[i] += set.gate[s] * set.streams[s][i];
  }
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  const double peak = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

/// Linear scorer over atoms, softmax across atoms, weighted mean of rows.
inline std::vector<double> attention_pool(const Matrix& atoms, std::span<const double> weight,
                                          double bias) {
  if (atoms.rows == 0) throw DimensionError("attention pooling over zero atoms");
  if (weight.size() != atoms.cols) throw DimensionError("pooling weight width mismatch");
  std::vector<double> scores(atoms.rows);
  for (std::size_t i = 0; i < atoms.rows; ++i) {
    double s = bias;
    for (std::size_t c = 0; c < atoms.cols; ++c) s += weight[c] * atoms(i, c);
    scores[i] = s;
  }
  auto w = softmax(scores);
  std::vector<double> out(atoms.cols, 0.0);
  for (std::size_t i = 0; i < atoms.rows; ++i)
    for (std::size_t c = 0; c < atoms.cols; ++c) out[c] += w[i] * atoms(i, c);
  return out;
}

/// y = W x + b with W [out x in].
inline std::vector<double> affine(const Matrix& w, std::span<const double> b,
                                  std::span<const double> x) {
  if (w.cols != x.size() || b.size() != w.rows) {
    throw DimensionError("affine map expects input " + std::to_string(w.cols) + ", got " +
                         std::to_string(x.size()));
  }
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) y[i] += w(i, j) * x[j];
  return y;
}

/// Per-reaction inputs to the encoder: atom embeddings for both sides, an
/// optional product-to-reactant atom map, and the descriptor vectors. An
/// empty dft vector stands for a zero vector.
struct ReactionGraphInputs {
  Matrix reactant_atoms;
  Matrix product_atoms;
  Matrix atom_map;
  std::vector<double> engineered;
  std::vector<double> dft;
  std::vector<double> center_difference;
};

struct EncodedReaction {
  std::vector<double> z_rxn;
  std::vector<double> z_delta;
  std::vector<double> gate;
};

/// Weights file magic for ReactionEncoder.
inline constexpr std::string_view kWeightsMagic = "HIRESWTS";

/// Section names:
///   attn.wq, attn.wk, attn.wv  f64 [atom_dim x heads*head_dim]
///   attn.beta                  f64 [heads] or [1]
///   attn.heads                 u32 [1]
///   pool.reactant.w, pool.product.w  f64 [heads*head_dim]
///   pool.reactant.b, pool.product.b  f64 [1]
///   proj.<stream>.w            f64 [d x in_s]; proj.<stream>.b f64 [d]
///   gate.w                     f64 [6 x 6d]; gate.b f64 [6]
class ReactionEncoder {
 public:
  struct Projection {
    Matrix weight;
    std::vector<double> bias;
  };

  Matrix wq, wk, wv;
  std::vector<double> beta;
  std::size_t heads = 1;
  std::vector<double> pool_reactant_w, pool_product_w;
  double pool_reactant_b = 0.0, pool_product_b = 0.0;
  std::array<Projection, kStreamCount> projections;
  Matrix gate_w;
  std::vector<double> gate_b;

  std::size_t width() const noexcept { return wq.cols; }
  std::size_t output_dim() const noexcept { return projections[0].weight.rows; }

  EncodedReaction encode(const ReactionGraphInputs& in) const {
    if (in.reactant_atoms.cols != wq.rows || in.product_atoms.cols != wq.rows) {
      throw DimensionError("atom embedding width does not match attention weights");
    }
    const std::size_t head_dim = width() / heads;
    auto attend = [&](const Matrix& queries_from, const Matrix& keys_from, Matrix map) {
      AttentionInputs a;
      a.queries = matmul(queries_from, wq);
      a.keys = matmul(keys_from, wk);
      a.values = matmul(keys_from, wv);
      a.atom_map = std::move(map);
      a.beta = beta;
      a.heads = heads;
      a.head_dim = head_dim;
      return biased_cross_attention(a);
    };
    Matrix product_ctx = attend(in.product_atoms, in.reactant_atoms, in.atom_map);
    Matrix reactant_ctx = attend(in.reactant_atoms, in.product_atoms,
                                 in.atom_map.empty() ? Matrix{} : in.atom_map.transposed());
    RolePooledPair pooled{attention_pool(reactant_ctx, pool_reactant_w, pool_reactant_b),
                          attention_pool(product_ctx, pool_product_w, pool_product_b)};
    auto ds = delta_sigma(pooled);

    std::vector<double> rp = pooled.reactant;
    rp.insert(rp.end(), pooled.product.begin(), pooled.product.end());
    std::vector<double> dft = in.dft;
    if (dft.empty()) dft.assign(projections[static_cast<std::size_t>(Stream::dft)].weight.cols, 0.0);

    const std::array<const std::vector<double>*, kStreamCount> raw = {
        &rp, &ds.delta, &ds.sigma, &in.engineered, &dft, &in.center_difference};
    StreamSet set;
    std::vector<double> concat;
    for (std::size_t s = 0; s < kStreamCount; ++s) {
      set.streams[s] = affine(projections[s].weight, projections[s].bias, *raw[s]);
      concat.insert(concat.end(), set.streams[s].begin(), set.streams[s].end());
    }
    set.gate = softmax(affine(gate_w, gate_b, concat));
    EncodedReaction out;
    out.z_rxn = gated_fusion(set);
    out.z_delta = std::move(ds.delta);
    out.gate = set.gate;
    return out;
  }

  tensors::TensorFile to_file() const {
    tensors::TensorFile f{std::string(kWeightsMagic)};
    auto put_matrix = [&](const std::string& name, const Matrix& m) {
      f.put_f64(name, {m.rows, m.cols}, m.data);
    };
    auto put_vector = [&](const std::string& name, std::span<const double> v) {
      f.put_f64(name, {v.size()}, v);
    };
    put_matrix("attn.wq", wq);
    put_matrix("attn.wk", wk);
    put_matrix("attn.wv", wv);
    put_vector("attn.beta", beta);
    const std::uint32_t h = static_cast<std::uint32_t>(heads);
    f.put_u32("attn.heads", {1}, std::span<const std::uint32_t>(&h, 1));
    put_vector("pool.reactant.w", pool_reactant_w);
    put_vector("pool.product.w", pool_product_w);
    put_vector("pool.reactant.b", std::span<const double>(&pool_reactant_b, 1));
    put_vector("pool.product.b", std::span<const double>(&pool_product_b, 1));
    for (std::size_t s = 0; s < kStreamCount; ++s) {
      const std::string base = "proj." + std::string(kStreamNames[s]);
      put_matrix(base + ".w", projections[s].weight);
      put_vector(base + ".b", projections[s].bias);
    }
    put_matrix("gate.w", gate_w);
    put_vector("gate.b", gate_b);
    return f;
  }

  static ReactionEncoder from_file(const tensors::TensorFile& f) {
    auto matrix = [&](const std::string& name) {
      const auto& s = f.get(name);
      if (s.shape.size() != 2) throw FormatError("section '" + name + "' must be rank 2");
      Matrix m(s.shape[0], s.shape[1]);
      m.data = f.f64(name);
      return m;
    };
    auto scalar = [&](const std::string& name) {
      auto v = f.f64(name);
      if (v.size() != 1) throw FormatError("section '" + name + "' must hold one value");
      return v[0];
    };
    ReactionEncoder e;
    e.wq = matrix("attn.wq");
    e.wk = matrix("attn.wk");
    e.wv = matrix("attn.wv");
    e.beta = f.f64("attn.beta");
    auto heads = f.u32("attn.heads");
    if (heads.size() != 1 || heads[0] == 0) throw FormatError("attn.heads must hold one positive value");
    e.heads = heads[0];
    e.pool_reactant_w = f.f64("pool.reactant.w");
    e.pool_product_w = f.f64("pool.product.w");
    e.pool_reactant_b = scalar("pool.reactant.b");
    e.pool_product_b = scalar("pool.product.b");
    for (std::size_t s = 0; s < kStreamCount; ++s) {
      const std::string base = "proj." + std::string(kStreamNames[s]);
      e.projections[s].weight = matrix(base + ".w");
      e.projections[s].bias = f.f64(base + ".b");
    }
    e.gate_w = matrix("gate.w");
    e.gate_b = f.f64("gate.b");
    e.validate();
    return e;
  }

  static ReactionEncoder load(const std::filesystem::path& path) {
    return from_file(tensors::TensorFile::load(path, kWeightsMagic));
  }

  void validate() const {
    const std::size_t w = width();
    if (wk.rows != wq.rows || wv.rows != wq.rows || wk.cols != w || wv.cols != w) {
      throw DimensionError("attention projections disagree in shape");
    }
    if (w % heads != 0) throw DimensionError("attention width is not divisible by heads");
    if (beta.size() != 1 && beta.size() != heads) throw DimensionError("beta must have 1 or heads entries");
    if (pool_reactant_w.size() != w || pool_product_w.size() != w) {
      throw DimensionError("pooling weights must match attention width");
    }
    const std::size_t d = output_dim();
    const std::array<std::size_t, kStreamCount> expected_in = {
        2 * w, w, w, projections[3].weight.cols, projections[4].weight.cols,
        projections[5].weight.cols};
    for (std::size_t s = 0; s < kStreamCount; ++s) {
      const auto& p = projections[s];
      if (p.weight.rows != d || p.bias.size() != d || p.weight.cols != expected_in[s]) {
        throw DimensionError("projection for stream " + std::string(kStreamNames[s]) +
                             " has an inconsistent shape");
      }
    }
    if (gate_w.rows != kStreamCount || gate_w.cols != kStreamCount * d || gate_b.size() != kStreamCount) {
      throw DimensionError("gate weights must be 6 x 6d with 6 biases");
    }
  }
};

}  // namespace condrec::kernel
