#pragma once

// Test-side utilities: scratch directories, an RNG independent of the
// library's SplitMix64, toy corpora, and brute-force reference
// implementations used as oracles.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "condrec/condrec.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "condrec") {
    static int counter = 0;
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(++counter));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

using Rng = std::mt19937_64;

inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) {
    v = e(rng);
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

inline std::vector<float> random_vector(Rng& rng, std::size_t dim) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (float& x : v) x = g(rng);
  return v;
}

inline condrec::VocabularySet make_vocabs(std::size_t cat, std::size_t sol, std::size_t rea) {
  using condrec::Role;
  auto labels = [](const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
  };
  return condrec::VocabularySet({condrec::RoleVocabulary(Role::catalyst, labels("cat", cat)),
                                 condrec::RoleVocabulary(Role::solvent, labels("sol", sol)),
                                 condrec::RoleVocabulary(Role::reagent, labels("rea", rea))});
}

inline condrec::ReactionRecord record(std::string id, std::vector<std::string> reactants,
                                      std::vector<std::string> products,
                                      std::array<std::optional<std::string>, 3> labels,
                                      condrec::Split split = condrec::Split::train,
                                      std::optional<std::string> pub = std::nullopt) {
  condrec::ReactionRecord r;
  r.id = std::move(id);
  r.reactants = std::move(reactants);
  r.products = std::move(products);
  r.conditions = std::move(labels);
  r.split = split;
  r.publication_proxy = std::move(pub);
  return r;
}

/// Neighbor carrying only a similarity and a label for every role.
inline condrec::Neighbor neighbor(double similarity, condrec::ClassIndex label, std::string id = "n") {
  condrec::Neighbor nb;
  nb.id = std::move(id);
  nb.similarity = similarity;
  nb.labels = {label, label, label};
  return nb;
}

/// Full sort of every row by (similarity desc, id asc) using keys read back
/// from the index and a query normalized here.
inline std::vector<std::pair<std::string, double>> brute_force_topk(const condrec::PrecedentIndex& index,
                                                                    std::span<const float> query, std::size_t k) {
  double sq = 0.0;
  for (float v : query) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  std::vector<std::pair<std::string, double>> all;
  for (std::size_t row = 0; row < index.size(); ++row) {
    auto key = index.key(row);
    double dot = 0.0;
    for (std::size_t j = 0; j < key.size(); ++j) dot += static_cast<double>(key[j]) * (static_cast<double>(query[j]) / norm);
    all.emplace_back(index.ids()[row], dot);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

/// Plain scaled dot-product attention: scores, row softmax with the row
/// maximum subtracted, weighted sum of values, head by head.
inline condrec::kernel::Matrix reference_attention(const condrec::kernel::Matrix& q,
                                                   const condrec::kernel::Matrix& k,
                                                   const condrec::kernel::Matrix& v, std::size_t heads,
                                                   std::size_t head_dim) {
  condrec::kernel::Matrix out(q.rows, heads * head_dim);
  const double scale = std::sqrt(static_cast<double>(head_dim));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    condrec::kernel::Matrix scores(q.rows, k.rows);
    for (std::size_t i = 0; i < q.rows; ++i) {
      for (std::size_t j = 0; j < k.rows; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < head_dim; ++c) dot += q(i, off + c) * k(j, off + c);
        scores(i, j) = dot / scale;
      }
    }
    for (std::size_t i = 0; i < q.rows; ++i) {
      double peak = scores(i, 0);
      for (std::size_t j = 1; j < k.rows; ++j) peak = std::max(peak, scores(i, j));
      double total = 0.0;
      for (std::size_t j = 0; j < k.rows; ++j) {
        scores(i, j) = std::exp(scores(i, j) - peak);
        total += scores(i, j);
      }
      for (std::size_t j = 0; j < k.rows; ++j) scores(i, j) /= total;
      for (std::size_t j = 0; j < k.rows; ++j)
        for (std::size_t c = 0; c < head_dim; ++c) out(i, off + c) += scores(i, j) * v(j, off + c);
    }
  }
  return out;
}

inline condrec::kernel::Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  condrec::kernel::Matrix m(rows, cols);
  for (double& x : m.data) x = g(rng);
  return m;
}

/// Runs the CLI binary with stderr captured to a file; returns the exit code.
struct CliResult {
  int code = -1;
  std::string err;
};

inline CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + CONDREC_CLI_PATH + "\" " + args + " >/dev/null 2>\"" +
                          err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

/// Small synthetic corpus written to disk in the CLI's layout.
inline condrec::synth::SynthCorpus write_corpus(const condrec::synth::SynthSpec& spec, const fs::path& dir) {
  auto corpus = condrec::synth::generate(spec);
  fs::create_directories(dir);
  condrec::save_reactions(corpus.dataset.records, dir / "reactions.tsv");
  corpus.vocabs.save_dir(dir / "vocab");
  condrec::save_embedding_bank(corpus.bank, dir / "bank.bin");
  condrec::save_head_probabilities(corpus.heads, dir / "heads.bin");
  return corpus;
}

}  // namespace testutil
