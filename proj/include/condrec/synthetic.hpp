#pragma once

// Planted synthetic corpora: clustered reactions whose embedding
// neighborhoods, head probabilities and label noise are controlled, plus
// optional planted near-duplicates for the overlap ladder. Everything is
// driven by SplitMix64, so a spec and seed give the same corpus on any
// platform.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "condrec/error.hpp"
#include "condrec/hash.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"

namespace condrec::synth {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t clusters = 40;
  std::size_t train_per_cluster = 20;
  std::size_t validation_per_cluster = 0;
  std::size_t test_per_cluster = 5;
  /// Present labels per role; the absent class comes on top.
  std::array<std::size_t, kRoleCount> labels{8, 10, 12};
  std::size_t dim = 32;
  /// Per-coordinate Gaussian spread of members around their cluster center.
  double cluster_noise = 0.05;
  /// Probability a train (resp. evaluated) record takes a random label
  /// instead of its cluster label.
  double train_label_noise = 0.3;
  double test_label_noise = 0.2;
  /// z_delta = cluster delta center + noise when true, pure noise otherwise.
  bool structured_delta = false;
  double head_accuracy = 0.62;
  Range head_conf_correct{0.45, 0.9};
  Range head_conf_wrong{0.25, 0.55};
  /// Per-role probability that a cluster's label is forced to absent.
  std::array<double, kRoleCount> absent_bias{0.0, 0.0, 0.0};
  /// Adds, for every evaluated record, train records sharing its canonical
  /// reaction, a reactant-product pair, its product, and its publication.
  bool planted_overlaps = false;
};

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }

inline void from_json(const nlohmann::json& j, Range& r) {
  r.lo = j.at(0).get<double>();
  r.hi = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"clusters", s.clusters},
                     {"train_per_cluster", s.train_per_cluster},
                     {"validation_per_cluster", s.validation_per_cluster},
                     {"test_per_cluster", s.test_per_cluster},
                     {"labels", s.labels},
                     {"dim", s.dim},
                     {"cluster_noise", s.cluster_noise},
                     {"train_label_noise", s.train_label_noise},
                     {"test_label_noise", s.test_label_noise},
                     {"structured_delta", s.structured_delta},
                     {"head_accuracy", s.head_accuracy},
                     {"head_conf_correct", s.head_conf_correct},
                     {"head_conf_wrong", s.head_conf_wrong},
                     {"absent_bias", s.absent_bias},
                     {"planted_overlaps", s.planted_overlaps}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("seed", s.seed);
  get("clusters", s.clusters);
  get("train_per_cluster", s.train_per_cluster);
  get("validation_per_cluster", s.validation_per_cluster);
  get("test_per_cluster", s.test_per_cluster);
  get("labels", s.labels);
  get("dim", s.dim);
  get("cluster_noise", s.cluster_noise);
  get("train_label_noise", s.train_label_noise);
  get("test_label_noise", s.test_label_noise);
  get("structured_delta", s.structured_delta);
  get("head_accuracy", s.head_accuracy);
  get("head_conf_correct", s.head_conf_correct);
  get("head_conf_wrong", s.head_conf_wrong);
  get("absent_bias", s.absent_bias);
  get("planted_overlaps", s.planted_overlaps);
}

struct SynthCorpus {
  SynthSpec spec;
  Dataset dataset;
  VocabularySet vocabs;
  EmbeddingBank bank;
  /// Non-train rows only.
  HeadProbabilities heads;
  /// Cluster of every record, aligned with dataset.records.
  std::vector<std::size_t> cluster_of;
};

namespace detail {

struct Transform {
  const char* reactant;
  const char* product;
  const char* partner;
};

inline constexpr std::array<Transform, 8> kTransforms = {{
    {"CCO", "CC=O", "O=[Cr](=O)=O"},
    {"CCBr", "CCO", "O"},
    {"CC(=O)O", "CC(=O)OC", "CO"},
    {"CCN", "CCNC(C)=O", "CC(=O)Cl"},
    {"CC=C", "CCC", "[H][H]"},
    {"CC#N", "CCC(=O)O", "O"},
    {"Cc1ccccc1Br", "Cc1ccccc1C", "C[Mg]Br"},
    {"CC(=O)Cl", "CC(=O)N", "N"},
}};

/// Unique acyclic atom chain spelling `u` in base 4 over C, N, O, S.
inline std::string chain(std::uint64_t u) {
  static constexpr std::array<char, 4> kAtoms = {'C', 'N', 'O', 'S'};
  std::string s;
  do {
    s.push_back(kAtoms[u % 4]);
    u /= 4;
  } while (u > 0);
  return s;
}

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(splitmix64_mix(seed)) {}

  double uniform() { return rng_.uniform(); }
  std::uint64_t below(std::uint64_t n) { return rng_.below(n); }
  bool chance(double p) { return uniform() < p; }
  double in(const Range& r) { return r.lo + (r.hi - r.lo) * uniform(); }

  /// Box-Muller.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Flat Dirichlet via normalized exponentials.
  std::vector<double> dirichlet(std::size_t n) {
    std::vector<double> out(n);
    double total = 0.0;
    for (double& v : out) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      v = -std::log(u);
      total += v;
    }
    for (double& v : out) v /= total;
    return out;
  }

 private:
  SplitMix64 rng_;
};

inline std::vector<double> random_unit(Sampler& s, std::size_t dim) {
  std::vector<double> v(dim);
  double nrm = 0.0;
  for (double& x : v) {
    x = s.gaussian();
    nrm += x * x;
  }
  nrm = std::sqrt(nrm);
  for (double& x : v) x /= nrm;
  return v;
}

inline std::vector<float> around(Sampler& s, const std::vector<double>& center, double noise) {
  std::vector<float> out(center.size());
  for (std::size_t i = 0; i < center.size(); ++i) {
    out[i] = static_cast<float>(center[i] + noise * s.gaussian());
  }
  return out;
}

}  // namespace detail

inline std::string label_name(Role role, std::size_t i) {
  return std::string(role_name(role)) + "_" + std::to_string(i);
}

/// Head probabilities for one role: the peak lands on the gold class with
/// probability `head_accuracy` (confidence from head_conf_correct),
/// otherwise on a random wrong class (confidence from head_conf_wrong); the
/// remaining mass is spread by a flat Dirichlet.
inline std::vector<float> head_row(detail::Sampler& s, const SynthSpec& spec, ClassIndex gold,
                                   std::size_t classes) {
  ClassIndex peak = gold;
  double conf = 0.0;
  if (classes == 1 || s.chance(spec.head_accuracy)) {
    conf = s.in(spec.head_conf_correct);
  } else {
    peak = static_cast<ClassIndex>((gold + 1 + s.below(classes - 1)) % classes);
    conf = s.in(spec.head_conf_wrong);
  }
  std::vector<float> row(classes, 0.0f);
  if (classes == 1) {
    row[0] = 1.0f;
    return row;
  }
  auto rest = s.dirichlet(classes - 1);
  std::vector<double> p(classes);
  std::size_t j = 0;
  for (std::size_t c = 0; c < classes; ++c) p[c] = c == peak ? conf : (1.0 - conf) * rest[j++];
  for (std::size_t c = 0; c < classes; ++c) row[c] = static_cast<float>(p[c]);
  return row;
}

inline SynthCorpus generate(const SynthSpec& spec) {
  if (spec.clusters == 0 || spec.dim == 0) throw UsageError("synthetic corpus needs clusters and dim > 0");
  detail::Sampler s(spec.seed);

  std::array<RoleVocabulary, kRoleCount> vocab_arr;
  for (Role r : kRoles) {
    std::vector<std::string> labels;
    for (std::size_t i = 1; i <= spec.labels[role_slot(r)]; ++i) labels.push_back(label_name(r, i));
    vocab_arr[role_slot(r)] = RoleVocabulary(r, std::move(labels));
  }
  VocabularySet vocabs(std::move(vocab_arr));

  struct Cluster {
    std::vector<double> center;
    std::vector<double> delta_center;
    std::array<ClassIndex, kRoleCount> labels{};
  };
  std::vector<Cluster> clusters(spec.clusters);
  for (auto& c : clusters) {
    c.center = detail::random_unit(s, spec.dim);
    c.delta_center = detail::random_unit(s, spec.dim);
    for (Role r : kRoles) {
      const std::size_t n = spec.labels[role_slot(r)] + 1;
      c.labels[role_slot(r)] =
          s.chance(spec.absent_bias[role_slot(r)]) ? kAbsentClass : static_cast<ClassIndex>(s.below(n));
    }
  }

  SynthCorpus out;
  out.spec = spec;
  std::vector<std::vector<float>> z_rxn;
  std::vector<std::vector<float>> z_delta;
  std::uint64_t serial = 0;

  auto to_record = [&](const std::string& id, std::vector<std::string> reactants, std::vector<std::string> products,
                       const std::array<ClassIndex, kRoleCount>& labels, Split split, std::string publication) {
    ReactionRecord rec;
    rec.id = id;
    rec.reactants = std::move(reactants);
    rec.products = std::move(products);
    for (Role r : kRoles) {
      rec.conditions[role_slot(r)] = vocabs[r].label_of(labels[role_slot(r)]);
    }
    rec.split = split;
    rec.publication_proxy = std::move(publication);
    return rec;
  };

  auto draw_labels = [&](const Cluster& c, double noise) {
    std::array<ClassIndex, kRoleCount> labels = c.labels;
    for (Role r : kRoles) {
      if (s.chance(noise)) labels[role_slot(r)] = static_cast<ClassIndex>(s.below(spec.labels[role_slot(r)] + 1));
    }
    return labels;
  };

  auto add = [&](ReactionRecord rec, std::size_t cluster, std::vector<float> rxn, std::vector<float> delta) {
    out.dataset.records.push_back(std::move(rec));
    out.cluster_of.push_back(cluster);
    z_rxn.push_back(std::move(rxn));
    z_delta.push_back(std::move(delta));
  };

  auto delta_for = [&](const Cluster& c) {
    return spec.structured_delta ? detail::around(s, c.delta_center, spec.cluster_noise)
                                 : detail::around(s, detail::random_unit(s, spec.dim), 0.0);
  };

  struct Plant {
    std::size_t cluster;
    std::vector<std::string> reactants;
    std::vector<std::string> products;
    std::array<ClassIndex, kRoleCount> labels;
    std::string publication;
    std::vector<float> rxn;
  };
  std::vector<Plant> plants;

  const std::array<std::pair<Split, std::size_t>, 3> per_split = {
      std::pair{Split::train, spec.train_per_cluster}, std::pair{Split::validation, spec.validation_per_cluster},
      std::pair{Split::test, spec.test_per_cluster}};

  for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
    const auto& c = clusters[ci];
    const auto& tf = detail::kTransforms[ci % detail::kTransforms.size()];
    for (const auto& [split, count] : per_split) {
      for (std::size_t m = 0; m < count; ++m) {
        const std::uint64_t u = ++serial;
        const std::string body = detail::chain(u + 3);
        std::vector<std::string> reactants = {body + tf.reactant, tf.partner};
        std::vector<std::string> products = {body + tf.product};
        const bool evaluated = split != Split::train;
        auto labels = draw_labels(c, evaluated ? spec.test_label_noise : spec.train_label_noise);
        const std::string id = std::string(split_name(split)).substr(0, 2) + "_" + std::to_string(u);
        const std::string pub = "pub_" + std::to_string(ci) + "_" + std::to_string(u % 7);
        auto rxn = detail::around(s, c.center, spec.cluster_noise);
        if (evaluated && spec.planted_overlaps) plants.push_back({ci, reactants, products, labels, pub, rxn});
        add(to_record(id, std::move(reactants), std::move(products), labels, split, pub), ci, std::move(rxn),
            delta_for(c));
      }
    }
  }

  // Planted overlaps: one train record per rung, each sharing the gold
  // labels and sitting closer to the query than any cluster member.
  for (const auto& p : plants) {
    const auto& c = clusters[p.cluster];
    const double tight = spec.cluster_noise * 0.05;
    auto near = [&](const std::vector<float>& v) {
      std::vector<double> center(v.begin(), v.end());
      return detail::around(s, center, tight);
    };
    const std::uint64_t u = ++serial;
    const std::string base = "pl_" + std::to_string(u);
    // same canonical reaction
    add(to_record(base + "_a", p.reactants, p.products, p.labels, Split::train, "pub_plant_" + std::to_string(u)),
        p.cluster, near(p.rxn), delta_for(c));
    // same reactant-product pair, different overall reaction
    auto pair_reactants = p.reactants;
    pair_reactants.push_back("ClCCl");
    add(to_record(base + "_b", pair_reactants, p.products, p.labels, Split::train, "pub_plant_" + std::to_string(u)),
        p.cluster, near(p.rxn), delta_for(c));
    // same product from a different reactant
    std::vector<std::string> other_reactants = {detail::chain(u + 3) + "CC(=O)OC", "O"};
    add(to_record(base + "_c", other_reactants, p.products, p.labels, Split::train, "pub_plant_" + std::to_string(u)),
        p.cluster, near(p.rxn), delta_for(c));
    // same publication, different molecules
    std::vector<std::string> pub_reactants = {detail::chain(u + 5) + "CCO", "O"};
    std::vector<std::string> pub_products = {detail::chain(u + 5) + "CC=O"};
    add(to_record(base + "_d", pub_reactants, pub_products, p.labels, Split::train, p.publication), p.cluster,
        near(p.rxn), delta_for(c));
  }

  for (const auto& r : out.dataset.records) condrec::detail::count_split(out.dataset.counts, r.split);

  const std::size_t n = out.dataset.records.size();
  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& r : out.dataset.records) ids.push_back(r.id);
  FloatMatrix rxn_m(n, spec.dim);
  FloatMatrix delta_m(n, spec.dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(z_rxn[i].begin(), z_rxn[i].end(), rxn_m.row(i).begin());
    std::copy(z_delta[i].begin(), z_delta[i].end(), delta_m.row(i).begin());
  }
  out.bank = EmbeddingBank(ids, std::move(rxn_m), std::move(delta_m));

  // Head rows for evaluated records only, in dataset order.
  std::vector<std::string> head_ids;
  std::array<std::vector<std::vector<float>>, kRoleCount> head_rows;
  for (const auto& r : out.dataset.records) {
    if (r.split == Split::train) continue;
    head_ids.push_back(r.id);
    const auto gold = remap_record(r, vocabs);
    for (Role role : kRoles) {
      head_rows[role_slot(role)].push_back(
          head_row(s, spec, gold[role_slot(role)], vocabs[role].size_with_absent()));
    }
  }
  for (Role role : kRoles) {
    const std::size_t classes = vocabs[role].size_with_absent();
    FloatMatrix m(head_ids.size(), classes);
    for (std::size_t i = 0; i < head_ids.size(); ++i) {
      std::copy(head_rows[role_slot(role)][i].begin(), head_rows[role_slot(role)][i].end(), m.row(i).begin());
    }
    out.heads.set(role, head_ids, std::move(m));
  }
  out.vocabs = std::move(vocabs);
  return out;
}

}  // namespace condrec::synth
