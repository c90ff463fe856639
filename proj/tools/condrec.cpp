// condrec command-line entry point.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "condrec/commands.hpp"
#include "condrec/error.hpp"
#include "condrec/service.hpp"
#include "condrec/version.hpp"

namespace {

using condrec::cli::Options;

int report_error(condrec::ExitCode code, const std::string& kind, const std::string& message) {
  nlohmann::json line = {{"error", {{"code", static_cast<int>(code)}, {"kind", kind}, {"message", message}}}};
  std::cerr << line.dump() << std::endl;
  return static_cast<int>(code);
}

enum Flag : unsigned {
  kDataset = 1u << 0,
  kVocab = 1u << 1,
  kBank = 1u << 2,
  kIndex = 1u << 3,
  kHeads = 1u << 4,
  kRetrieval = 1u << 5,
  kBootstrap = 1u << 6,
  kRole = 1u << 7,
  kSplit = 1u << 8,
  kDrfp = 1u << 9,
  kOut = 1u << 10,
};

void add_flags(CLI::App* app, Options& o, unsigned which) {
  if (which & kDataset) app->add_option("--dataset", o.dataset, "reaction TSV");
  if (which & kVocab) app->add_option("--vocab", o.vocab, "vocabulary directory (default: <dataset dir>/vocab)");
  if (which & kBank) app->add_option("--bank", o.bank, "embedding bank");
  if (which & kIndex) app->add_option("--index", o.index, "precedent index file");
  if (which & kHeads) app->add_option("--heads", o.heads, "head-probability file");
  if (which & kRetrieval) {
    app->add_option("--key", o.key, "retrieval key: rxn, rxn+delta or drfp")->capture_default_str();
    app->add_option("--k", o.k, "neighbors per query")->capture_default_str();
    app->add_option("--temp", o.temp, "vote temperature or 'uniform'")->capture_default_str();
    app->add_option("--alpha", o.alpha, "head weight in the hybrid")->capture_default_str();
  }
  if (which & kBootstrap) {
    app->add_option("--seed", o.seed, "bootstrap seed")->capture_default_str();
    app->add_option("--resamples", o.resamples, "bootstrap resamples")->capture_default_str();
  }
  if (which & kRole) app->add_option("--role", o.role, "catalyst, solvent or reagent (default: all)");
  if (which & kSplit) app->add_option("--split", o.split, "split evaluated or queried")->capture_default_str();
  if (which & kDrfp) {
    app->add_option("--drfp-bits", o.drfp_bits, "fingerprint length")->capture_default_str();
    app->add_option("--drfp-k", o.drfp_k, "neighbors for the DRFP-style baseline")->capture_default_str();
    app->add_option("--drfp-temp", o.drfp_temp, "vote temperature for the DRFP-style baseline")
        ->capture_default_str();
  }
  if (which & kOut) app->add_option("--out", o.out, "output directory");
  app->add_option("--threads", o.threads, "worker cap")->capture_default_str();
}

int serve(const Options& o, const std::string& bind_host, int port, std::size_t workers) {
  condrec::service::ServiceConfig cfg;
  cfg.host = bind_host;
  cfg.port = port;
  if (o.index.empty()) throw condrec::UsageError("missing required flag --index");
  cfg.index_path = o.index;
  cfg.bank_path = o.bank;
  cfg.heads_path = o.heads;
  cfg.dataset_path = o.dataset;
  cfg.vocab_path = condrec::cli::vocab_dir(o);
  if (cfg.vocab_path.empty()) throw condrec::UsageError("missing required flag --vocab");
  cfg.defaults = condrec::cli::retrieval_config(o);
  cfg.max_k = o.max_k;
  cfg.top = o.top;
  cfg.workers = workers;
  cfg.search_threads = o.threads;
  for (const auto& p : {cfg.index_path, cfg.bank_path, cfg.heads_path, cfg.dataset_path, cfg.vocab_path}) {
    if (!p.empty() && !std::filesystem::exists(p)) {
      throw condrec::DataError("path does not exist: " + p.string(), "missing_file");
    }
  }
  condrec::service::RecommendationService svc(cfg);
  httplib::Server server;
  svc.bind(server);
  svc.load_async();
  std::cerr << "listening on " << cfg.host << ":" << cfg.port << std::endl;
  if (!server.listen(cfg.host, cfg.port)) {
    throw condrec::DataError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port), "bind");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented reaction-condition recommender"};
  app.set_version_flag("--version", std::string(condrec::kVersion));
  app.set_config("--config", "", "TOML-style config file; flags override its values");
  app.require_subcommand(1);

  Options o;
  std::map<std::string, std::function<void()>> runners;

  auto* ingest = app.add_subcommand("ingest", "validate a reaction TSV and write dataset artifacts");
  add_flags(ingest, o, kDataset | kVocab | kBank | kOut);
  runners["ingest"] = [&] { condrec::cli::cmd_ingest(o); };

  auto* build = app.add_subcommand("build-index", "build a train-only precedent index");
  add_flags(build, o, kDataset | kVocab | kBank | kOut | kDrfp);
  build->add_option("--key", o.key, "retrieval key: rxn, rxn+delta or drfp")->capture_default_str();
  runners["build-index"] = [&] { condrec::cli::cmd_build_index(o); };

  auto* rec = app.add_subcommand("recommend", "recommend conditions for reactions");
  add_flags(rec, o, kDataset | kVocab | kBank | kIndex | kHeads | kRetrieval | kSplit | kDrfp | kOut);
  rec->add_option("--query", o.query_ids, "reaction id to query (repeatable; default: every record of --split)");
  rec->add_option("--top", o.top, "ranked labels per role")->capture_default_str();
  runners["recommend"] = [&] { condrec::cli::cmd_recommend(o); };

  auto* eval = app.add_subcommand("evaluate", "score predictors and write an evaluation report");
  add_flags(eval, o, kDataset | kVocab | kBank | kIndex | kHeads | kRetrieval | kBootstrap | kSplit | kDrfp | kOut);
  runners["evaluate"] = [&] { condrec::cli::cmd_evaluate(o); };

  auto* sel = app.add_subcommand("select", "validation-selected retrieval, then one held-out evaluation");
  add_flags(sel, o, kDataset | kVocab | kBank | kHeads | kRetrieval | kBootstrap | kRole | kSplit | kDrfp | kOut);
  sel->add_option("--grid-k", o.grid_k, "comma-separated k values")->capture_default_str();
  sel->add_option("--grid-temp", o.grid_temp, "comma-separated temperatures or 'uniform'")->capture_default_str();
  sel->add_option("--grid-key", o.grid_key, "comma-separated key kinds")->capture_default_str();
  sel->add_option("--validation-fraction", o.validation_fraction, "share of train hashed to validation")
      ->capture_default_str();
  runners["select"] = [&] { condrec::cli::cmd_select(o); };

  auto* audit = app.add_subcommand("audit", "overlap-exclusion ladder and absent/present audit");
  add_flags(audit, o, kDataset | kVocab | kBank | kIndex | kRetrieval | kRole | kSplit | kDrfp | kOut);
  audit->add_option("--exclusion", o.exclusion, "strictest exclusion rung to audit")->capture_default_str();
  audit->add_option("--audit-k", o.audit_k, "neighbors scored per query")->capture_default_str();
  runners["audit"] = [&] { condrec::cli::cmd_audit(o); };

  auto* synth = app.add_subcommand("synth", "write a planted synthetic corpus");
  synth->add_option("--spec", o.spec, "corpus spec (JSON)");
  synth->add_option("--seed", o.seed, "overrides the corpus seed when nonzero");
  synth->add_option("--out", o.out, "output directory");
  runners["synth"] = [&] { condrec::cli::cmd_synth(o); };

  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 4;
  auto* srv = app.add_subcommand("serve", "HTTP JSON recommendation service");
  add_flags(srv, o, kDataset | kVocab | kBank | kIndex | kHeads | kRetrieval);
  srv->add_option("--host", host, "bind address")->capture_default_str();
  srv->add_option("--port", port, "bind port")->capture_default_str();
  srv->add_option("--workers", workers, "request worker threads")->capture_default_str();
  srv->add_option("--max-k", o.max_k, "upper bound on per-request k")->capture_default_str();
  srv->add_option("--top", o.top, "ranked labels per role")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(condrec::ExitCode::usage, "usage", e.what());
  }

  try {
    if (srv->parsed()) return serve(o, host, port, workers);
    for (auto* sub : app.get_subcommands()) {
      runners.at(sub->get_name())();
    }
    return 0;
  } catch (const condrec::Error& e) {
    return report_error(e.code(), e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error(condrec::ExitCode::data, "json", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report_error(condrec::ExitCode::data, "filesystem", e.what());
  } catch (const std::exception& e) {
    return report_error(condrec::ExitCode::invariant, "internal", e.what());
  }
}
