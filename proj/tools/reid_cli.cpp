// reid: dataset splitting, one-vs-all evaluation and toy training from the
// command line. Exit codes: 0 success, 1 runtime error, 2 validation error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reid/arcface.hpp"
#include "reid/catalog.hpp"
#include "reid/embedding_io.hpp"
#include "reid/error.hpp"
#include "reid/evaluator.hpp"
#include "reid/provenance.hpp"
#include "reid/retrieval.hpp"
#include "reid/rng.hpp"
#include "reid/splitter.hpp"
#include "reid/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

struct CommonInputs {
  std::string manifest;
  std::string policy;
  std::string config;
};

reid::ManifestFormat format_for(const std::string& path) {
  return fs::path(path).extension() == ".jsonl" ? reid::ManifestFormat::Jsonl : reid::ManifestFormat::Csv;
}

reid::Catalog load_catalog(const CommonInputs& in) {
  reid::PolicyTable policies;
  if (!in.policy.empty()) policies = reid::parse_policies(reid::read_file(in.policy));
  return reid::parse_manifest(reid::read_file(in.manifest), format_for(in.manifest), std::move(policies));
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(reid::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw reid::Error(reid::Errc::InvalidConfig, path + " is not a JSON object");
  return j;
}

std::string with_provenance(const std::string& line, const std::string& body) { return line + "\n" + body; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw reid::Error(reid::Errc::IoError, "cannot create " + dir);
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const CommonInputs& in) {
  const auto catalog = load_catalog(in);
  const auto stats = reid::catalog_stats(catalog);
  std::string inputs = reid::read_file(in.manifest);
  if (!in.policy.empty()) inputs += reid::read_file(in.policy);
  std::cout << reid::provenance_line("ingest", reid::hex_digest(inputs), 0) << '\n';
  std::cout << "species,annotations,individuals,mean_per_individual,median_per_individual\n";
  std::size_t total = 0, individuals = 0;
  for (const auto& s : stats) {
    std::cout << s.species << ',' << s.annotation_count << ',' << s.individual_count << ','
              << fmt(s.mean_per_individual) << ',' << fmt(s.median_per_individual, 1) << '\n';
    total += s.annotation_count;
    individuals += s.individual_count;
  }
  std::cerr << stats.size() << " species, " << total << " annotations, " << individuals << " identities\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  CommonInputs in;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

int cmd_split(const SplitArgs& args) {
  const auto catalog = load_catalog(args.in);
  const json cfg = load_config(args.in.config);
  auto split_cfg = reid::SplitConfig::from_json(cfg.value("split", json::object()));
  if (cfg.contains("seed")) split_cfg.seed = cfg.at("seed").get<std::uint64_t>();
  if (args.seed) split_cfg.seed = *args.seed;

  const auto assignment = reid::assign_split(catalog, split_cfg, reid::TooSmallPolicy::Record);
  const auto report = reid::split_report(assignment);
  for (const auto& meta : assignment.species) {
    if (meta.too_small) std::cerr << "warning: SpeciesTooSmall(" << meta.species << ")\n";
    else if (!meta.within_tolerance) std::cerr << "warning: known fraction out of tolerance for " << meta.species << '\n';
  }

  ensure_dir(args.out_dir);
  const auto prov = reid::provenance_line("split", split_cfg.digest(), split_cfg.seed);
  reid::write_file(fs::path(args.out_dir) / "assignment.csv", reid::serialize_assignment(assignment, prov));
  json doc = {{"provenance",
               {{"tool", "reid"}, {"version", reid::kToolVersion}, {"command", "split"},
                {"config_digest", split_cfg.digest()}, {"seed", split_cfg.seed}}},
              {"config", split_cfg.to_json()},
              {"species", reid::split_report_json(report)}};
  std::vector<std::string> too_small;
  for (const auto& r : report) {
    if (r.too_small) too_small.push_back(r.species);
  }
  doc["too_small_species"] = too_small;
  reid::write_file(fs::path(args.out_dir) / "split_report.json", doc.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonInputs in;
  std::string assignment;
  std::vector<std::string> embeddings;
  std::string ranks;
  std::string caps;
  std::uint64_t cap_seed = 0;
  bool allow_missing = false;
  bool no_skip = false;
  std::string out_dir = ".";
};

std::vector<std::size_t> parse_list(const std::string& text, bool caps) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(reid::parse_cap(tok));
    if (!caps && out.back() == reid::kNoCap) throw reid::Error(reid::Errc::InvalidConfig, "rank 'inf'");
  }
  return out;
}

struct SpeciesData {
  std::string species;
  std::optional<reid::EmbeddingStore> store;
  reid::IdentityMap identity_of;
  std::optional<std::string> error;
};

struct EvalInputs {
  reid::EvalConfig config;
  std::vector<SpeciesData> species;
  std::string digest;
};

EvalInputs prepare_eval(const EvalArgs& args) {
  const auto catalog = load_catalog(args.in);
  const auto assignment = reid::parse_assignment(reid::read_file(args.assignment), catalog);
  const json cfg = load_config(args.in.config);
  EvalInputs out;
  out.config = reid::EvalConfig::from_json(cfg.value("eval", json::object()));
  if (!args.ranks.empty()) out.config.ranks = parse_list(args.ranks, false);
  if (!args.caps.empty()) out.config.caps = parse_list(args.caps, true);
  if (args.no_skip) out.config.skip_queries_without_positives = false;
  out.config.validate();

  // id -> (file, row)
  std::vector<reid::EmbeddingFile> files;
  std::map<std::string, std::pair<std::size_t, std::size_t>> where;
  for (const auto& path : args.embeddings) {
    files.push_back(reid::load_embeddings(path));
    const auto& f = files.back();
    for (std::size_t r = 0; r < f.ids.size(); ++r) {
      if (!where.emplace(f.ids[r], std::pair(files.size() - 1, r)).second) {
        throw reid::Error(reid::Errc::DuplicateId, f.ids[r]);
      }
    }
  }

  std::map<std::string, std::vector<std::string>> test_ids;
  for (const auto& e : assignment.entries) {
    if (e.label == reid::SplitLabel::Test) test_ids[e.species].push_back(e.annotation_id);
  }
  std::vector<std::string> missing;
  for (auto& [species, ids] : test_ids) {
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
      if (!where.count(id)) missing.push_back(id);
    }
  }
  if (!missing.empty()) {
    for (const auto& id : missing) std::cerr << "missing embedding: " << id << '\n';
    if (!args.allow_missing) {
      throw reid::Error(reid::Errc::MissingEmbedding, missing.front() + " and " + std::to_string(missing.size() - 1) + " more");
    }
  }

  for (auto& [species, ids] : test_ids) {
    SpeciesData sd;
    sd.species = species;
    std::vector<std::string> kept;
    std::vector<float> raw;
    std::optional<std::size_t> dim;
    try {
      for (const auto& id : ids) {
        const auto it = where.find(id);
        if (it == where.end()) continue;
        const auto& f = files[it->second.first];
        if (dim && *dim != f.dim) throw reid::Error(reid::Errc::DimensionMismatch, id);
        dim = f.dim;
        const auto row = f.row(it->second.second);
        raw.insert(raw.end(), row.begin(), row.end());
        kept.push_back(id);
        sd.identity_of[id] = catalog.identity_of(*catalog.find(id));
      }
      if (kept.empty()) throw reid::Error(reid::Errc::EmptyStore, species);
      sd.store = reid::build_store(species, std::move(kept), raw, *dim);
    } catch (const reid::Error& e) {
      sd.error = e.what();
    }
    out.species.push_back(std::move(sd));
  }
  json digest_src = out.config.to_json();
  digest_src["cap_seed"] = args.cap_seed;
  out.digest = reid::hex_digest(digest_src.dump());
  return out;
}

std::vector<reid::CurvePoint> run_curve(const EvalInputs& inputs, const std::vector<std::size_t>& caps,
                                        std::uint64_t cap_seed) {
  std::vector<reid::SpeciesInput> species;
  for (const auto& sd : inputs.species) {
    if (sd.store) species.push_back({&*sd.store, &sd.identity_of});
  }
  return reid::curve_by_cap(species, caps, cap_seed, inputs.config.skip_queries_without_positives);
}

int cmd_eval(const EvalArgs& args) {
  const auto inputs = prepare_eval(args);
  std::vector<reid::SpeciesReport> reports;
  bool failed = false;
  for (const auto& sd : inputs.species) {
    reid::SpeciesReport rep;
    rep.species = sd.species;
    if (sd.error) {
      rep.error = sd.error;
    } else {
      try {
        rep = reid::one_vs_all(*sd.store, sd.identity_of, inputs.config);
      } catch (const reid::Error& e) {
        rep.error = e.what();
      }
    }
    if (rep.error) {
      failed = true;
      std::cerr << "error: species " << sd.species << ": " << *rep.error << '\n';
    }
    reports.push_back(std::move(rep));
  }
  auto report = reid::aggregate(std::move(reports), inputs.config.ranks);
  if (!inputs.config.caps.empty()) report.curves = run_curve(inputs, inputs.config.caps, args.cap_seed);
  report.provenance = {{"tool", "reid"},           {"version", reid::kToolVersion}, {"command", "eval"},
                       {"config_digest", inputs.digest}, {"cap_seed", args.cap_seed},
                       {"config", inputs.config.to_json()}};

  ensure_dir(args.out_dir);
  const auto prov = reid::provenance_line("eval", inputs.digest, args.cap_seed);
  reid::write_file(fs::path(args.out_dir) / "report.json", reid::report_to_json(report).dump(2) + "\n");
  reid::write_file(fs::path(args.out_dir) / "summary.csv", with_provenance(prov, reid::summary_csv(report)));
  if (!report.curves.empty()) {
    reid::write_file(fs::path(args.out_dir) / "curve.csv", with_provenance(prov, reid::curve_csv(report.curves)));
  }
  for (const auto& [k, v] : report.macro) std::cout << "macro top-" << k << ": " << fmt(v) << '\n';
  return failed ? kExitRuntime : 0;
}

int cmd_curve(const EvalArgs& args) {
  const auto inputs = prepare_eval(args);
  if (inputs.config.caps.empty()) throw reid::Error(reid::Errc::InvalidConfig, "--caps is required");
  bool failed = false;
  for (const auto& sd : inputs.species) {
    if (sd.error) {
      failed = true;
      std::cerr << "error: species " << sd.species << ": " << *sd.error << '\n';
    }
  }
  const auto curve = run_curve(inputs, inputs.config.caps, args.cap_seed);
  ensure_dir(args.out_dir);
  const auto prov = reid::provenance_line("curve", inputs.digest, args.cap_seed);
  reid::write_file(fs::path(args.out_dir) / "curve.csv", with_provenance(prov, reid::curve_csv(curve)));
  std::cout << reid::curve_csv(curve);
  return failed ? kExitRuntime : 0;
}

// ---------------------------------------------------------------------------

struct ToyArgs {
  std::size_t epochs = 40;
  std::uint64_t seed = 0;
  std::size_t dim = 32;
  std::size_t classes = 8;
  std::size_t subcenters = 3;
  double scale = 51.5;
  double m_min = 0.05;
  double m_max = 0.5;
  double exponent = 0.25;
  std::size_t species = 1;
  std::size_t per_class = 30;
  std::size_t holdout = 10;
  std::size_t input_dim = 16;
  double separation = 3.0;
  double noise = 1.0;
  std::vector<std::size_t> train_species;  // empty: all
  reid::arcface::LrSchedule schedule;
  std::string out_dir = ".";
};

int cmd_train_toy(const ToyArgs& a) {
  if (a.holdout < 2 || a.holdout >= a.per_class) {
    throw reid::Error(reid::Errc::InvalidConfig, "--holdout must be in [2, per-class)");
  }
  std::vector<bool> trains(a.species, a.train_species.empty());
  for (std::size_t s : a.train_species) {
    if (s >= a.species) throw reid::Error(reid::Errc::InvalidConfig, "--train-species " + std::to_string(s));
    trains[s] = true;
  }
  // Each species draws its clusters from its own substream, so toy0 is the
  // same data whether it is trained alone or with other species.
  // `all` keeps every sample with its global label s * classes + c; `fit`
  // holds the training samples of the training species, relabeled densely.
  reid::toy::Dataset train_all, held_all, fit;
  std::size_t fit_species = 0;
  for (std::size_t s = 0; s < a.species; ++s) {
    reid::toy::ClusterSpec spec;
    spec.counts.assign(a.classes, a.per_class);
    spec.dim = a.input_dim;
    spec.separation = a.separation;
    spec.noise = a.noise;
    const auto data = reid::toy::make_clusters(spec, reid::substream_seed(a.seed, "species/" + std::to_string(s)));
    auto [train, held] = reid::toy::hold_out(data, a.holdout);
    for (auto [src, dst] : {std::pair(&train, &train_all), std::pair(&held, &held_all)}) {
      dst->input_dim = a.input_dim;
      dst->features.insert(dst->features.end(), src->features.begin(), src->features.end());
      for (std::size_t l : src->labels) dst->labels.push_back(s * a.classes + l);
    }
    if (trains[s]) {
      fit.input_dim = a.input_dim;
      fit.features.insert(fit.features.end(), train.features.begin(), train.features.end());
      for (std::size_t l : train.labels) fit.labels.push_back(fit_species * a.classes + l);
      ++fit_species;
    }
  }
  train_all.classes = held_all.classes = a.species * a.classes;
  fit.classes = fit_species * a.classes;

  reid::toy::Config cfg;
  cfg.embed_dim = a.dim;
  cfg.subcenters = a.subcenters;
  cfg.scale = a.scale;
  cfg.margins = {a.m_min, a.m_max, a.exponent};
  cfg.schedule = a.schedule;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  const auto result = reid::toy::train(fit, cfg);

  ensure_dir(a.out_dir);
  json cfg_json = {{"epochs", a.epochs},         {"seed", a.seed},       {"dim", a.dim},
                   {"classes", a.classes},       {"subcenters", a.subcenters}, {"scale", a.scale},
                   {"m_min", a.m_min},           {"m_max", a.m_max},     {"exponent", a.exponent},
                   {"species", a.species},       {"per_class", a.per_class}, {"holdout", a.holdout},
                   {"input_dim", a.input_dim},   {"separation", a.separation}, {"noise", a.noise},
                   {"warmup", a.schedule.warmup_epochs}, {"lr_start", a.schedule.lr_start},
                   {"lr_peak", a.schedule.lr_peak}, {"decay", a.schedule.decay},
                   {"train_species", a.train_species}};
  const auto digest = reid::hex_digest(cfg_json.dump());
  const auto prov = reid::provenance_line("train-toy", digest, a.seed);

  std::string trace = "epoch,lr,loss\n";
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e, result.lr_trace[e], result.loss_trace[e]);
    trace += buf;
  }
  reid::write_file(fs::path(a.out_dir) / "loss_trace.csv", with_provenance(prov, trace));

  // Manifest, assignment and embeddings for every sample: training samples
  // labeled train, held-out samples test.
  std::vector<reid::Annotation> annotations;
  reid::SplitAssignment assignment;
  reid::EmbeddingFile emb;
  emb.dim = a.dim;
  auto add = [&](const reid::toy::Dataset& data, std::size_t i, const std::string& id, bool test) {
    const std::size_t label = data.labels[i];
    const std::size_t s = label / a.classes;
    reid::Annotation ann;
    ann.annotation_id = id;
    ann.species = "toy" + std::to_string(s);
    ann.individual_id = "c" + std::to_string(label % a.classes);
    ann.encounter_id = "e_" + id;
    annotations.push_back(ann);
    reid::AnnotationSplit e;
    e.annotation_id = id;
    e.species = ann.species;
    e.label = test ? reid::SplitLabel::Test : reid::SplitLabel::Train;
    e.disposition = reid::Disposition::Known;
    assignment.entries.push_back(e);
    const auto v = result.model.embed(data.sample(i));
    emb.ids.push_back(id);
    for (double x : v) emb.values.push_back(static_cast<float>(x));
  };
  std::vector<std::size_t> train_seen(a.species, 0), held_seen(a.species, 0);
  for (std::size_t i = 0; i < train_all.size(); ++i) {
    const std::size_t s = train_all.labels[i] / a.classes;
    add(train_all, i, "toy" + std::to_string(s) + "_tr" + std::to_string(train_seen[s]++), false);
  }
  for (std::size_t i = 0; i < held_all.size(); ++i) {
    const std::size_t s = held_all.labels[i] / a.classes;
    add(held_all, i, "toy" + std::to_string(s) + "_ho" + std::to_string(held_seen[s]++), true);
  }

  reid::PolicyTable policies;
  for (std::size_t s = 0; s < a.species; ++s) {
    reid::SpeciesPolicy p;
    p.species = "toy" + std::to_string(s);
    p.viewpoint_splits_identity = false;
    policies.emplace(p.species, p);
  }
  const reid::Catalog catalog(std::move(annotations), policies);
  reid::write_file(fs::path(a.out_dir) / "manifest.csv", reid::serialize_manifest(catalog));
  reid::write_file(fs::path(a.out_dir) / "policy.json", reid::serialize_policies(policies));
  reid::write_file(fs::path(a.out_dir) / "assignment.csv", reid::serialize_assignment(assignment, prov));
  reid::save_embeddings(fs::path(a.out_dir) / "embeddings.mreid", emb);

  std::cout << "final loss " << fmt(result.loss_trace.back()) << " after " << a.epochs << " epochs\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> reports;
  std::string names;
  std::size_t k = 1;
  std::string out;
};

int cmd_report(const ReportArgs& args) {
  if (args.reports.size() < 2) throw reid::Error(reid::Errc::InvalidConfig, "need at least two reports");
  std::vector<std::string> names;
  std::stringstream ss(args.names);
  std::string tok;
  while (std::getline(ss, tok, ',')) names.push_back(tok);
  if (!names.empty() && names.size() != args.reports.size()) {
    throw reid::Error(reid::Errc::InvalidConfig, "--names count differs from report count");
  }
  std::vector<reid::EvalReport> reports;
  std::string digest_src = "k=" + std::to_string(args.k) + ";names=" + args.names;
  for (const auto& path : args.reports) {
    const auto text = reid::read_file(path);
    digest_src += text;
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw reid::Error(reid::Errc::FormatError, path + " is not JSON");
    reports.push_back(reid::report_from_json(j));
  }
  std::vector<std::pair<std::string, const reid::EvalReport*>> columns;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    columns.emplace_back(names.empty() ? fs::path(args.reports[i]).stem().string() : names[i], &reports[i]);
  }
  const auto table =
      with_provenance(reid::provenance_line("report", reid::hex_digest(digest_src), 0), reid::comparison_table_csv(columns, args.k));
  if (args.out.empty()) {
    std::cout << table;
  } else {
    reid::write_file(args.out, table);
  }
  return 0;
}

void add_common(CLI::App* cmd, CommonInputs& in, bool need_config = true) {
  cmd->add_option("--manifest", in.manifest, "Annotation manifest (.csv or .jsonl)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--policy", in.policy, "Species policy JSON")->check(CLI::ExistingFile);
  if (need_config) cmd->add_option("--config", in.config, "Run config JSON")->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Re-identification split, retrieval and evaluation engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(reid::kToolVersion));

  CommonInputs ingest_in;
  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and print per-species statistics");
  add_common(ingest, ingest_in, false);

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "Assign annotations to train/test");
  add_common(split, split_args.in);
  split->add_option("--seed", split_args.seed, "Overrides the config seed");
  split->add_option("--out-dir", split_args.out_dir);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "One-vs-all top-k evaluation");
  EvalArgs curve_args;
  auto* curve = app.add_subcommand("curve", "Top-1 as a function of the per-identity database cap");
  for (auto [cmd, args] : {std::pair(eval, &eval_args), std::pair(curve, &curve_args)}) {
    add_common(cmd, args->in);
    cmd->add_option("--assignment", args->assignment, "Split assignment CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--embeddings", args->embeddings, "Embedding files (MREID1 or JSONL)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--ranks", args->ranks, "Comma-separated k values");
    cmd->add_option("--caps", args->caps, "Comma-separated caps, 'inf' for uncapped");
    cmd->add_option("--cap-seed", args->cap_seed);
    cmd->add_flag("--allow-missing", args->allow_missing, "Skip test annotations without embeddings");
    cmd->add_flag("--no-skip", args->no_skip, "Score queries without positives as misses");
    cmd->add_option("--out-dir", args->out_dir);
  }

  ToyArgs toy_args;
  auto* toy = app.add_subcommand("train-toy", "Train the linear embedder + sub-center ArcFace head on synthetic clusters");
  toy->add_option("--epochs", toy_args.epochs);
  toy->add_option("--seed", toy_args.seed);
  toy->add_option("--dim", toy_args.dim, "Embedding dimension D");
  toy->add_option("--classes", toy_args.classes, "Classes C per species");
  toy->add_option("--subcenters", toy_args.subcenters, "Subcenters K");
  toy->add_option("--scale", toy_args.scale, "Logit scale s");
  toy->add_option("--m-min", toy_args.m_min);
  toy->add_option("--m-max", toy_args.m_max);
  toy->add_option("--exponent", toy_args.exponent, "Dynamic margin exponent");
  toy->add_option("--species", toy_args.species, "Number of synthetic species");
  toy->add_option("--per-class", toy_args.per_class);
  toy->add_option("--holdout", toy_args.holdout, "Held-out samples per class");
  toy->add_option("--input-dim", toy_args.input_dim);
  toy->add_option("--separation", toy_args.separation);
  toy->add_option("--noise", toy_args.noise);
  toy->add_option("--train-species", toy_args.train_species, "Species whose training samples are used (default all)")
      ->delimiter(',');
  toy->add_option("--warmup", toy_args.schedule.warmup_epochs);
  toy->add_option("--lr-start", toy_args.schedule.lr_start);
  toy->add_option("--lr-peak", toy_args.schedule.lr_peak);
  toy->add_option("--decay", toy_args.schedule.decay);
  toy->add_option("--out-dir", toy_args.out_dir);

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Compare evaluation reports side by side");
  report->add_option("reports", report_args.reports, "report.json files")->required()->check(CLI::ExistingFile);
  report->add_option("--names", report_args.names, "Comma-separated column names");
  report->add_option("--k", report_args.k);
  report->add_option("--out", report_args.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_in);
    if (*split) return cmd_split(split_args);
    if (*eval) return cmd_eval(eval_args);
    if (*curve) return cmd_curve(curve_args);
    if (*toy) return cmd_train_toy(toy_args);
    if (*report) return cmd_report(report_args);
  } catch (const reid::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return reid::is_validation_error(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
