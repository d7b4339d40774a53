#include "reid/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include "reid/csv.hpp"
#include "reid/error.hpp"
#include "reid/parallel.hpp"

namespace reid {

using nlohmann::json;

namespace {

constexpr std::size_t kBlockRows = 64;

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

struct Key {
  float distance;
  std::uint32_t id_rank;
  bool operator<(const Key& o) const { return distance != o.distance ? distance < o.distance : id_rank < o.id_rank; }
};

QueryOutcome score_query(std::size_t q, std::span<const float> dist, std::span<const std::uint32_t> id_rank,
                         const IdentityCap& cap) {
  QueryOutcome out;
  const std::size_t n = dist.size();
  const std::uint32_t group = cap.group(q);
  Key best{kExcludedDistance, std::numeric_limits<std::uint32_t>::max()};
  bool has_positive = false;
  for (std::size_t r = 0; r < n; ++r) {
    if (cap.group(r) != group || !cap.eligible(q, r)) continue;
    const Key k{dist[r], id_rank[r]};
    if (!has_positive || k < best) best = k;
    has_positive = true;
  }
  if (!has_positive) {
    out.skipped = true;
    return out;
  }
  std::size_t ahead = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!cap.eligible(q, r)) continue;
    if (Key{dist[r], id_rank[r]} < best) ++ahead;
  }
  out.rank = ahead + 1;
  return out;
}

}  // namespace

void EvalConfig::validate() const {
  if (ranks.empty()) throw Error(Errc::InvalidConfig, "ranks is empty");
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ranks[i] < 1) throw Error(Errc::InvalidConfig, "rank < 1");
    if (i > 0 && ranks[i] <= ranks[i - 1]) throw Error(Errc::InvalidConfig, "ranks not strictly increasing");
  }
  for (std::size_t c : caps) {
    if (c < 1) throw Error(Errc::InvalidConfig, "cap < 1");
  }
}

json EvalConfig::to_json() const {
  json c = json::array();
  for (std::size_t cap : caps) c.push_back(format_cap(cap));
  return {{"ranks", ranks}, {"caps", c}, {"skip_queries_without_positives", skip_queries_without_positives}};
}

EvalConfig EvalConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, "eval config is not an object");
  EvalConfig c;
  try {
    if (j.contains("ranks")) c.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    if (j.contains("caps")) {
      c.caps.clear();
      for (const auto& v : j.at("caps")) {
        c.caps.push_back(v.is_string() ? parse_cap(v.get<std::string>()) : v.get<std::size_t>());
      }
    }
    if (j.contains("skip_queries_without_positives")) {
      c.skip_queries_without_positives = j.at("skip_queries_without_positives").get<bool>();
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

const SpeciesReport* EvalReport::find(std::string_view name) const {
  for (const auto& s : species) {
    if (s.species == name) return &s;
  }
  return nullptr;
}

SpeciesReport one_vs_all(const EmbeddingStore& store, const IdentityMap& identity_of, const EvalConfig& config,
                         const IdentityCap* cap) {
  config.validate();
  if (store.empty()) throw Error(Errc::EmptyStore, store.species());
  std::optional<IdentityCap> uncapped;
  if (!cap) {
    uncapped.emplace(store, identity_of, kNoCap, 0);
    cap = &*uncapped;
  }

  const std::size_t n = store.size();
  std::vector<QueryOutcome> outcomes(n);
  const std::size_t blocks = (n + kBlockRows - 1) / kBlockRows;
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t first = b * kBlockRows;
    const std::size_t rows = std::min(kBlockRows, n - first);
    std::vector<float> dist(rows * n);
    compute_distance_rows(store, first, rows, dist);
    for (std::size_t i = 0; i < rows; ++i) {
      outcomes[first + i] = score_query(first + i, std::span<const float>(dist).subspan(i * n, n), store.id_rank(), *cap);
      outcomes[first + i].query_id = store.ids()[first + i];
    }
  });

  SpeciesReport report;
  report.species = store.species();
  std::vector<std::size_t> hits(config.ranks.size(), 0);
  for (auto& o : outcomes) {
    if (o.skipped && config.skip_queries_without_positives) {
      ++report.n_skipped;
      continue;
    }
    o.skipped = false;
    ++report.n_queries;
    for (std::size_t i = 0; i < config.ranks.size(); ++i) {
      if (o.rank && *o.rank <= config.ranks[i]) ++hits[i];
    }
  }
  if (report.n_queries > 0) {
    for (std::size_t i = 0; i < config.ranks.size(); ++i) {
      report.accuracy[config.ranks[i]] = static_cast<double>(hits[i]) / static_cast<double>(report.n_queries);
    }
  }
  std::sort(outcomes.begin(), outcomes.end(),
            [](const QueryOutcome& a, const QueryOutcome& b) { return a.query_id < b.query_id; });
  report.queries = std::move(outcomes);
  return report;
}

EvalReport aggregate(std::vector<SpeciesReport> species, std::vector<std::size_t> ranks) {
  EvalReport r;
  r.ranks = std::move(ranks);
  std::sort(species.begin(), species.end(),
            [](const SpeciesReport& a, const SpeciesReport& b) { return a.species < b.species; });
  r.species = std::move(species);
  for (std::size_t k : r.ranks) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : r.species) {
      if (s.error || s.n_queries == 0) continue;
      const auto it = s.accuracy.find(k);
      if (it == s.accuracy.end()) continue;
      sum += it->second;
      ++count;
    }
    if (count) r.macro[k] = sum / static_cast<double>(count);
  }
  return r;
}

std::vector<CurvePoint> curve_by_cap(std::span<const SpeciesInput> species, std::span<const std::size_t> caps,
                                     std::uint64_t cap_seed, bool skip_queries_without_positives) {
  if (caps.empty()) throw Error(Errc::InvalidConfig, "caps is empty");
  EvalConfig config;
  config.ranks = {1};
  config.skip_queries_without_positives = skip_queries_without_positives;
  std::vector<CurvePoint> out;
  for (std::size_t m : caps) {
    if (m < 1) throw Error(Errc::InvalidConfig, "cap < 1");
    std::vector<double> top1;
    for (const auto& s : species) {
      const IdentityCap cap(*s.store, *s.identity_of, m, cap_seed);
      const auto rep = one_vs_all(*s.store, *s.identity_of, config, &cap);
      if (rep.n_queries > 0) top1.push_back(rep.accuracy.at(1));
    }
    CurvePoint p;
    p.cap = m;
    p.species_count = top1.size();
    if (!top1.empty()) {
      double sum = 0.0;
      for (double v : top1) sum += v;
      p.mean_top1 = sum / static_cast<double>(top1.size());
      double ss = 0.0;
      for (double v : top1) ss += (v - p.mean_top1) * (v - p.mean_top1);
      p.std_top1 = std::sqrt(ss / static_cast<double>(top1.size()));
    }
    out.push_back(p);
  }
  return out;
}

ReportComparison compare_reports(const EvalReport& a, const EvalReport& b) {
  ReportComparison out;
  for (std::size_t k : a.ranks) {
    if (std::find(b.ranks.begin(), b.ranks.end(), k) != b.ranks.end()) out.ranks.push_back(k);
  }
  std::map<std::size_t, std::vector<double>> per_k;
  for (const auto& sa : a.species) {
    const SpeciesReport* sb = b.find(sa.species);
    if (!sb || sa.error || sb->error || sa.accuracy.empty() || sb->accuracy.empty()) continue;
    SpeciesDelta d;
    d.species = sa.species;
    for (std::size_t k : out.ranks) {
      const auto ia = sa.accuracy.find(k);
      const auto ib = sb->accuracy.find(k);
      if (ia == sa.accuracy.end() || ib == sb->accuracy.end()) continue;
      d.a[k] = ia->second;
      d.b[k] = ib->second;
      d.delta[k] = ia->second - ib->second;
      per_k[k].push_back(d.delta[k]);
    }
    out.species.push_back(std::move(d));
  }
  if (out.species.empty()) throw Error(Errc::DisjointSpecies, "reports share no scored species");
  for (const auto& [k, deltas] : per_k) {
    double sum = 0.0;
    for (double v : deltas) sum += v;
    out.macro_delta[k] = sum / static_cast<double>(deltas.size());
  }
  return out;
}

std::string comparison_table_csv(const std::vector<std::pair<std::string, const EvalReport*>>& columns,
                                 std::size_t k) {
  if (columns.size() < 2) throw Error(Errc::InvalidConfig, "need at least two reports");
  std::vector<ReportComparison> cmp;
  for (std::size_t c = 1; c < columns.size(); ++c) cmp.push_back(compare_reports(*columns[0].second, *columns[c].second));

  std::set<std::string> common;
  for (const auto& d : cmp[0].species) {
    if (d.a.count(k)) common.insert(d.species);
  }
  for (std::size_t c = 1; c < cmp.size(); ++c) {
    std::set<std::string> here;
    for (const auto& d : cmp[c].species) {
      if (d.a.count(k) && common.count(d.species)) here.insert(d.species);
    }
    common = std::move(here);
  }
  if (common.empty()) throw Error(Errc::DisjointSpecies, "no species scored at k=" + std::to_string(k) + " in every report");

  std::string out = "species";
  for (const auto& [name, rep] : columns) out += "," + name;
  for (std::size_t c = 1; c < columns.size(); ++c) out += ",delta_" + columns[c].first;
  out += '\n';

  std::vector<double> sums(columns.size(), 0.0);
  std::vector<double> delta_sums(columns.size(), 0.0);
  for (const auto& species : common) {
    std::string row = csv::escape(species);
    std::vector<double> vals;
    for (const auto& [name, rep] : columns) vals.push_back(rep->find(species)->accuracy.at(k) * 100.0);
    for (std::size_t c = 0; c < vals.size(); ++c) {
      row += "," + fmt(vals[c], 1);
      sums[c] += vals[c];
    }
    for (std::size_t c = 1; c < vals.size(); ++c) {
      row += "," + fmt(vals[0] - vals[c], 1);
      delta_sums[c] += vals[0] - vals[c];
    }
    out += row + '\n';
  }
  const double n = static_cast<double>(common.size());
  std::string macro = "macro";
  for (std::size_t c = 0; c < columns.size(); ++c) macro += "," + fmt(sums[c] / n, 1);
  for (std::size_t c = 1; c < columns.size(); ++c) macro += "," + fmt(delta_sums[c] / n, 1);
  out += macro + '\n';
  return out;
}

std::string format_cap(std::size_t cap) { return cap == kNoCap ? "inf" : std::to_string(cap); }

std::size_t parse_cap(std::string_view token) {
  if (token == "inf" || token == "INF" || token == "Inf") return kNoCap;
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size() || v == 0) {
    throw Error(Errc::InvalidConfig, "cap '" + std::string(token) + "'");
  }
  return v;
}

json report_to_json(const EvalReport& report) {
  json species = json::array();
  for (const auto& s : report.species) {
    json acc = json::object();
    for (const auto& [k, v] : s.accuracy) acc[std::to_string(k)] = v;
    json queries = json::array();
    for (const auto& q : s.queries) {
      queries.push_back({{"query_id", q.query_id},
                         {"rank", q.rank ? json(*q.rank) : json(nullptr)},
                         {"skipped", q.skipped}});
    }
    json entry = {{"species", s.species},     {"accuracy", acc}, {"n_queries", s.n_queries},
                  {"n_skipped", s.n_skipped}, {"queries", queries}};
    if (s.error) entry["error"] = *s.error;
    species.push_back(std::move(entry));
  }
  json macro = json::object();
  for (const auto& [k, v] : report.macro) macro[std::to_string(k)] = v;
  json curves = json::array();
  for (const auto& p : report.curves) {
    curves.push_back({{"cap", format_cap(p.cap)},
                      {"mean_top1", p.mean_top1},
                      {"std_top1", p.std_top1},
                      {"species_count", p.species_count}});
  }
  return {{"provenance", report.provenance}, {"ranks", report.ranks},   {"macro_weighting", "uniform"},
          {"species", species},             {"macro", macro},         {"curves", curves}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.provenance = j.value("provenance", json::object());
    r.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("species")) {
      SpeciesReport s;
      s.species = e.at("species").get<std::string>();
      for (const auto& [k, v] : e.at("accuracy").items()) s.accuracy[parse_cap(k)] = v.get<double>();
      s.n_queries = e.value("n_queries", std::size_t{0});
      s.n_skipped = e.value("n_skipped", std::size_t{0});
      if (e.contains("error")) s.error = e.at("error").get<std::string>();
      if (e.contains("queries")) {
        for (const auto& q : e.at("queries")) {
          QueryOutcome o;
          o.query_id = q.at("query_id").get<std::string>();
          if (!q.at("rank").is_null()) o.rank = q.at("rank").get<std::size_t>();
          o.skipped = q.value("skipped", false);
          s.queries.push_back(std::move(o));
        }
      }
      r.species.push_back(std::move(s));
    }
    if (j.contains("macro")) {
      for (const auto& [k, v] : j.at("macro").items()) r.macro[parse_cap(k)] = v.get<double>();
    }
    if (j.contains("curves")) {
      for (const auto& p : j.at("curves")) {
        CurvePoint c;
        const auto& cap = p.at("cap");
        c.cap = cap.is_string() ? parse_cap(cap.get<std::string>()) : cap.get<std::size_t>();
        c.mean_top1 = p.at("mean_top1").get<double>();
        c.std_top1 = p.at("std_top1").get<double>();
        c.species_count = p.value("species_count", std::size_t{0});
        r.curves.push_back(c);
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("report: ") + e.what());
  } catch (const Error& e) {
    throw Error(Errc::FormatError, std::string("report: ") + e.what());
  }
  return r;
}

std::string summary_csv(const EvalReport& report) {
  std::string out = "species,k,accuracy,n_queries,n_skipped\n";
  std::size_t total_q = 0, total_s = 0;
  for (const auto& s : report.species) {
    total_q += s.n_queries;
    total_s += s.n_skipped;
    for (const auto& [k, v] : s.accuracy) {
      out += csv::escape(s.species) + "," + std::to_string(k) + "," + fmt(v) + "," + std::to_string(s.n_queries) + "," +
             std::to_string(s.n_skipped) + "\n";
    }
  }
  for (const auto& [k, v] : report.macro) {
    out += "*macro*," + std::to_string(k) + "," + fmt(v) + "," + std::to_string(total_q) + "," +
           std::to_string(total_s) + "\n";
  }
  return out;
}

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "cap,mean_top1,std_top1\n";
  for (const auto& p : curve) out += format_cap(p.cap) + "," + fmt(p.mean_top1) + "," + fmt(p.std_top1) + "\n";
  return out;
}

}  // namespace reid
