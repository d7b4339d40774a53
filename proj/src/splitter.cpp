#include "reid/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "reid/csv.hpp"
#include "reid/error.hpp"
#include "reid/provenance.hpp"
#include "reid/rng.hpp"

namespace reid {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void SplitConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (!(target_known_fraction >= 0.0 && target_known_fraction <= 1.0)) bad("target_known_fraction outside [0,1]");
  if (!(reserve_fraction > 0.0 && reserve_fraction < 1.0)) bad("reserve_fraction outside (0,1)");
  if (min_test_annots < 2) bad("min_test_annots < 2");
  if (max_test_annots < min_test_annots) bad("max_test_annots < min_test_annots");
  if (!(rebalance_tolerance >= 0.0)) bad("rebalance_tolerance < 0");
  if (train_fraction_curve.empty()) bad("train_fraction_curve is empty");
  if (train_fraction_curve.front().min_annotations != 0) bad("train_fraction_curve must start at 0");
  for (std::size_t i = 0; i < train_fraction_curve.size(); ++i) {
    const auto& step = train_fraction_curve[i];
    if (!(step.probability >= 0.0 && step.probability <= 1.0)) bad("train_fraction_curve probability outside [0,1]");
    if (i > 0 && step.min_annotations <= train_fraction_curve[i - 1].min_annotations) {
      bad("train_fraction_curve thresholds not increasing");
    }
  }
}

double SplitConfig::train_probability(std::size_t species_annotations) const {
  double p = train_fraction_curve.front().probability;
  for (const auto& step : train_fraction_curve) {
    if (species_annotations >= step.min_annotations) p = step.probability;
  }
  return p;
}

json SplitConfig::to_json() const {
  json curve = json::array();
  for (const auto& s : train_fraction_curve) curve.push_back({s.min_annotations, s.probability});
  return {{"seed", seed},
          {"target_known_fraction", target_known_fraction},
          {"train_fraction_curve", curve},
          {"reserve_fraction", reserve_fraction},
          {"min_train_annots", min_train_annots},
          {"min_test_annots", min_test_annots},
          {"max_test_annots", max_test_annots},
          {"one_per_encounter", one_per_encounter},
          {"rebalance_tolerance", rebalance_tolerance}};
}

SplitConfig SplitConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, "split config is not an object");
  SplitConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("target_known_fraction")) c.target_known_fraction = j.at("target_known_fraction").get<double>();
    if (j.contains("train_fraction_curve")) {
      c.train_fraction_curve.clear();
      for (const auto& step : j.at("train_fraction_curve")) {
        c.train_fraction_curve.push_back({step.at(0).get<std::size_t>(), step.at(1).get<double>()});
      }
    }
    if (j.contains("reserve_fraction")) c.reserve_fraction = j.at("reserve_fraction").get<double>();
    if (j.contains("min_train_annots")) c.min_train_annots = j.at("min_train_annots").get<std::size_t>();
    if (j.contains("min_test_annots")) c.min_test_annots = j.at("min_test_annots").get<std::size_t>();
    if (j.contains("max_test_annots")) c.max_test_annots = j.at("max_test_annots").get<std::size_t>();
    if (j.contains("one_per_encounter")) c.one_per_encounter = j.at("one_per_encounter").get<bool>();
    if (j.contains("rebalance_tolerance")) c.rebalance_tolerance = j.at("rebalance_tolerance").get<double>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

std::string SplitConfig::digest() const { return hex_digest(to_json().dump()); }

// ---------------------------------------------------------------------------
// Enum names

std::string_view to_string(SplitLabel v) {
  switch (v) {
    case SplitLabel::Train: return "train";
    case SplitLabel::Test: return "test";
    case SplitLabel::Dropped: return "dropped";
  }
  return "dropped";
}

std::string_view to_string(DropReason v) {
  switch (v) {
    case DropReason::None: return "";
    case DropReason::TrainMin: return "train_min";
    case DropReason::EncounterDup: return "encounter_dup";
    case DropReason::TestMin: return "test_min";
    case DropReason::TestCap: return "test_cap";
  }
  return "";
}

std::string_view to_string(Disposition v) {
  switch (v) {
    case Disposition::TrainOnly: return "train_only";
    case Disposition::Known: return "known";
    case Disposition::TestOnly: return "test_only";
    case Disposition::Excluded: return "excluded";
  }
  return "excluded";
}

SplitLabel parse_split_label(std::string_view s) {
  for (auto v : {SplitLabel::Train, SplitLabel::Test, SplitLabel::Dropped}) {
    if (s == to_string(v)) return v;
  }
  throw Error(Errc::FormatError, "split label '" + std::string(s) + "'");
}

DropReason parse_drop_reason(std::string_view s) {
  for (auto v : {DropReason::None, DropReason::TrainMin, DropReason::EncounterDup, DropReason::TestMin,
                 DropReason::TestCap}) {
    if (s == to_string(v)) return v;
  }
  throw Error(Errc::FormatError, "drop reason '" + std::string(s) + "'");
}

Disposition parse_disposition(std::string_view s) {
  for (auto v : {Disposition::TrainOnly, Disposition::Known, Disposition::TestOnly, Disposition::Excluded}) {
    if (s == to_string(v)) return v;
  }
  throw Error(Errc::FormatError, "identity disposition '" + std::string(s) + "'");
}

std::vector<std::string> SplitAssignment::test_ids(std::string_view species) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.species == species && e.label == SplitLabel::Test) out.push_back(e.annotation_id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

// All randomness for one identity is drawn up front from its own substream,
// so the outcome of any pool assignment is a pure function of the flags.
struct IdentityDraw {
  const IdentityKey* key = nullptr;
  std::size_t offset = 0;  // first local index of this identity
  std::size_t size = 0;
  double pool_u = 0.0;
};

struct LocalAnnotation {
  std::size_t catalog_index = 0;
  std::size_t identity = 0;
  std::uint64_t reserve_key = 0;
  std::uint64_t dedup_key = 0;
  std::uint64_t cap_key = 0;
};

struct Outcome {
  std::vector<SplitLabel> label;
  std::vector<DropReason> reason;
  std::vector<Disposition> disposition;  // per identity
  std::size_t known = 0;
  std::size_t unseen = 0;

  double known_fraction() const {
    const std::size_t total = known + unseen;
    return total == 0 ? 0.0 : static_cast<double>(known) / static_cast<double>(total);
  }
};

std::size_t reserve_count(std::size_t k, double fraction) {
  // The epsilon keeps exact products such as 0.3 * 10 from rounding up.
  const auto r = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(k) - 1e-9));
  return std::min(k, std::max<std::size_t>(r, 1));
}

class SpeciesSplitter {
 public:
  SpeciesSplitter(const Catalog& catalog, const std::string& species, const SplitConfig& config)
      : catalog_(catalog), config_(config) {
    const auto& index = catalog.identities(species);
    std::size_t total = 0;
    for (const auto& [key, members] : index) total += members.size();
    train_probability_ = config.train_probability(total);

    for (const auto& [key, members] : index) {
      IdentityDraw draw;
      draw.key = &key;
      draw.offset = local_.size();
      draw.size = members.size();
      Rng rng = make_substream(config.seed, species + "\x1f" + key.str());
      draw.pool_u = uniform01(rng);
      for (std::size_t m : members) {
        LocalAnnotation la;
        la.catalog_index = m;
        la.identity = identities_.size();
        la.reserve_key = rng();
        la.dedup_key = rng();
        la.cap_key = rng();
        local_.push_back(la);
      }
      identities_.push_back(draw);
    }

    std::map<std::string, std::vector<std::size_t>> by_encounter;
    for (std::size_t i = 0; i < local_.size(); ++i) {
      const auto& enc = annotation(i).encounter_id;
      if (!enc.empty()) by_encounter[enc].push_back(i);
    }
    for (auto& [enc, members] : by_encounter) {
      if (members.size() > 1) encounters_.push_back(std::move(members));
    }
  }

  const std::vector<LocalAnnotation>& local() const { return local_; }

  Outcome evaluate(const std::vector<bool>& in_train) const {
    const std::size_t n = local_.size();
    Outcome out;
    out.label.assign(n, SplitLabel::Test);
    out.reason.assign(n, DropReason::None);

    // Steps 1-3: reserve part of each training identity for test.
    for (std::size_t id = 0; id < identities_.size(); ++id) {
      if (!in_train[id]) continue;
      auto order = members(id);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(local_[a].reserve_key, a) < std::pair(local_[b].reserve_key, b);
      });
      const std::size_t reserved = reserve_count(order.size(), config_.reserve_fraction);
      for (std::size_t j = reserved; j < order.size(); ++j) out.label[order[j]] = SplitLabel::Train;
    }

    // (a) training minimum.
    for (std::size_t id = 0; id < identities_.size(); ++id) {
      const auto ms = members(id);
      const auto n_train = count_label(out, ms, SplitLabel::Train);
      if (n_train > 0 && n_train < config_.min_train_annots) {
        drop_label(out, ms, SplitLabel::Train, DropReason::TrainMin);
      }
    }

    // (b) one test annotation per encounter within the species.
    if (config_.one_per_encounter) {
      for (const auto& group : encounters_) {
        std::size_t keep = n;
        for (std::size_t i : group) {
          if (out.label[i] != SplitLabel::Test) continue;
          if (keep == n || dedup_before(i, keep)) keep = i;
        }
        for (std::size_t i : group) {
          if (i != keep && out.label[i] == SplitLabel::Test) {
            out.label[i] = SplitLabel::Dropped;
            out.reason[i] = DropReason::EncounterDup;
          }
        }
      }
    }

    // (c) test minimum, (d) test cap.
    for (std::size_t id = 0; id < identities_.size(); ++id) {
      const auto ms = members(id);
      const auto n_test = count_label(out, ms, SplitLabel::Test);
      if (n_test > 0 && n_test < config_.min_test_annots) {
        drop_label(out, ms, SplitLabel::Test, DropReason::TestMin);
      } else if (n_test > config_.max_test_annots) {
        std::vector<std::size_t> tests;
        for (std::size_t i : ms) {
          if (out.label[i] == SplitLabel::Test) tests.push_back(i);
        }
        std::sort(tests.begin(), tests.end(), [&](std::size_t a, std::size_t b) {
          return std::pair(local_[a].cap_key, a) < std::pair(local_[b].cap_key, b);
        });
        for (std::size_t j = config_.max_test_annots; j < tests.size(); ++j) {
          out.label[tests[j]] = SplitLabel::Dropped;
          out.reason[tests[j]] = DropReason::TestCap;
        }
      }
    }

    out.disposition.resize(identities_.size());
    for (std::size_t id = 0; id < identities_.size(); ++id) {
      const auto ms = members(id);
      const bool has_train = count_label(out, ms, SplitLabel::Train) > 0;
      const bool has_test = count_label(out, ms, SplitLabel::Test) > 0;
      Disposition d = Disposition::Excluded;
      if (has_train && has_test) {
        d = Disposition::Known;
        ++out.known;
      } else if (has_test) {
        d = Disposition::TestOnly;
        ++out.unseen;
      } else if (has_train) {
        d = Disposition::TrainOnly;
      }
      out.disposition[id] = d;
    }
    return out;
  }

  std::vector<bool> initial_pool() const {
    std::vector<bool> flags(identities_.size());
    for (std::size_t id = 0; id < identities_.size(); ++id) flags[id] = identities_[id].pool_u < train_probability_;
    return flags;
  }

  // Moves whole identities between the training pool and the test-only pool
  // until the known fraction is within tolerance or no move improves it.
  std::size_t rebalance(std::vector<bool>& flags, Outcome& outcome) const {
    const double target = config_.target_known_fraction;
    std::vector<bool> tried(identities_.size(), false);
    std::size_t moves = 0;
    for (;;) {
      const double gap = std::abs(outcome.known_fraction() - target);
      if (outcome.known + outcome.unseen == 0 || gap <= config_.rebalance_tolerance + 1e-12) break;
      const bool increase = outcome.known_fraction() < target;

      std::vector<std::size_t> candidates;
      for (std::size_t id = 0; id < identities_.size(); ++id) {
        if (tried[id]) continue;
        if (increase && !flags[id] && predicts_known(id)) candidates.push_back(id);
        if (!increase && flags[id] && outcome.disposition[id] == Disposition::Known) candidates.push_back(id);
      }
      std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        const double ua = identities_[a].pool_u, ub = identities_[b].pool_u;
        return increase ? std::pair(ua, a) < std::pair(ub, b) : std::pair(ua, a) > std::pair(ub, b);
      });

      bool moved = false;
      for (std::size_t id : candidates) {
        tried[id] = true;
        flags[id] = !flags[id];
        Outcome next = evaluate(flags);
        if (next.known + next.unseen > 0 && std::abs(next.known_fraction() - target) < gap) {
          outcome = std::move(next);
          ++moves;
          moved = true;
          break;
        }
        flags[id] = !flags[id];
      }
      if (!moved) break;
    }
    return moves;
  }

  const Annotation& annotation(std::size_t local_index) const {
    return catalog_.annotations()[local_[local_index].catalog_index];
  }

 private:
  std::vector<std::size_t> members(std::size_t id) const {
    std::vector<std::size_t> out(identities_[id].size);
    std::iota(out.begin(), out.end(), identities_[id].offset);
    return out;
  }

  static std::size_t count_label(const Outcome& out, const std::vector<std::size_t>& ms, SplitLabel label) {
    return static_cast<std::size_t>(
        std::count_if(ms.begin(), ms.end(), [&](std::size_t i) { return out.label[i] == label; }));
  }

  static void drop_label(Outcome& out, const std::vector<std::size_t>& ms, SplitLabel label, DropReason reason) {
    for (std::size_t i : ms) {
      if (out.label[i] == label) {
        out.label[i] = SplitLabel::Dropped;
        out.reason[i] = reason;
      }
    }
  }

  bool dedup_before(std::size_t a, std::size_t b) const {
    if (local_[a].dedup_key != local_[b].dedup_key) return local_[a].dedup_key < local_[b].dedup_key;
    return annotation(a).annotation_id < annotation(b).annotation_id;
  }

  // Ignores encounter coupling with other identities; the caller re-evaluates.
  bool predicts_known(std::size_t id) const {
    const std::size_t k = identities_[id].size;
    const std::size_t r = reserve_count(k, config_.reserve_fraction);
    return k - r >= config_.min_train_annots && r >= config_.min_test_annots;
  }

  const Catalog& catalog_;
  const SplitConfig& config_;
  double train_probability_ = 0.0;
  std::vector<IdentityDraw> identities_;
  std::vector<LocalAnnotation> local_;
  std::vector<std::vector<std::size_t>> encounters_;
};

}  // namespace

SplitAssignment assign_split(const Catalog& catalog, const SplitConfig& config, TooSmallPolicy on_too_small) {
  config.validate();
  if (catalog.empty()) throw Error(Errc::EmptyCatalog, "no annotations");

  SplitAssignment out;
  out.seed = config.seed;
  out.config_digest = config.digest();
  out.entries.resize(catalog.size());

  for (const auto& species : catalog.species()) {
    SpeciesSplitter splitter(catalog, species, config);
    auto flags = splitter.initial_pool();
    Outcome outcome = splitter.evaluate(flags);

    SpeciesSplitMeta meta;
    meta.species = species;
    meta.rebalance_moves = splitter.rebalance(flags, outcome);
    meta.too_small = outcome.known + outcome.unseen == 0;
    meta.within_tolerance =
        !meta.too_small &&
        std::abs(outcome.known_fraction() - config.target_known_fraction) <= config.rebalance_tolerance + 1e-12;
    if (meta.too_small && on_too_small == TooSmallPolicy::Throw) throw Error(Errc::SpeciesTooSmall, species);

    const auto& local = splitter.local();
    for (std::size_t i = 0; i < local.size(); ++i) {
      const std::size_t ci = local[i].catalog_index;
      auto& e = out.entries[ci];
      const Annotation& a = catalog.annotations()[ci];
      e.annotation_id = a.annotation_id;
      e.species = a.species;
      e.identity = catalog.identity_of(ci);
      e.label = outcome.label[i];
      e.drop_reason = outcome.reason[i];
      e.disposition = outcome.disposition[local[i].identity];
    }
    out.species.push_back(std::move(meta));
  }
  return out;
}

std::vector<SpeciesSplitReport> split_report(const SplitAssignment& assignment) {
  std::map<std::string, SpeciesSplitReport> by_species;
  std::map<std::string, std::map<IdentityKey, Disposition>> dispositions;
  for (const auto& e : assignment.entries) {
    auto& r = by_species[e.species];
    r.species = e.species;
    switch (e.label) {
      case SplitLabel::Train: ++r.train_annots; break;
      case SplitLabel::Test: ++r.test_annots; break;
      case SplitLabel::Dropped:
        ++r.dropped_annots;
        ++r.drop_histogram[std::string(to_string(e.drop_reason))];
        break;
    }
    dispositions[e.species][e.identity] = e.disposition;
  }
  for (const auto& meta : assignment.species) {
    auto it = by_species.find(meta.species);
    if (it == by_species.end()) continue;
    it->second.too_small = meta.too_small;
    it->second.within_tolerance = meta.within_tolerance;
    it->second.rebalance_moves = meta.rebalance_moves;
  }
  std::vector<SpeciesSplitReport> out;
  for (auto& [species, r] : by_species) {
    for (const auto& [key, d] : dispositions[species]) {
      if (d == Disposition::Known) ++r.known_identities;
      if (d == Disposition::TestOnly) ++r.unseen_identities;
    }
    const std::size_t total = r.known_identities + r.unseen_identities;
    r.known_fraction = total ? static_cast<double>(r.known_identities) / static_cast<double>(total) : 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

json split_report_json(const std::vector<SpeciesSplitReport>& report) {
  json species = json::array();
  for (const auto& r : report) {
    species.push_back({{"species", r.species},
                       {"train_annots", r.train_annots},
                       {"test_annots", r.test_annots},
                       {"dropped_annots", r.dropped_annots},
                       {"known_identities", r.known_identities},
                       {"unseen_identities", r.unseen_identities},
                       {"known_fraction", r.known_fraction},
                       {"drop_histogram", r.drop_histogram},
                       {"too_small", r.too_small},
                       {"within_tolerance", r.within_tolerance},
                       {"rebalance_moves", r.rebalance_moves}});
  }
  return species;
}

std::string serialize_assignment(const SplitAssignment& assignment, std::string_view provenance) {
  std::string out;
  if (!provenance.empty()) {
    out += provenance;
    out += '\n';
  }
  out += "annotation_id,label,drop_reason,identity_disposition\n";
  for (const auto& e : assignment.entries) {
    out += csv::join({e.annotation_id, std::string(to_string(e.label)), std::string(to_string(e.drop_reason)),
                      std::string(to_string(e.disposition))});
    out += '\n';
  }
  return out;
}

SplitAssignment parse_assignment(std::string_view content, const Catalog& catalog) {
  std::size_t bad_line = 0;
  auto records = csv::parse(content, &bad_line);
  if (!records) throw Error(Errc::MalformedRow, std::to_string(bad_line));
  if (records->empty()) throw Error(Errc::MalformedRow, "1");
  const auto& header = records->front().fields;
  if (header != std::vector<std::string>{"annotation_id", "label", "drop_reason", "identity_disposition"}) {
    throw Error(Errc::MalformedRow, std::to_string(records->front().line_no));
  }
  SplitAssignment out;
  std::vector<bool> seen(catalog.size(), false);
  for (std::size_t r = 1; r < records->size(); ++r) {
    const auto& rec = (*records)[r];
    if (rec.fields.size() != 4) throw Error(Errc::MalformedRow, std::to_string(rec.line_no));
    const auto ci = catalog.find(rec.fields[0]);
    if (!ci) throw Error(Errc::UnknownId, rec.fields[0]);
    if (seen[*ci]) throw Error(Errc::DuplicateAnnotationId, rec.fields[0]);
    seen[*ci] = true;
    AnnotationSplit e;
    e.annotation_id = rec.fields[0];
    e.species = catalog.annotations()[*ci].species;
    e.identity = catalog.identity_of(*ci);
    try {
      e.label = parse_split_label(rec.fields[1]);
      e.drop_reason = parse_drop_reason(rec.fields[2]);
      e.disposition = parse_disposition(rec.fields[3]);
    } catch (const Error&) {
      throw Error(Errc::MalformedRow, std::to_string(rec.line_no));
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace reid
