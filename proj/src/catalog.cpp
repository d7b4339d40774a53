#include "reid/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <functional>
#include <set>

#include <json.hpp>

#include "reid/csv.hpp"
#include "reid/error.hpp"

namespace reid {

namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

std::optional<std::uint32_t> parse_u32(std::string_view s) {
  std::uint32_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

std::optional<BBox> make_bbox(std::size_t line, const std::optional<std::string>& x,
                              const std::optional<std::string>& y, const std::optional<std::string>& w,
                              const std::optional<std::string>& h) {
  const int present = int(x && !x->empty()) + int(y && !y->empty()) + int(w && !w->empty()) +
                      int(h && !h->empty());
  if (present == 0) return std::nullopt;
  if (present != 4) throw Error(Errc::MalformedRow, std::to_string(line));
  const auto px = parse_u32(*x), py = parse_u32(*y), pw = parse_u32(*w), ph = parse_u32(*h);
  if (!px || !py || !pw || !ph || *pw == 0 || *ph == 0) {
    throw Error(Errc::MalformedRow, std::to_string(line));
  }
  return BBox{*px, *py, *pw, *ph};
}

void require_ids(const Annotation& a, std::size_t line) {
  if (a.annotation_id.empty() || a.species.empty() || a.individual_id.empty()) {
    throw Error(Errc::MalformedRow, std::to_string(line));
  }
}

std::vector<Annotation> parse_csv_rows(std::string_view content) {
  std::size_t bad_line = 0;
  auto records = csv::parse(content, &bad_line);
  if (!records) throw Error(Errc::MalformedRow, std::to_string(bad_line));
  if (records->empty()) throw Error(Errc::MalformedRow, "1");

  const auto& header = records->front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.fields.size(); ++i) col[trim(header.fields[i])] = i;
  for (const char* required : {"annotation_id", "species", "individual_id"}) {
    if (!col.count(required)) throw Error(Errc::MalformedRow, std::to_string(header.line_no));
  }

  std::vector<Annotation> rows;
  rows.reserve(records->size() - 1);
  for (std::size_t r = 1; r < records->size(); ++r) {
    const auto& rec = (*records)[r];
    if (rec.fields.size() != header.fields.size()) {
      throw Error(Errc::MalformedRow, std::to_string(rec.line_no));
    }
    auto get = [&](const char* name) -> std::optional<std::string> {
      const auto it = col.find(name);
      if (it == col.end()) return std::nullopt;
      return trim(rec.fields[it->second]);
    };
    Annotation a;
    a.annotation_id = *get("annotation_id");
    a.species = *get("species");
    a.individual_id = *get("individual_id");
    require_ids(a, rec.line_no);
    if (auto v = get("viewpoint")) a.viewpoint = parse_viewpoint(*v);
    if (auto e = get("encounter_id")) a.encounter_id = *e;
    if (auto im = get("image_ref")) a.image_ref = *im;
    a.bbox = make_bbox(rec.line_no, get("bbox_x"), get("bbox_y"), get("bbox_w"), get("bbox_h"));
    rows.push_back(std::move(a));
  }
  return rows;
}

std::vector<Annotation> parse_jsonl_rows(std::string_view content) {
  std::vector<Annotation> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    const auto nl = content.find('\n', pos);
    const auto line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? content.size() + 1 : nl + 1;
    if (trim(line).empty() || trim(line) == "\r") continue;

    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) throw Error(Errc::MalformedRow, std::to_string(line_no));

    auto str_field = [&](const char* name, bool required) -> std::optional<std::string> {
      const auto it = obj.find(name);
      if (it == obj.end() || it->is_null()) {
        if (required) throw Error(Errc::MalformedRow, std::to_string(line_no));
        return std::nullopt;
      }
      if (!it->is_string()) throw Error(Errc::MalformedRow, std::to_string(line_no));
      return it->get<std::string>();
    };
    auto num_field = [&](const char* name) -> std::optional<std::string> {
      const auto it = obj.find(name);
      if (it == obj.end() || it->is_null()) return std::nullopt;
      if (!it->is_number_integer()) throw Error(Errc::MalformedRow, std::to_string(line_no));
      return it->dump();
    };

    Annotation a;
    a.annotation_id = *str_field("annotation_id", true);
    a.species = *str_field("species", true);
    a.individual_id = *str_field("individual_id", true);
    require_ids(a, line_no);
    if (auto v = str_field("viewpoint", false)) a.viewpoint = parse_viewpoint(*v);
    if (auto e = str_field("encounter_id", false)) a.encounter_id = *e;
    if (auto im = str_field("image_ref", false)) a.image_ref = *im;
    a.bbox = make_bbox(line_no, num_field("bbox_x"), num_field("bbox_y"), num_field("bbox_w"),
                       num_field("bbox_h"));
    rows.push_back(std::move(a));
  }
  return rows;
}

const Catalog::IdentityIndex& empty_index() {
  static const Catalog::IdentityIndex empty;
  return empty;
}

}  // namespace

std::string_view to_string(Viewpoint v) {
  switch (v) {
    case Viewpoint::Left: return "left";
    case Viewpoint::Right: return "right";
    case Viewpoint::Front: return "front";
    case Viewpoint::Back: return "back";
    case Viewpoint::Top: return "top";
    case Viewpoint::Unknown: return "unknown";
  }
  return "unknown";
}

Viewpoint parse_viewpoint(std::string_view token) {
  const std::string t = lower(trim(token));
  if (t.empty()) return Viewpoint::Unknown;
  for (Viewpoint v : kAllViewpoints) {
    if (t == to_string(v)) return v;
  }
  throw Error(Errc::UnknownViewpoint, std::string(token));
}

SpeciesPolicy SpeciesPolicy::default_for(std::string species) {
  SpeciesPolicy p;
  p.species = std::move(species);
  p.viewpoint_splits_identity = true;
  for (Viewpoint v : {Viewpoint::Left, Viewpoint::Right, Viewpoint::Front, Viewpoint::Back, Viewpoint::Top}) {
    p.matchable_viewpoint_groups.push_back({v});
  }
  return p;
}

std::optional<std::uint32_t> SpeciesPolicy::group_of(Viewpoint v) const {
  for (std::size_t g = 0; g < matchable_viewpoint_groups.size(); ++g) {
    const auto& grp = matchable_viewpoint_groups[g];
    if (std::find(grp.begin(), grp.end(), v) != grp.end()) return static_cast<std::uint32_t>(g);
  }
  return std::nullopt;
}

void SpeciesPolicy::validate() const {
  std::set<Viewpoint> seen;
  for (const auto& grp : matchable_viewpoint_groups) {
    if (grp.empty()) throw Error(Errc::InvalidPolicy, species + ": empty viewpoint group");
    for (Viewpoint v : grp) {
      if (!seen.insert(v).second) {
        throw Error(Errc::InvalidPolicy, species + ": viewpoint '" + std::string(to_string(v)) +
                                             "' in more than one group");
      }
    }
  }
}

std::string IdentityKey::str() const {
  std::string out = species + "/" + individual_id;
  if (viewpoint_group) out += "#g" + std::to_string(*viewpoint_group);
  return out;
}

std::size_t IdentityKeyHash::operator()(const IdentityKey& k) const {
  std::size_t h = std::hash<std::string>{}(k.species);
  h = h * 1000003u ^ std::hash<std::string>{}(k.individual_id);
  h = h * 1000003u ^ (k.viewpoint_group ? *k.viewpoint_group + 1u : 0u);
  return h;
}

IdentityKey derive_identity(const Annotation& ann, const SpeciesPolicy& policy) {
  IdentityKey key{ann.species, ann.individual_id, std::nullopt};
  if (policy.viewpoint_splits_identity) {
    const auto group = policy.group_of(ann.viewpoint);
    if (!group) throw Error(Errc::ViewpointNotInAnyGroup, std::string(to_string(ann.viewpoint)));
    key.viewpoint_group = group;
  }
  return key;
}

PolicyTable parse_policies(std::string_view json_text) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error(Errc::InvalidPolicy, "policy file is not a JSON object");
  PolicyTable table;
  for (const auto& [species, entry] : doc.items()) {
    if (!entry.is_object()) throw Error(Errc::InvalidPolicy, species + ": entry is not an object");
    SpeciesPolicy p = SpeciesPolicy::default_for(species);
    if (auto it = entry.find("viewpoint_splits_identity"); it != entry.end()) {
      if (!it->is_boolean()) throw Error(Errc::InvalidPolicy, species + ": viewpoint_splits_identity");
      p.viewpoint_splits_identity = it->get<bool>();
    }
    if (auto it = entry.find("matchable_viewpoint_groups"); it != entry.end()) {
      if (!it->is_array()) throw Error(Errc::InvalidPolicy, species + ": matchable_viewpoint_groups");
      p.matchable_viewpoint_groups.clear();
      for (const auto& grp : *it) {
        if (!grp.is_array()) throw Error(Errc::InvalidPolicy, species + ": group is not an array");
        std::vector<Viewpoint> g;
        for (const auto& tok : grp) {
          if (!tok.is_string()) throw Error(Errc::InvalidPolicy, species + ": viewpoint is not a string");
          g.push_back(parse_viewpoint(tok.get<std::string>()));
        }
        p.matchable_viewpoint_groups.push_back(std::move(g));
      }
    }
    p.validate();
    table.emplace(species, std::move(p));
  }
  return table;
}

std::string serialize_policies(const PolicyTable& table) {
  json doc = json::object();
  for (const auto& [species, p] : table) {
    json groups = json::array();
    for (const auto& grp : p.matchable_viewpoint_groups) {
      json g = json::array();
      for (Viewpoint v : grp) g.push_back(std::string(to_string(v)));
      groups.push_back(std::move(g));
    }
    doc[species] = {{"viewpoint_splits_identity", p.viewpoint_splits_identity},
                    {"matchable_viewpoint_groups", std::move(groups)}};
  }
  return doc.dump(2) + "\n";
}

Catalog::Catalog(std::vector<Annotation> annotations, PolicyTable policies)
    : annotations_(std::move(annotations)), policies_(std::move(policies)) {
  for (auto& [species, p] : policies_) {
    p.species = species;
    p.validate();
  }
  by_id_.reserve(annotations_.size());
  identity_of_.reserve(annotations_.size());
  std::map<std::string, SpeciesPolicy, std::less<>> resolved;
  for (std::size_t i = 0; i < annotations_.size(); ++i) {
    const Annotation& a = annotations_[i];
    if (!by_id_.emplace(a.annotation_id, i).second) throw Error(Errc::DuplicateAnnotationId, a.annotation_id);
    auto it = resolved.find(a.species);
    if (it == resolved.end()) it = resolved.emplace(a.species, policy(a.species)).first;
    identity_of_.push_back(derive_identity(a, it->second));
    index_[a.species][identity_of_.back()].push_back(i);
  }
  for (auto& [species, idx] : index_) {
    for (auto& [key, members] : idx) {
      std::sort(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
        return annotations_[x].annotation_id < annotations_[y].annotation_id;
      });
    }
  }
}

SpeciesPolicy Catalog::policy(std::string_view species) const {
  if (const auto it = policies_.find(species); it != policies_.end()) return it->second;
  return SpeciesPolicy::default_for(std::string(species));
}

std::vector<std::string> Catalog::species() const {
  std::vector<std::string> out;
  out.reserve(index_.size());
  for (const auto& [s, idx] : index_) out.push_back(s);
  return out;
}

const Catalog::IdentityIndex& Catalog::identities(std::string_view species) const {
  const auto it = index_.find(species);
  return it == index_.end() ? empty_index() : it->second;
}

std::optional<std::size_t> Catalog::find(std::string_view annotation_id) const {
  const auto it = by_id_.find(std::string(annotation_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

Catalog parse_manifest(std::string_view content, ManifestFormat format, PolicyTable policies) {
  auto rows = format == ManifestFormat::Csv ? parse_csv_rows(content) : parse_jsonl_rows(content);
  return Catalog(std::move(rows), std::move(policies));
}

std::string serialize_manifest(const Catalog& catalog, ManifestFormat format) {
  std::string out;
  if (format == ManifestFormat::Csv) {
    out += "annotation_id,species,individual_id,viewpoint,encounter_id,image_ref,bbox_x,bbox_y,bbox_w,bbox_h\n";
    for (const auto& a : catalog.annotations()) {
      std::vector<std::string> f{a.annotation_id, a.species, a.individual_id, std::string(to_string(a.viewpoint)),
                                 a.encounter_id, a.image_ref};
      if (a.bbox) {
        for (auto v : {a.bbox->x, a.bbox->y, a.bbox->w, a.bbox->h}) f.push_back(std::to_string(v));
      } else {
        f.insert(f.end(), 4, std::string());
      }
      out += csv::join(f);
      out += '\n';
    }
    return out;
  }
  for (const auto& a : catalog.annotations()) {
    json obj = {{"annotation_id", a.annotation_id}, {"species", a.species},
                {"individual_id", a.individual_id}, {"viewpoint", to_string(a.viewpoint)},
                {"encounter_id", a.encounter_id},   {"image_ref", a.image_ref}};
    if (a.bbox) {
      obj["bbox_x"] = a.bbox->x;
      obj["bbox_y"] = a.bbox->y;
      obj["bbox_w"] = a.bbox->w;
      obj["bbox_h"] = a.bbox->h;
    }
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::vector<SpeciesStats> catalog_stats(const Catalog& catalog) {
  if (catalog.empty()) throw Error(Errc::EmptyCatalog, "no annotations");
  std::vector<SpeciesStats> out;
  for (const auto& species : catalog.species()) {
    const auto& idx = catalog.identities(species);
    std::vector<std::size_t> sizes;
    sizes.reserve(idx.size());
    SpeciesStats s;
    s.species = species;
    for (const auto& [key, members] : idx) {
      sizes.push_back(members.size());
      s.annotation_count += members.size();
    }
    s.individual_count = sizes.size();
    std::sort(sizes.begin(), sizes.end());
    s.mean_per_individual = static_cast<double>(s.annotation_count) / static_cast<double>(sizes.size());
    const std::size_t mid = sizes.size() / 2;
    s.median_per_individual = sizes.size() % 2 ? static_cast<double>(sizes[mid])
                                                : 0.5 * static_cast<double>(sizes[mid - 1] + sizes[mid]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace reid
