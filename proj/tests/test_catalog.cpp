#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "generators.hpp"
#include "reference_tables.hpp"
#include "reid/catalog.hpp"
#include "reid/csv.hpp"
#include "reid/error.hpp"

using namespace reid;

namespace {

constexpr std::string_view kHeader = "annotation_id,species,individual_id,viewpoint,encounter_id,image_ref\n";

Errc error_code(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::IoError;
}

PolicyTable no_split(std::initializer_list<std::string> species) {
  PolicyTable t;
  for (const auto& s : species) {
    SpeciesPolicy p;
    p.species = s;
    p.viewpoint_splits_identity = false;
    t.emplace(s, p);
  }
  return t;
}

}  // namespace

TEST_SUITE("catalog") {
  TEST_CASE("three distinct rows ingest") {
    const std::string csv = std::string(kHeader) +
                            "a1,zebra,Z1,left,e1,img1.jpg\n"
                            "a2,zebra,Z1,left,e2,img2.jpg\n"
                            "a3,zebra,Z2,right,e3,img3.jpg\n";
    const auto cat = parse_manifest(csv, ManifestFormat::Csv);
    CHECK(cat.size() == 3);
    CHECK(cat.annotations()[2].viewpoint == Viewpoint::Right);
    CHECK(cat.identities("zebra").size() == 2);
  }

  TEST_CASE("duplicate annotation id is rejected with the id") {
    const std::string csv = std::string(kHeader) + "a1,zebra,Z1,left,e1,x\na1,zebra,Z2,left,e2,y\n";
    try {
      parse_manifest(csv, ManifestFormat::Csv);
      FAIL("expected DuplicateAnnotationId");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::DuplicateAnnotationId);
      CHECK(e.detail() == "a1");
    }
  }

  TEST_CASE("manifest errors") {
    SUBCASE("unknown viewpoint token") {
      try {
        parse_manifest(std::string(kHeader) + "a1,zebra,Z1,sideways,e1,x\n", ManifestFormat::Csv);
        FAIL("expected UnknownViewpoint");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::UnknownViewpoint);
        CHECK(e.detail() == "sideways");
      }
    }
    SUBCASE("wrong field count reports the line") {
      try {
        parse_manifest(std::string(kHeader) + "a1,zebra,Z1,left,e1,x\na2,zebra\n", ManifestFormat::Csv);
        FAIL("expected MalformedRow");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::MalformedRow);
        CHECK(e.detail() == "3");
      }
    }
    SUBCASE("missing required column") {
      CHECK(error_code([] { parse_manifest("annotation_id,species\na,b\n", ManifestFormat::Csv); }) ==
            Errc::MalformedRow);
    }
    SUBCASE("empty individual id") {
      CHECK(error_code([] { parse_manifest(std::string(kHeader) + "a1,zebra,,left,e,x\n", ManifestFormat::Csv); }) ==
            Errc::MalformedRow);
    }
    SUBCASE("bbox with zero width") {
      const std::string csv = "annotation_id,species,individual_id,bbox_x,bbox_y,bbox_w,bbox_h\na1,s,i,0,0,0,5\n";
      CHECK(error_code([&] { parse_manifest(csv, ManifestFormat::Csv); }) == Errc::MalformedRow);
    }
    SUBCASE("partial bbox") {
      const std::string csv = "annotation_id,species,individual_id,bbox_x,bbox_y,bbox_w,bbox_h\na1,s,i,1,2,,5\n";
      CHECK(error_code([&] { parse_manifest(csv, ManifestFormat::Csv); }) == Errc::MalformedRow);
    }
    SUBCASE("negative bbox coordinate") {
      const std::string csv = "annotation_id,species,individual_id,bbox_x,bbox_y,bbox_w,bbox_h\na1,s,i,-1,2,3,5\n";
      CHECK(error_code([&] { parse_manifest(csv, ManifestFormat::Csv); }) == Errc::MalformedRow);
    }
    SUBCASE("unterminated quote") {
      CHECK(error_code([] { parse_manifest(std::string(kHeader) + "\"a1,zebra\n", ManifestFormat::Csv); }) ==
            Errc::MalformedRow);
    }
    SUBCASE("bad jsonl line") {
      try {
        parse_manifest("{\"annotation_id\":\"a\",\"species\":\"s\",\"individual_id\":\"i\"}\nnot json\n",
                       ManifestFormat::Jsonl);
        FAIL("expected MalformedRow");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::MalformedRow);
        CHECK(e.detail() == "2");
      }
    }
  }

  TEST_CASE("viewpoint defaults to unknown when the column is absent") {
    const auto cat = parse_manifest("annotation_id,species,individual_id\na1,beluga,B1\n", ManifestFormat::Csv,
                                    no_split({"beluga"}));
    CHECK(cat.annotations()[0].viewpoint == Viewpoint::Unknown);
  }

  TEST_CASE("bbox is optional and parsed when present") {
    const auto cat = parse_manifest(
        "annotation_id,species,individual_id,viewpoint,bbox_x,bbox_y,bbox_w,bbox_h\n"
        "a1,s,i,left,1,2,3,4\na2,s,i,left,,,,\n",
        ManifestFormat::Csv);
    REQUIRE(cat.annotations()[0].bbox);
    CHECK(*cat.annotations()[0].bbox == BBox{1, 2, 3, 4});
    CHECK_FALSE(cat.annotations()[1].bbox);
  }

  TEST_CASE("jsonl manifest") {
    const auto cat = parse_manifest(
        "{\"annotation_id\":\"a1\",\"species\":\"cheetah\",\"individual_id\":\"C7\",\"viewpoint\":\"LEFT\","
        "\"encounter_id\":\"e\",\"bbox_x\":1,\"bbox_y\":2,\"bbox_w\":3,\"bbox_h\":4}\n\n"
        "{\"annotation_id\":\"a2\",\"species\":\"cheetah\",\"individual_id\":\"C7\",\"viewpoint\":\"right\"}\n",
        ManifestFormat::Jsonl);
    CHECK(cat.size() == 2);
    CHECK(cat.annotations()[0].viewpoint == Viewpoint::Left);
    CHECK(cat.annotations()[0].bbox == BBox{1, 2, 3, 4});
    CHECK(cat.identities("cheetah").size() == 2);
  }

  TEST_CASE("viewpoint parsing") {
    CHECK(parse_viewpoint("Top") == Viewpoint::Top);
    CHECK(parse_viewpoint("") == Viewpoint::Unknown);
    for (auto v : kAllViewpoints) CHECK(parse_viewpoint(to_string(v)) == v);
  }

  TEST_CASE("cheetah sides are separate identities") {
    const auto pol = SpeciesPolicy::default_for("cheetah");
    Annotation a{"a1", "cheetah", "C7", Viewpoint::Left, "", "", std::nullopt};
    const auto key = derive_identity(a, pol);
    CHECK(key.species == "cheetah");
    CHECK(key.individual_id == "C7");
    CHECK(key.viewpoint_group == pol.group_of(Viewpoint::Left));
    a.viewpoint = Viewpoint::Right;
    CHECK_FALSE(derive_identity(a, pol) == key);
  }

  TEST_CASE("beluga top view carries no viewpoint group") {
    SpeciesPolicy pol;
    pol.species = "beluga";
    pol.viewpoint_splits_identity = false;
    const Annotation a{"b", "beluga", "B1", Viewpoint::Top, "", "", std::nullopt};
    const auto key = derive_identity(a, pol);
    CHECK(key == IdentityKey{"beluga", "B1", std::nullopt});
    CHECK(key.str() == "beluga/B1");
  }

  TEST_CASE("unknown viewpoint under splitting has no group") {
    const auto pol = SpeciesPolicy::default_for("cheetah");
    const Annotation a{"a", "cheetah", "C1", Viewpoint::Unknown, "", "", std::nullopt};
    CHECK(error_code([&] { derive_identity(a, pol); }) == Errc::ViewpointNotInAnyGroup);
    CHECK(error_code([&] { Catalog({a}, {}); }) == Errc::ViewpointNotInAnyGroup);
  }

  TEST_CASE("outline species may match opposite sides") {
    SpeciesPolicy pol;
    pol.species = "fin";
    pol.matchable_viewpoint_groups = {{Viewpoint::Left, Viewpoint::Right}, {Viewpoint::Front}};
    const Annotation l{"a", "fin", "F", Viewpoint::Left, "", "", std::nullopt};
    const Annotation r{"b", "fin", "F", Viewpoint::Right, "", "", std::nullopt};
    const Annotation f{"c", "fin", "F", Viewpoint::Front, "", "", std::nullopt};
    CHECK(derive_identity(l, pol) == derive_identity(r, pol));
    CHECK_FALSE(derive_identity(l, pol) == derive_identity(f, pol));
    CHECK(derive_identity(l, pol).str() == "fin/F#g0");
  }

  TEST_CASE("policy validation and round trip") {
    SpeciesPolicy bad;
    bad.species = "x";
    bad.matchable_viewpoint_groups = {{Viewpoint::Left}, {Viewpoint::Left, Viewpoint::Right}};
    CHECK(error_code([&] { bad.validate(); }) == Errc::InvalidPolicy);
    CHECK(error_code([] { parse_policies("[1,2]"); }) == Errc::InvalidPolicy);
    CHECK(error_code([] { parse_policies(R"({"x":{"matchable_viewpoint_groups":[["left"],["left"]]}})"); }) ==
          Errc::InvalidPolicy);

    const auto table = parse_policies(R"({
      "whale_fin": {"viewpoint_splits_identity": true, "matchable_viewpoint_groups": [["left","right"]]},
      "beluga": {"viewpoint_splits_identity": false}
    })");
    CHECK(table.size() == 2);
    CHECK(table.at("beluga").viewpoint_splits_identity == false);
    CHECK(table.at("whale_fin").group_of(Viewpoint::Right) == 0u);
    CHECK(parse_policies(serialize_policies(table)) == table);
  }

  TEST_CASE("species without a policy entry use the default") {
    const auto cat = parse_manifest(std::string(kHeader) + "a,giraffe,G,left,e,x\nb,giraffe,G,right,e,x\n",
                                    ManifestFormat::Csv);
    CHECK(cat.policy("giraffe") == SpeciesPolicy::default_for("giraffe"));
    CHECK(cat.identities("giraffe").size() == 2);
    CHECK(cat.identities("nothing").empty());
  }

  TEST_CASE("61-row manifest built from the dataset summary names") {
    std::string csv = "annotation_id,species,individual_id\n";
    for (std::size_t i = 0; i < fixtures::kDatasets.size(); ++i) {
      csv += csv::join({"t" + std::to_string(i), std::string(fixtures::kDatasets[i].name), "ind0"}) + "\n";
    }
    // Count rows independently of the parser.
    std::istringstream lines(csv);
    std::string line;
    std::size_t data_lines = 0;
    std::getline(lines, line);
    while (std::getline(lines, line)) data_lines += line.empty() ? 0 : 1;

    PolicyTable policies;
    for (const auto& row : fixtures::kDatasets) {
      SpeciesPolicy p;
      p.species = std::string(row.name);
      p.viewpoint_splits_identity = false;
      policies.emplace(p.species, p);
    }
    const auto cat = parse_manifest(csv, ManifestFormat::Csv, policies);
    CHECK(data_lines == 61);
    CHECK(cat.species().size() == data_lines);
    CHECK(catalog_stats(cat).size() == 61);
  }

  TEST_CASE("stats: one individual with four annotations") {
    std::string csv = "annotation_id,species,individual_id\n";
    for (int i = 0; i < 4; ++i) csv += "a" + std::to_string(i) + ",s,one\n";
    const auto stats = catalog_stats(parse_manifest(csv, ManifestFormat::Csv, no_split({"s"})));
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].annotation_count == 4);
    CHECK(stats[0].individual_count == 1);
    CHECK(stats[0].mean_per_individual == 4.0);
    CHECK(stats[0].median_per_individual == 4.0);
  }

  TEST_CASE("stats: individuals with 2, 3 and 10 annotations") {
    std::string csv = "annotation_id,species,individual_id\n";
    int next = 0;
    for (auto [ind, n] : {std::pair("x", 2), std::pair("y", 3), std::pair("z", 10)}) {
      for (int i = 0; i < n; ++i) csv += "a" + std::to_string(next++) + ",s," + ind + "\n";
    }
    const auto stats = catalog_stats(parse_manifest(csv, ManifestFormat::Csv, no_split({"s"})));
    CHECK(stats[0].mean_per_individual == doctest::Approx(5.0));
    CHECK(stats[0].median_per_individual == 3.0);
  }

  TEST_CASE("stats: even individual count takes the middle average") {
    std::string csv = "annotation_id,species,individual_id\n";
    int next = 0;
    for (auto [ind, n] : {std::pair("w", 1), std::pair("x", 2), std::pair("y", 5), std::pair("z", 9)}) {
      for (int i = 0; i < n; ++i) csv += "a" + std::to_string(next++) + ",s," + ind + "\n";
    }
    const auto stats = catalog_stats(parse_manifest(csv, ManifestFormat::Csv, no_split({"s"})));
    CHECK(stats[0].median_per_individual == 3.5);
  }

  TEST_CASE("stats: amur tiger sized catalog") {
    const auto& row = fixtures::kDatasets[0];
    REQUIRE(row.name == "amur_tiger");
    std::vector<Annotation> anns;
    for (int i = 0; i < row.annotations; ++i) {
      anns.push_back({"t" + std::to_string(i), "amur_tiger", "tiger" + std::to_string(i % row.individuals),
                      Viewpoint::Unknown, "", "", std::nullopt});
    }
    const Catalog cat(std::move(anns), no_split({"amur_tiger"}));
    const auto stats = catalog_stats(cat);
    CHECK(stats[0].annotation_count == 1015);
    CHECK(stats[0].individual_count == 103);
    CHECK(stats[0].mean_per_individual == doctest::Approx(9.85).epsilon(0.001));
  }

  TEST_CASE("stats on an empty catalog") {
    CHECK(error_code([] { catalog_stats(Catalog{}); }) == Errc::EmptyCatalog);
  }

  TEST_CASE("property: identity index partitions annotations") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      const auto cat = gen::random_catalog(rng, gen::between(rng, 1, 5), 1, 12, 1, 9);
      std::size_t total = 0;
      std::set<std::size_t> seen;
      for (const auto& sp : cat.species()) {
        for (const auto& [key, members] : cat.identities(sp)) {
          total += members.size();
          for (auto m : members) {
            CHECK(seen.insert(m).second);
            CHECK(cat.identity_of(m) == key);
            CHECK(derive_identity(cat.annotations()[m], cat.policy(sp)) == key);
          }
          CHECK(std::is_sorted(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            return cat.annotations()[a].annotation_id < cat.annotations()[b].annotation_id;
          }));
        }
      }
      CHECK(total == cat.size());
    }
  }

  TEST_CASE("property: manifest round trip through csv and jsonl") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Annotation> anns;
      const std::size_t n = gen::between(rng, 1, 30);
      for (std::size_t i = 0; i < n; ++i) {
        Annotation a;
        a.annotation_id = "id," + std::to_string(i) + (i % 3 == 0 ? "\"q\"" : "");
        a.species = i % 2 ? "sp a" : "sp#b";
        a.individual_id = "ind\n" + std::to_string(gen::between(rng, 0, 4));
        a.viewpoint = kAllViewpoints[gen::between(rng, 0, 4)];
        a.encounter_id = gen::between(rng, 0, 1) ? "" : "e" + std::to_string(i / 2);
        a.image_ref = "img/" + std::to_string(i) + ".jpg";
        if (gen::between(rng, 0, 1)) {
          a.bbox = BBox{static_cast<std::uint32_t>(i), 2, static_cast<std::uint32_t>(i + 1), 7};
        }
        anns.push_back(a);
      }
      const Catalog cat(anns, {});
      for (auto fmt : {ManifestFormat::Csv, ManifestFormat::Jsonl}) {
        const auto back = parse_manifest(serialize_manifest(cat, fmt), fmt);
        CHECK(back.annotations() == cat.annotations());
      }
    }
  }
}
