#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "uniseg/synth.hpp"

using namespace uniseg;
namespace fs = std::filesystem;

namespace {

bool samples_equal(const Sample& a, const Sample& b) {
    return a.dataset_id == b.dataset_id && a.features.v == b.features.v &&
           a.labels.v == b.labels.v && a.fine_truth.v == b.fine_truth.v;
}

// tiny two-dataset spec for quick structural tests
HierarchySpec tiny_spec(double std_dev) {
    HierarchySpec s;
    s.fine_classes = {"a", "b", "c"};
    s.datasets = {{"merged", {{"b", "a"}}}, {"full", {}}};
    s.feature_dim = 2;
    s.cluster_means = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, -1.0}};
    s.cluster_std = std_dev;
    s.min_rect = 2;
    s.max_rect = 4;
    s.seed = 5;
    return s;
}

}  // namespace

TEST_CASE("generation is deterministic and prefix stable") {
    const HierarchySpec spec = default_fixture();
    const auto a = generate(spec, "FINE", 4, 16, 16, 1);
    const auto b = generate(spec, "FINE", 4, 16, 16, 1);
    REQUIRE(a.size() == 4);
    for (size_t i = 0; i < a.size(); ++i) CHECK(samples_equal(a[i], b[i]));

    // growing a split re-derives the same leading images
    const auto grown = generate(spec, "FINE", 8, 16, 16, 1);
    for (size_t i = 0; i < a.size(); ++i) CHECK(samples_equal(a[i], grown[i]));

    // other splits and seeds move the content
    const auto other_split = generate(spec, "FINE", 4, 16, 16, 2);
    CHECK(!samples_equal(a[0], other_split[0]));
    HierarchySpec reseeded = spec;
    reseeded.seed += 1;
    CHECK(!samples_equal(a[0], generate(reseeded, "FINE", 4, 16, 16, 1)[0]));
}

TEST_CASE("zero noise pins every feature to its class mean") {
    const HierarchySpec spec = tiny_spec(0.0);
    for (const Sample& s : generate(spec, "full", 3, 12, 12, 1)) {
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                const auto& mean = spec.cluster_means[s.fine_truth.at(y, x)];
                CHECK(s.features.at(y, x, 0) == mean[0]);
                CHECK(s.features.at(y, x, 1) == mean[1]);
            }
    }
}

TEST_CASE("empirical class means approach the planted means") {
    const HierarchySpec spec = default_fixture();
    const auto samples = generate(spec, "FINE", 24, 32, 32, 3);

    std::vector<std::vector<double>> sums(spec.fine_classes.size(),
                                          std::vector<double>(spec.feature_dim, 0.0));
    std::vector<long long> counts(spec.fine_classes.size(), 0);
    for (const Sample& s : samples)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const int c = s.fine_truth.at(y, x);
                ++counts[c];
                for (int d = 0; d < spec.feature_dim; ++d) sums[c][d] += s.features.at(y, x, d);
            }

    for (size_t c = 0; c < spec.fine_classes.size(); ++c) {
        REQUIRE(counts[c] > 300);  // every class shows up across 24 tilings
        const double tol = 3.0 * spec.cluster_std / std::sqrt(static_cast<double>(counts[c]));
        for (int d = 0; d < spec.feature_dim; ++d)
            CHECK(std::abs(sums[c][d] / counts[c] - spec.cluster_means[c][d]) <= tol);
    }
}

TEST_CASE("labels are the coarsened fine truth everywhere") {
    const HierarchySpec spec = default_fixture();
    for (const auto& id : {"COARSE", "FINE"}) {
        const auto to_local = fine_to_local(spec, id);
        for (const Sample& s : generate(spec, id, 4, 16, 16, 2))
            for (int px = 0; px < s.labels.pixels(); ++px)
                CHECK(s.labels.v[px] == to_local[s.fine_truth.v[px]]);
    }
}

TEST_CASE("features depend only on the fine truth, never the dataset") {
    // identical content premise: the two datasets of one split disagree only
    // in labels
    const HierarchySpec spec = default_fixture();
    const auto coarse = generate(spec, "COARSE", 3, 16, 16, 1);
    const auto fine = generate(spec, "FINE", 3, 16, 16, 1);
    for (size_t i = 0; i < coarse.size(); ++i) {
        CHECK(coarse[i].features.v == fine[i].features.v);
        CHECK(coarse[i].fine_truth.v == fine[i].fine_truth.v);
        CHECK(coarse[i].labels.v != fine[i].labels.v);
    }
}

TEST_CASE("the fixture unifies to nine classes with the planted relations") {
    const HierarchySpec spec = default_fixture();
    validate_spec(spec);

    const auto taxes = taxonomies(spec);
    REQUIRE(taxes.size() == 2);
    CHECK(unify(taxes).size() == 9);

    const DatasetTaxonomy coarse = taxonomy_of(spec, "COARSE");
    CHECK(coarse.classes.size() == 6);
    CHECK(std::find(coarse.classes.begin(), coarse.classes.end(), "rider") !=
          coarse.classes.end());
    for (const auto& fine_only : {"lane_marking", "motorcyclist", "bicyclist"})
        CHECK(std::find(coarse.classes.begin(), coarse.classes.end(), fine_only) ==
              coarse.classes.end());
    CHECK(taxonomy_of(spec, "FINE").classes == spec.fine_classes);

    const auto planted = planted_relations(spec);
    REQUIRE(planted.size() == 3);
    const std::vector<std::array<std::string, 3>> expect{
        {"FINE", "lane_marking", "road"},
        {"FINE", "motorcyclist", "rider"},
        {"FINE", "bicyclist", "rider"}};
    for (const auto& triple : expect)
        CHECK(std::find(planted.begin(), planted.end(), triple) != planted.end());
}

TEST_CASE("invalid specs and arguments are rejected") {
    const HierarchySpec spec = tiny_spec(0.3);
    CHECK_THROWS_AS(generate(spec, "full", 0, 8, 8, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate(spec, "full", 1, 0, 8, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate(spec, "full", 1, 8, -1, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate(spec, "no_such_dataset", 1, 8, 8, 1), std::invalid_argument);

    SUBCASE("duplicate cluster means") {
        HierarchySpec bad = spec;
        bad.cluster_means[1] = bad.cluster_means[0];
        CHECK_THROWS_AS(validate_spec(bad), std::invalid_argument);
    }
    SUBCASE("mean count must match the class count") {
        HierarchySpec bad = spec;
        bad.cluster_means.pop_back();
        CHECK_THROWS_AS(validate_spec(bad), std::invalid_argument);
    }
    SUBCASE("coarsen keys must be declared fine classes") {
        HierarchySpec bad = spec;
        bad.datasets[0].second["zz"] = "a";
        CHECK_THROWS_AS(validate_spec(bad), std::invalid_argument);
        // target names may be brand new: that is how merged classes are born
        HierarchySpec merged = spec;
        merged.datasets[0].second["a"] = "ghost";
        CHECK_NOTHROW(validate_spec(merged));
    }
    SUBCASE("negative noise") {
        HierarchySpec bad = spec;
        bad.cluster_std = -0.1;
        CHECK_THROWS_AS(validate_spec(bad), std::invalid_argument);
    }
}

TEST_CASE("dataset dumps reload bitwise") {
    const fs::path dir = fs::temp_directory_path() / "uniseg_synth_dump";
    fs::remove_all(dir);

    const HierarchySpec spec = tiny_spec(0.25);
    std::map<std::string, std::vector<Sample>> by_dataset;
    for (const auto& [id, coarsen] : spec.datasets)
        by_dataset[id] = generate(spec, id, 3, 10, 14, 7);
    dump_datasets(dir.string(), spec, by_dataset);

    const DatasetDump dump = load_datasets(dir.string());
    CHECK(dump.spec.fine_classes == spec.fine_classes);
    CHECK(dump.spec.feature_dim == spec.feature_dim);
    CHECK(dump.spec.cluster_means == spec.cluster_means);
    CHECK(dump.spec.cluster_std == spec.cluster_std);
    CHECK(dump.spec.seed == spec.seed);

    REQUIRE(dump.taxonomies.size() == 2);
    for (const auto& tax : dump.taxonomies)
        CHECK(tax.classes == taxonomy_of(spec, tax.dataset_id).classes);

    for (const auto& [id, originals] : by_dataset) {
        REQUIRE(dump.samples.count(id) == 1);
        const auto& loaded = dump.samples.at(id);
        REQUIRE(loaded.size() == originals.size());
        for (size_t i = 0; i < loaded.size(); ++i) CHECK(samples_equal(loaded[i], originals[i]));
    }

    SUBCASE("a missing manifest is a runtime error") {
        CHECK_THROWS_AS(load_datasets((dir / "nowhere").string()), std::runtime_error);
    }
}

TEST_CASE("spec json files round trip") {
    const fs::path dir = fs::temp_directory_path() / "uniseg_synth_spec";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const HierarchySpec spec = default_fixture();
    const std::string path = (dir / "spec.json").string();
    spec_to_json_file(spec, path);
    const HierarchySpec back = spec_from_json_file(path);
    CHECK(back.fine_classes == spec.fine_classes);
    CHECK(back.datasets == spec.datasets);
    CHECK(back.cluster_means == spec.cluster_means);
    CHECK(back.cluster_std == spec.cluster_std);
    CHECK(back.min_rect == spec.min_rect);
    CHECK(back.max_rect == spec.max_rect);
    CHECK(back.seed == spec.seed);

    std::ofstream((dir / "junk.json").string()) << "]{";
    CHECK_THROWS_AS(spec_from_json_file((dir / "junk.json").string()), std::invalid_argument);
}
