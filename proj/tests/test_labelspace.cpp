#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "uniseg/labelspace.hpp"

using namespace uniseg;
namespace fs = std::filesystem;

namespace {

// names c<0..n-1> with an optional prefix for dataset-specific classes
std::vector<std::string> make_names(const std::string& prefix, int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

fs::path temp_dir(const std::string& tag) {
    const fs::path d = fs::temp_directory_path() / ("uniseg_labelspace_" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("unify counts distinct class names across datasets") {
    // Mirror the four road-scene taxonomy sizes 19/19/26/65 whose union has
    // 70 names: two identical 19-class sets, a 26-class superset-ish third
    // (19 shared + 7 new), and a fourth sharing 21 names with 44 new ones.
    const auto base19 = make_names("c", 19);
    auto third = base19;
    for (const auto& n : make_names("n", 7)) third.push_back(n);
    auto fourth = base19;
    fourth.push_back("n0");
    fourth.push_back("n1");
    for (const auto& n : make_names("m", 44)) fourth.push_back(n);
    REQUIRE(fourth.size() == 65);

    const UnifiedLabelSpace space = unify({{"A", base19},
                                           {"B", base19},
                                           {"C", third},
                                           {"D", fourth}});
    CHECK(space.size() == 70);
    CHECK(space.dataset_ids() == std::vector<std::string>{"A", "B", "C", "D"});

    SUBCASE("two identical taxonomies collapse to one set") {
        CHECK(unify({{"A", base19}, {"B", base19}}).size() == 19);
    }

    SUBCASE("a single taxonomy is the identity") {
        const UnifiedLabelSpace one = unify({{"solo", base19}});
        CHECK(one.size() == 19);
        for (int i = 0; i < 19; ++i) {
            CHECK(one.remap("solo")[i] == i);
            CHECK(one.local_index("solo")[i] == i);
            CHECK(one.is_member("solo", i));
        }
    }
}

TEST_CASE("unified indices follow first appearance") {
    const UnifiedLabelSpace space = unify({{"A", {"x", "y"}}, {"B", {"y", "z"}}});
    CHECK(space.classes() == std::vector<std::string>{"x", "y", "z"});
    CHECK(space.index_of("x") == 0);
    CHECK(space.index_of("z") == 2);
    CHECK(!space.index_of("w").has_value());

    CHECK(space.membership("A") == std::vector<uint8_t>{1, 1, 0});
    CHECK(space.membership("B") == std::vector<uint8_t>{0, 1, 1});
    CHECK(space.remap("B") == std::vector<int>{1, 2});
    CHECK(space.local_index("B") == std::vector<int>{-1, 0, 1});
    CHECK(space.has_dataset("A"));
    CHECK(!space.has_dataset("Z"));

    // Permuting classes inside one taxonomy reorders the unified space (and
    // with it every other dataset's remap) but keeps the set of names.
    const UnifiedLabelSpace permuted = unify({{"A", {"y", "x"}}, {"B", {"y", "z"}}});
    CHECK(permuted.classes() == std::vector<std::string>{"y", "x", "z"});
    CHECK(permuted.remap("B") == std::vector<int>{0, 2});
    CHECK(space.remap("B") != permuted.remap("B"));
}

TEST_CASE("unify rejects malformed taxonomy lists") {
    CHECK_THROWS_AS(unify({}), std::invalid_argument);
    CHECK_THROWS_AS(unify({{"A", {}}}), std::invalid_argument);
    CHECK_THROWS_AS(unify({{"A", {"x", "x"}}}), std::invalid_argument);
    CHECK_THROWS_AS(unify({{"A", {"x"}}, {"A", {"y"}}}), std::invalid_argument);
}

TEST_CASE("remap_labels rewrites local indices and keeps the ignore sentinel") {
    // ds1's locals land on unified 5 and 2: six base classes plus a
    // two-class taxonomy listing them in reverse order.
    const UnifiedLabelSpace space =
        unify({{"ds0", {"a", "b", "c", "d", "e", "f"}}, {"ds1", {"f", "c"}}});
    REQUIRE(space.remap("ds1") == std::vector<int>{5, 2});

    LabelMap local(1, 2);
    local.at(0, 0) = 0;
    local.at(0, 1) = 1;
    const LabelMap uni = remap_labels(local, "ds1", space);
    CHECK(uni.at(0, 0) == 5);
    CHECK(uni.at(0, 1) == 2);

    SUBCASE("all-ignore maps pass through unchanged") {
        const LabelMap ignored(3, 3, LabelMap::kIgnore);
        const LabelMap out = remap_labels(ignored, "ds1", space);
        CHECK(out.v == ignored.v);
    }

    SUBCASE("an out-of-range local label is an error") {
        LabelMap bad(1, 1, 2);
        CHECK_THROWS_AS(remap_labels(bad, "ds1", space), std::out_of_range);
        CHECK_THROWS_AS(remap_labels(local, "nope", space), std::invalid_argument);
    }

    SUBCASE("remap then inverse lookup recovers every pixel") {
        std::mt19937_64 rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            LabelMap m(8, 8);
            for (auto& v : m.v) {
                const uint64_t r = rng() % 3;
                v = r == 2 ? LabelMap::kIgnore : static_cast<int32_t>(r);
            }
            const LabelMap uni2 = remap_labels(m, "ds1", space);
            const auto& inverse = space.local_index("ds1");
            for (int px = 0; px < m.pixels(); ++px) {
                if (m.v[px] == LabelMap::kIgnore) {
                    CHECK(uni2.v[px] == LabelMap::kIgnore);
                } else {
                    CHECK(inverse[uni2.v[px]] == m.v[px]);
                }
            }
        }
    }
}

TEST_CASE("remap_labels keeps distinct locals distinct") {
    const UnifiedLabelSpace space = unify({{"A", {"p", "q", "r"}}, {"B", {"r", "q", "s"}}});
    for (const auto& id : {"A", "B"}) {
        const auto& table = space.remap(id);
        std::set<int> seen(table.begin(), table.end());
        CHECK(seen.size() == table.size());
    }
}

TEST_CASE("eval_projection intersects by name in test order") {
    const UnifiedLabelSpace space = unify({{"train", {"road", "rider", "motorcyclist"}}});

    const auto proj = eval_projection(space, {"test", {"road", "rider"}});
    REQUIRE(proj.size() == 2);
    CHECK(proj[0] == std::pair<int, int>{0, 0});
    CHECK(proj[1] == std::pair<int, int>{1, 1});

    CHECK(eval_projection(space, {"test", {"boat", "sky"}}).empty());

    // Test classes follow taxonomy order even when it disagrees with the
    // trained space's order.
    const auto reversed = eval_projection(space, {"test", {"rider", "road"}});
    REQUIRE(reversed.size() == 2);
    CHECK(reversed[0] == std::pair<int, int>{1, 0});
    CHECK(reversed[1] == std::pair<int, int>{0, 1});

    SUBCASE("growing the test taxonomy only ever adds pairs") {
        const DatasetTaxonomy small{"t", {"rider", "boat"}};
        const DatasetTaxonomy big{"t", {"rider", "boat", "road"}};
        const auto a = eval_projection(space, small);
        const auto b = eval_projection(space, big);
        for (const auto& pair : a)
            CHECK(std::find_if(b.begin(), b.end(), [&](const auto& q) {
                      return q.first == pair.first;
                  }) != b.end());
        CHECK(a.size() <= b.size());
    }

    SUBCASE("a full-coverage test taxonomy projects every class") {
        CHECK(eval_projection(space, {"t", {"road", "rider", "motorcyclist"}}).size() == 3);
    }
}

TEST_CASE("taxonomy json files round trip") {
    const fs::path dir = temp_dir("json");
    const DatasetTaxonomy tax{"COARSE", {"road", "sidewalk", "rider"}};
    const std::string path = (dir / "tax.json").string();
    save_taxonomy_json(tax, path);
    const DatasetTaxonomy back = load_taxonomy_json(path);
    CHECK(back.dataset_id == tax.dataset_id);
    CHECK(back.classes == tax.classes);

    CHECK_THROWS_AS(load_taxonomy_json((dir / "missing.json").string()), std::runtime_error);

    std::ofstream((dir / "junk.json").string()) << "{not json";
    CHECK_THROWS_AS(load_taxonomy_json((dir / "junk.json").string()), std::runtime_error);
}

TEST_CASE("remap csv lists every dataset class against its unified index") {
    const fs::path dir = temp_dir("csv");
    const std::vector<DatasetTaxonomy> taxes{{"A", {"x", "y"}}, {"B", {"y", "z"}}};
    const UnifiedLabelSpace space = unify(taxes);
    const std::string path = (dir / "remap.csv").string();
    export_remap_csv(space, taxes, path);

    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "dataset_id,local_index,class,unified_index");
    CHECK(lines[1] == "A,0,x,0");
    CHECK(lines[2] == "A,1,y,1");
    CHECK(lines[3] == "B,0,y,1");
    CHECK(lines[4] == "B,1,z,2");
}
