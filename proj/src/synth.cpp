#include "uniseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;

namespace uniseg {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deliberately independent of the dataset: every dataset sees the same scenes
// and only the annotation policy differs.
uint64_t image_seed(const HierarchySpec& spec, uint64_t split_seed, int index) {
    uint64_t s = splitmix64(spec.seed);
    s = splitmix64(s ^ split_seed);
    return splitmix64(s ^ static_cast<uint64_t>(index));
}

const std::map<std::string, std::string>& coarsen_map(const HierarchySpec& spec,
                                                      const std::string& dataset_id) {
    for (const auto& [id, map] : spec.datasets)
        if (id == dataset_id) return map;
    throw std::invalid_argument("unknown dataset id: " + dataset_id);
}

std::string local_name(const std::map<std::string, std::string>& coarsen,
                       const std::string& fine) {
    auto it = coarsen.find(fine);
    return it == coarsen.end() ? fine : it->second;
}

struct Rect {
    int y0, x0, h, w;
};

// Recursive binary splits until both sides of every leaf fit max_rect; split
// positions keep both halves at least min_rect wide. Explicit stack keeps the
// rng draw order fixed.
void tile_rectangles(LabelMap& fine, int n_classes, int min_rect, int max_rect,
                     std::mt19937_64& rng) {
    std::vector<Rect> stack{{0, 0, fine.h, fine.w}};
    while (!stack.empty()) {
        Rect r = stack.back();
        stack.pop_back();
        bool split_h = r.h > max_rect && r.h >= 2 * min_rect;
        bool split_w = r.w > max_rect && r.w >= 2 * min_rect;
        if (split_h || split_w) {
            bool along_h = split_h && (!split_w || r.h >= r.w);
            int len = along_h ? r.h : r.w;
            std::uniform_int_distribution<int> pos(min_rect, len - min_rect);
            int cut = pos(rng);
            Rect a = r, b = r;
            if (along_h) {
                a.h = cut;
                b.y0 = r.y0 + cut;
                b.h = r.h - cut;
            } else {
                a.w = cut;
                b.x0 = r.x0 + cut;
                b.w = r.w - cut;
            }
            stack.push_back(b);
            stack.push_back(a);
            continue;
        }
        std::uniform_int_distribution<int> cls(0, n_classes - 1);
        int c = cls(rng);
        for (int y = r.y0; y < r.y0 + r.h; ++y)
            for (int x = r.x0; x < r.x0 + r.w; ++x) fine.at(y, x) = c;
    }
}

}  // namespace

void validate_spec(const HierarchySpec& spec) {
    if (spec.fine_classes.empty()) throw std::invalid_argument("spec: no fine classes");
    std::set<std::string> fine(spec.fine_classes.begin(), spec.fine_classes.end());
    if (fine.size() != spec.fine_classes.size())
        throw std::invalid_argument("spec: duplicate fine class");
    if (spec.datasets.empty()) throw std::invalid_argument("spec: no datasets");
    std::set<std::string> ids;
    for (const auto& [id, map] : spec.datasets) {
        if (!ids.insert(id).second)
            throw std::invalid_argument("spec: duplicate dataset id '" + id + "'");
        for (const auto& [k, v] : map) {
            if (!fine.count(k))
                throw std::invalid_argument("spec: coarsen key '" + k + "' is not a fine class");
            (void)v;
        }
    }
    if (spec.feature_dim <= 0) throw std::invalid_argument("spec: feature_dim must be positive");
    if (spec.cluster_means.size() != spec.fine_classes.size())
        throw std::invalid_argument("spec: need one cluster mean per fine class");
    for (const auto& m : spec.cluster_means)
        if (static_cast<int>(m.size()) != spec.feature_dim)
            throw std::invalid_argument("spec: cluster mean dimension mismatch");
    for (size_t i = 0; i < spec.cluster_means.size(); ++i)
        for (size_t j = i + 1; j < spec.cluster_means.size(); ++j)
            if (spec.cluster_means[i] == spec.cluster_means[j])
                throw std::invalid_argument("spec: cluster means must be pairwise distinct");
    if (spec.cluster_std < 0.0) throw std::invalid_argument("spec: cluster_std must be >= 0");
    if (spec.min_rect < 1 || spec.max_rect < spec.min_rect)
        throw std::invalid_argument("spec: bad rectangle bounds");
}

DatasetTaxonomy taxonomy_of(const HierarchySpec& spec, const std::string& dataset_id) {
    const auto& map = coarsen_map(spec, dataset_id);
    DatasetTaxonomy tax;
    tax.dataset_id = dataset_id;
    std::set<std::string> seen;
    for (const auto& fine : spec.fine_classes) {
        std::string name = local_name(map, fine);
        if (seen.insert(name).second) tax.classes.push_back(name);
    }
    return tax;
}

std::vector<DatasetTaxonomy> taxonomies(const HierarchySpec& spec) {
    std::vector<DatasetTaxonomy> out;
    out.reserve(spec.datasets.size());
    for (const auto& [id, _] : spec.datasets) out.push_back(taxonomy_of(spec, id));
    return out;
}

std::vector<int> fine_to_local(const HierarchySpec& spec, const std::string& dataset_id) {
    const auto& map = coarsen_map(spec, dataset_id);
    DatasetTaxonomy tax = taxonomy_of(spec, dataset_id);
    std::vector<int> out;
    out.reserve(spec.fine_classes.size());
    for (const auto& fine : spec.fine_classes) {
        std::string name = local_name(map, fine);
        auto it = std::find(tax.classes.begin(), tax.classes.end(), name);
        out.push_back(static_cast<int>(it - tax.classes.begin()));
    }
    return out;
}

std::vector<Sample> generate(const HierarchySpec& spec, const std::string& dataset_id, int n,
                             int h, int w, uint64_t split_seed) {
    validate_spec(spec);
    if (n <= 0) throw std::invalid_argument("generate: n must be positive");
    if (h <= 0 || w <= 0) throw std::invalid_argument("generate: image size must be positive");
    std::vector<int> to_local = fine_to_local(spec, dataset_id);
    const int n_fine = static_cast<int>(spec.fine_classes.size());

    std::vector<Sample> out;
    out.reserve(n);
    for (int idx = 0; idx < n; ++idx) {
        std::mt19937_64 rng(image_seed(spec, split_seed, idx));
        Sample s;
        s.dataset_id = dataset_id;
        s.fine_truth = LabelMap(h, w);
        tile_rectangles(s.fine_truth, n_fine, spec.min_rect, spec.max_rect, rng);

        s.labels = LabelMap(h, w);
        for (int px = 0; px < h * w; ++px) s.labels.v[px] = to_local[s.fine_truth.v[px]];

        s.features = Grid3(h, w, spec.feature_dim);
        if (spec.cluster_std == 0.0) {
            for (int px = 0; px < h * w; ++px) {
                const auto& mean = spec.cluster_means[s.fine_truth.v[px]];
                for (int d = 0; d < spec.feature_dim; ++d)
                    s.features.v[static_cast<size_t>(px) * spec.feature_dim + d] = mean[d];
            }
        } else {
            std::normal_distribution<double> noise(0.0, spec.cluster_std);
            for (int px = 0; px < h * w; ++px) {
                const auto& mean = spec.cluster_means[s.fine_truth.v[px]];
                for (int d = 0; d < spec.feature_dim; ++d)
                    s.features.v[static_cast<size_t>(px) * spec.feature_dim + d] =
                        mean[d] + noise(rng);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

HierarchySpec default_fixture() {
    HierarchySpec spec;
    spec.fine_classes = {"road",    "lane_marking", "sidewalk",  "building",
                         "vehicle", "motorcyclist", "bicyclist", "background"};
    spec.datasets = {
        {"COARSE",
         {{"lane_marking", "road"}, {"motorcyclist", "rider"}, {"bicyclist", "rider"}}},
        {"FINE", {}},
    };
    spec.feature_dim = 4;
    // road/lane_marking sit 0.4 sigma apart (all but inseparable); the two
    // rider kinds sit 2.4 sigma apart (confusable); everything else is far.
    spec.cluster_means = {
        {3.0, 0.0, 0.0, 0.0},   // road
        {3.0, 0.0, 0.0, 0.2},   // lane_marking
        {-3.0, 0.0, 0.0, 0.0},  // sidewalk
        {0.0, 3.0, 0.0, 0.0},   // building
        {0.0, -3.0, 0.0, 0.0},  // vehicle
        {0.0, 0.0, 3.0, 0.0},   // motorcyclist
        {0.0, 0.0, 3.0, 1.8},   // bicyclist
        {0.0, 0.0, -3.0, 0.0},  // background
    };
    spec.cluster_std = 0.5;
    spec.min_rect = 4;
    spec.max_rect = 12;
    spec.seed = 1234;
    return spec;
}

std::vector<std::array<std::string, 3>> planted_relations(const HierarchySpec& spec) {
    std::vector<std::array<std::string, 3>> out;
    for (const auto& fine : spec.fine_classes) {
        for (const auto& [keep_id, keep_map] : spec.datasets) {
            if (local_name(keep_map, fine) != fine) continue;
            std::set<std::string> targets;
            for (const auto& [other_id, other_map] : spec.datasets) {
                if (other_id == keep_id) continue;
                std::string merged = local_name(other_map, fine);
                if (merged != fine && targets.insert(merged).second)
                    out.push_back({keep_id, fine, merged});
            }
        }
    }
    return out;
}

namespace {

template <typename T>
void write_bin(const fs::path& path, const std::vector<T>& v) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_bin(const fs::path& path, size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<T> v(count);
    in.read(reinterpret_cast<char*>(v.data()), count * sizeof(T));
    if (static_cast<size_t>(in.gcount()) != count * sizeof(T))
        throw std::runtime_error("truncated array file " + path.string());
    return v;
}

nlohmann::json spec_to_json(const HierarchySpec& spec) {
    nlohmann::json j;
    j["fine_classes"] = spec.fine_classes;
    nlohmann::json ds = nlohmann::json::array();
    for (const auto& [id, map] : spec.datasets)
        ds.push_back({{"id", id}, {"coarsen", map}});
    j["datasets"] = ds;
    j["feature_dim"] = spec.feature_dim;
    j["cluster_means"] = spec.cluster_means;
    j["cluster_std"] = spec.cluster_std;
    j["min_rect"] = spec.min_rect;
    j["max_rect"] = spec.max_rect;
    j["seed"] = spec.seed;
    return j;
}

HierarchySpec spec_from_json(const nlohmann::json& j) {
    HierarchySpec spec;
    spec.fine_classes = j.at("fine_classes").get<std::vector<std::string>>();
    for (const auto& d : j.at("datasets")) {
        std::map<std::string, std::string> coarsen;
        if (d.contains("coarsen"))
            coarsen = d.at("coarsen").get<std::map<std::string, std::string>>();
        spec.datasets.emplace_back(d.at("id").get<std::string>(), std::move(coarsen));
    }
    spec.feature_dim = j.at("feature_dim").get<int>();
    spec.cluster_means = j.at("cluster_means").get<std::vector<std::vector<double>>>();
    spec.cluster_std = j.at("cluster_std").get<double>();
    spec.min_rect = j.value("min_rect", 4);
    spec.max_rect = j.value("max_rect", 12);
    spec.seed = j.value("seed", uint64_t{0});
    validate_spec(spec);
    return spec;
}

}  // namespace

void dump_datasets(const std::string& dir, const HierarchySpec& spec,
                   const std::map<std::string, std::vector<Sample>>& by_dataset) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["spec"] = spec_to_json(spec);
    manifest["dtype"] = {{"features", "float64_le"}, {"labels", "int32_le"}};
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& [id, samples] : by_dataset) {
        if (samples.empty()) throw std::invalid_argument("dump: empty sample list for " + id);
        DatasetTaxonomy tax = taxonomy_of(spec, id);
        nlohmann::json d;
        d["dataset_id"] = id;
        d["classes"] = tax.classes;
        d["h"] = samples[0].features.h;
        d["w"] = samples[0].features.w;
        d["feature_dim"] = samples[0].features.c;
        nlohmann::json rows = nlohmann::json::array();
        for (size_t i = 0; i < samples.size(); ++i) {
            const Sample& s = samples[i];
            char tag[64];
            std::snprintf(tag, sizeof(tag), "%s_%04zu", id.c_str(), i);
            std::string feat = std::string(tag) + ".feat.bin";
            std::string lab = std::string(tag) + ".lab.bin";
            std::string fine = std::string(tag) + ".fine.bin";
            write_bin(fs::path(dir) / feat, s.features.v);
            write_bin(fs::path(dir) / lab, s.labels.v);
            write_bin(fs::path(dir) / fine, s.fine_truth.v);
            rows.push_back({{"features", feat}, {"labels", lab}, {"fine", fine}});
        }
        d["samples"] = rows;
        datasets.push_back(d);
    }
    manifest["datasets"] = datasets;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

DatasetDump load_datasets(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("cannot open manifest in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("manifest parse error: ") + e.what());
    }
    if (manifest.value("format_version", 0) != 1)
        throw std::runtime_error("unsupported dataset dump version");

    DatasetDump dump;
    try {
        dump.spec = spec_from_json(manifest.at("spec"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("manifest spec error: ") + e.what());
    }
    for (const auto& d : manifest.at("datasets")) {
        DatasetTaxonomy tax;
        tax.dataset_id = d.at("dataset_id").get<std::string>();
        tax.classes = d.at("classes").get<std::vector<std::string>>();
        dump.taxonomies.push_back(tax);

        int h = d.at("h").get<int>();
        int w = d.at("w").get<int>();
        int f = d.at("feature_dim").get<int>();
        std::vector<Sample>& samples = dump.samples[tax.dataset_id];
        for (const auto& row : d.at("samples")) {
            Sample s;
            s.dataset_id = tax.dataset_id;
            s.features = Grid3(h, w, f);
            s.features.v = read_bin<double>(
                fs::path(dir) / row.at("features").get<std::string>(), s.features.size());
            s.labels = LabelMap(h, w);
            s.labels.v = read_bin<int32_t>(fs::path(dir) / row.at("labels").get<std::string>(),
                                           static_cast<size_t>(h) * w);
            s.fine_truth = LabelMap(h, w);
            s.fine_truth.v = read_bin<int32_t>(fs::path(dir) / row.at("fine").get<std::string>(),
                                               static_cast<size_t>(h) * w);
            samples.push_back(std::move(s));
        }
    }
    return dump;
}

HierarchySpec spec_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open spec file: " + path);
    nlohmann::json j;
    try {
        in >> j;
        return spec_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("spec parse error in " + path + ": " + e.what());
    }
}

void spec_to_json_file(const HierarchySpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write spec file: " + path);
    out << spec_to_json(spec).dump(2) << "\n";
}

}  // namespace uniseg
