#include "uniseg/labelspace.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace uniseg {

std::optional<int> UnifiedLabelSpace::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const UnifiedLabelSpace::PerDataset& UnifiedLabelSpace::dataset(
    const std::string& dataset_id) const {
    auto it = per_dataset_.find(dataset_id);
    if (it == per_dataset_.end())
        throw std::invalid_argument("unknown dataset id: " + dataset_id);
    return it->second;
}

bool UnifiedLabelSpace::is_member(const std::string& dataset_id, int unified_idx) const {
    const auto& d = dataset(dataset_id);
    if (unified_idx < 0 || unified_idx >= size())
        throw std::out_of_range("unified index out of range");
    return d.member[unified_idx] != 0;
}

const std::vector<uint8_t>& UnifiedLabelSpace::membership(const std::string& dataset_id) const {
    return dataset(dataset_id).member;
}

const std::vector<int>& UnifiedLabelSpace::remap(const std::string& dataset_id) const {
    return dataset(dataset_id).local_to_uni;
}

const std::vector<int>& UnifiedLabelSpace::local_index(const std::string& dataset_id) const {
    return dataset(dataset_id).uni_to_local;
}

bool UnifiedLabelSpace::has_dataset(const std::string& dataset_id) const {
    return per_dataset_.count(dataset_id) != 0;
}

UnifiedLabelSpace unify(const std::vector<DatasetTaxonomy>& taxonomies) {
    if (taxonomies.empty())
        throw std::invalid_argument("unify: no taxonomies given");

    UnifiedLabelSpace space;
    std::set<std::string> ids;
    for (const auto& tax : taxonomies) {
        if (tax.classes.empty())
            throw std::invalid_argument("unify: taxonomy '" + tax.dataset_id + "' is empty");
        if (!ids.insert(tax.dataset_id).second)
            throw std::invalid_argument("unify: duplicate dataset id '" + tax.dataset_id + "'");
        std::set<std::string> seen(tax.classes.begin(), tax.classes.end());
        if (seen.size() != tax.classes.size())
            throw std::invalid_argument("unify: duplicate class name in '" + tax.dataset_id + "'");

        space.dataset_ids_.push_back(tax.dataset_id);
        for (const auto& name : tax.classes) {
            if (!space.index_.count(name)) {
                space.index_[name] = static_cast<int>(space.classes_.size());
                space.classes_.push_back(name);
            }
        }
    }

    const int k_u = space.size();
    for (const auto& tax : taxonomies) {
        UnifiedLabelSpace::PerDataset d;
        d.member.assign(k_u, 0);
        d.uni_to_local.assign(k_u, -1);
        d.local_to_uni.reserve(tax.classes.size());
        for (size_t local = 0; local < tax.classes.size(); ++local) {
            int uni = space.index_.at(tax.classes[local]);
            d.local_to_uni.push_back(uni);
            d.member[uni] = 1;
            d.uni_to_local[uni] = static_cast<int>(local);
        }
        space.per_dataset_[tax.dataset_id] = std::move(d);
    }
    return space;
}

LabelMap remap_labels(const LabelMap& local, const std::string& dataset_id,
                      const UnifiedLabelSpace& space) {
    const auto& map = space.remap(dataset_id);
    LabelMap out(local.h, local.w);
    for (size_t i = 0; i < local.v.size(); ++i) {
        int32_t lab = local.v[i];
        if (lab == LabelMap::kIgnore) {
            out.v[i] = LabelMap::kIgnore;
            continue;
        }
        if (lab < 0 || lab >= static_cast<int32_t>(map.size()))
            throw std::out_of_range("remap_labels: local label " + std::to_string(lab) +
                                    " outside taxonomy of '" + dataset_id + "'");
        out.v[i] = map[lab];
    }
    return out;
}

std::vector<std::pair<int, int>> eval_projection(const UnifiedLabelSpace& space,
                                                 const DatasetTaxonomy& test_taxonomy) {
    std::vector<std::pair<int, int>> proj;
    for (size_t local = 0; local < test_taxonomy.classes.size(); ++local) {
        if (auto uni = space.index_of(test_taxonomy.classes[local]))
            proj.emplace_back(*uni, static_cast<int>(local));
    }
    return proj;
}

DatasetTaxonomy load_taxonomy_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open taxonomy file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("taxonomy parse error in " + path + ": " + e.what());
    }
    DatasetTaxonomy tax;
    tax.dataset_id = j.at("dataset_id").get<std::string>();
    tax.classes = j.at("classes").get<std::vector<std::string>>();
    return tax;
}

void save_taxonomy_json(const DatasetTaxonomy& tax, const std::string& path) {
    nlohmann::json j;
    j["dataset_id"] = tax.dataset_id;
    j["classes"] = tax.classes;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write taxonomy file: " + path);
    out << j.dump(2) << "\n";
}

void export_remap_csv(const UnifiedLabelSpace& space,
                      const std::vector<DatasetTaxonomy>& taxonomies,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write remap csv: " + path);
    out << "dataset_id,local_index,class,unified_index\n";
    for (const auto& tax : taxonomies) {
        const auto& map = space.remap(tax.dataset_id);
        for (size_t local = 0; local < tax.classes.size(); ++local)
            out << tax.dataset_id << "," << local << "," << tax.classes[local] << ","
                << map[local] << "\n";
    }
}

}  // namespace uniseg
