#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uniseg/grid.hpp"

namespace uniseg {

// One dataset's class list. Class identity across datasets is exact string
// equality of names; local indices follow the listed order.
struct DatasetTaxonomy {
    std::string dataset_id;
    std::vector<std::string> classes;
};

// Union of several dataset taxonomies. Unified indices are assigned by first
// appearance: datasets in registration order, classes in local order.
class UnifiedLabelSpace {
  public:
    UnifiedLabelSpace() = default;

    int size() const { return static_cast<int>(classes_.size()); }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<std::string>& dataset_ids() const { return dataset_ids_; }

    // Unified index of a class name, or nullopt if absent.
    std::optional<int> index_of(const std::string& name) const;

    // True when the unified class `unified_idx` belongs to the dataset's space.
    bool is_member(const std::string& dataset_id, int unified_idx) const;

    // Membership flags over unified channels for one dataset.
    const std::vector<uint8_t>& membership(const std::string& dataset_id) const;

    // local index -> unified index for one dataset.
    const std::vector<int>& remap(const std::string& dataset_id) const;

    // unified index -> local index (or -1 when the class is not in the
    // dataset's space).
    const std::vector<int>& local_index(const std::string& dataset_id) const;

    bool has_dataset(const std::string& dataset_id) const;

    friend UnifiedLabelSpace unify(const std::vector<DatasetTaxonomy>& taxonomies);

  private:
    struct PerDataset {
        std::vector<uint8_t> member;    // size K_u
        std::vector<int> local_to_uni;  // size K_i
        std::vector<int> uni_to_local;  // size K_u, -1 outside the space
    };

    const PerDataset& dataset(const std::string& dataset_id) const;

    std::vector<std::string> classes_;
    std::vector<std::string> dataset_ids_;
    std::map<std::string, int> index_;
    std::map<std::string, PerDataset> per_dataset_;
};

// Builds the unified space. Throws std::invalid_argument on an empty taxonomy
// list, an empty class list, duplicate class names within one taxonomy, or
// duplicate dataset ids.
UnifiedLabelSpace unify(const std::vector<DatasetTaxonomy>& taxonomies);

// Rewrites dataset-local labels into unified indices. kIgnore passes through
// unchanged; any other out-of-range local label throws std::out_of_range.
LabelMap remap_labels(const LabelMap& local, const std::string& dataset_id,
                      const UnifiedLabelSpace& space);

// Channel selection for cross-dataset evaluation: pairs of
// (unified channel, test-local index) for every test class present in the
// trained space, in test-taxonomy order. Classes absent from the trained
// space are skipped.
std::vector<std::pair<int, int>> eval_projection(const UnifiedLabelSpace& space,
                                                 const DatasetTaxonomy& test_taxonomy);

// {"dataset_id": ..., "classes": [...]} round trip.
DatasetTaxonomy load_taxonomy_json(const std::string& path);
void save_taxonomy_json(const DatasetTaxonomy& tax, const std::string& path);

// CSV with header dataset_id,local_index,class,unified_index covering every
// dataset registered in the space.
void export_remap_csv(const UnifiedLabelSpace& space,
                      const std::vector<DatasetTaxonomy>& taxonomies,
                      const std::string& path);

}  // namespace uniseg
