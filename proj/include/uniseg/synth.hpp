#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uniseg/grid.hpp"
#include "uniseg/labelspace.hpp"

namespace uniseg {

// Generator description for a family of datasets that share one fine-grained
// class set but label it at different granularities. Every dataset sees the
// same feature distribution conditioned on the fine class; only the label
// maps differ. That is the "identical scene, conflicting labels" premise the
// losses are probed with.
struct HierarchySpec {
    std::vector<std::string> fine_classes;
    // Ordered (dataset_id, fine name -> local name). Names absent from a map
    // pass through unchanged.
    std::vector<std::pair<std::string, std::map<std::string, std::string>>> datasets;
    int feature_dim = 0;
    std::vector<std::vector<double>> cluster_means;  // one per fine class
    double cluster_std = 0.0;
    int min_rect = 4;   // rectangle tiling bounds, pixels
    int max_rect = 12;
    uint64_t seed = 0;
};

// One generated image: per-pixel features, dataset-local labels, and the
// fine-grained truth kept aside for diagnostics.
struct Sample {
    std::string dataset_id;
    Grid3 features;
    LabelMap labels;      // dataset-local indices
    LabelMap fine_truth;  // indices into HierarchySpec::fine_classes
};

// Validates counts, distinct means, non-negative std and closed coarsen maps.
void validate_spec(const HierarchySpec& spec);

// Dataset-local taxonomy induced by the coarsen map: local classes appear in
// the order their first fine source appears.
DatasetTaxonomy taxonomy_of(const HierarchySpec& spec, const std::string& dataset_id);
std::vector<DatasetTaxonomy> taxonomies(const HierarchySpec& spec);

// index of `dataset_id`'s local class that each fine class collapses to
std::vector<int> fine_to_local(const HierarchySpec& spec, const std::string& dataset_id);

// n images of h*w pixels: random rectangle tiling over fine classes, Gaussian
// features around the fine-class means, labels coarsened per the dataset map.
// Deterministic in (spec.seed, dataset_id, split_seed, image index); images
// are independent of n, so growing a split keeps earlier samples identical.
std::vector<Sample> generate(const HierarchySpec& spec, const std::string& dataset_id, int n,
                             int h, int w, uint64_t split_seed);

// The pinned two-dataset benchmark: eight fine classes; dataset COARSE merges
// lane_marking into road and both rider kinds into rider, dataset FINE keeps
// everything. Unified size is 9. Planted relations (fine class -> coarse
// class of the other dataset): lane_marking->road, motorcyclist->rider,
// bicyclist->rider. Cluster geometry keeps road/lane_marking nearly
// inseparable and motorcyclist/bicyclist close, which is what makes the
// merged channels informative and the fine channels imperfect.
HierarchySpec default_fixture();

// The planted (dataset_id, primary, secondary) triples of a spec: pairs of
// fine classes that some other dataset collapses into one local class.
std::vector<std::array<std::string, 3>> planted_relations(const HierarchySpec& spec);

// Directory dump: manifest.json plus row-major little-endian arrays
// (features float64, labels/fine int32) per sample.
void dump_datasets(const std::string& dir, const HierarchySpec& spec,
                   const std::map<std::string, std::vector<Sample>>& by_dataset);

struct DatasetDump {
    HierarchySpec spec;
    std::vector<DatasetTaxonomy> taxonomies;
    std::map<std::string, std::vector<Sample>> samples;
};
DatasetDump load_datasets(const std::string& dir);

// HierarchySpec JSON round trip ("fixture": "default" shortcut handled by
// callers).
HierarchySpec spec_from_json_file(const std::string& path);
void spec_to_json_file(const HierarchySpec& spec, const std::string& path);

}  // namespace uniseg
