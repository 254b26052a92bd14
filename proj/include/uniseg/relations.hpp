#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uniseg/labelspace.hpp"
#include "uniseg/losses.hpp"
#include "uniseg/model.hpp"
#include "uniseg/synth.hpp"

namespace uniseg {

// Mean sigmoid activation of every unified channel over the pixels of one
// dataset-local class. Rows with no labeled pixels stay undefined.
struct SimilarityRow {
    bool defined = false;
    long long count = 0;       // pixels with this ground-truth class
    std::vector<double> s;     // k_u mean scores
};

struct SimilarityTensor {
    int k_u = 0;
    // dataset id -> one row per dataset-local class
    std::map<std::string, std::vector<SimilarityRow>> rows;
};

// Runs the model over every sample and averages sigmoid(logit) per
// (dataset, ground-truth local class, unified channel). The relation pipeline
// feeds this a cosine-head model so scores are sigmoid(t * cos). Samples
// carry dataset-local labels.
SimilarityTensor compute_similarity(const SegModel& model,
                                    const std::map<std::string, std::vector<Sample>>& samples,
                                    const UnifiedLabelSpace& space);

// Threshold for promoting a similarity into a multi-label. Only channels
// supervised by some dataset present in the tensor count as candidates:
// channels nobody in the pool trains hold untrained-prototype noise, so a
// single-dataset pool can never suspect a conflict. Returns nullopt when no
// class's top-scoring candidate falls outside its own dataset's space;
// otherwise the mean over all defined (dataset, class) rows of their best
// out-of-space candidate score. Ties in the argmax break toward the lowest
// channel index.
std::optional<double> auto_tau(const SimilarityTensor& sim, const UnifiedLabelSpace& space);

// The (dataset_id, class name) pairs whose strongest channel lies outside
// their own dataset's space; a non-empty list is what switches auto_tau on.
std::vector<std::pair<std::string, std::string>> tau_contributors(
    const SimilarityTensor& sim, const UnifiedLabelSpace& space,
    const std::vector<DatasetTaxonomy>& taxonomies);

// (dataset, local class) -> activated unified channels, self always included.
// A secondary channel c' is activated when it is covered by the pool and
// s(c') > max(tau, s(self)); with tau absent the table is self-only and the
// downstream loss reduces to the null-variant BCE.
struct MultiLabelTable {
    int k_u = 0;
    std::map<std::string, std::vector<std::vector<int>>> rows;  // sorted unified indices
    std::vector<std::string> warnings;  // classes skipped for having no pixels

    bool self_only(const UnifiedLabelSpace& space) const;
};

MultiLabelTable generate_multilabels(const SimilarityTensor& sim, std::optional<double> tau,
                                     const UnifiedLabelSpace& space);

// Rebuilds a table from exported (dataset, primary, secondary) triples: every
// local class of every registered dataset gets its self entry, plus the
// listed secondaries. Unknown names throw.
MultiLabelTable table_from_triples(const std::vector<std::array<std::string, 3>>& triples,
                                   const UnifiedLabelSpace& space,
                                   const std::vector<DatasetTaxonomy>& taxonomies);

// Expands per-pixel dataset-local labels into tri-state channel targets:
// activated channels positive, remaining member channels negative, remaining
// out-of-space channels null. Ignored pixels are masked out.
TriStateLabelMap expand_pixel_labels(const LabelMap& local_labels, const std::string& dataset_id,
                                     const MultiLabelTable& table, const UnifiedLabelSpace& space);

// dataset_id,class,unified_class,score,count rows for every defined pair.
void export_similarity_csv(const SimilarityTensor& sim, const UnifiedLabelSpace& space,
                           const std::vector<DatasetTaxonomy>& taxonomies,
                           const std::string& path);

// dataset_id,primary_class,secondary_class rows for non-self activations.
void export_multilabel_csv(const MultiLabelTable& table, const UnifiedLabelSpace& space,
                           const std::vector<DatasetTaxonomy>& taxonomies,
                           const std::string& path);

// Non-self activations as (dataset_id, primary class, secondary class) rows,
// the same content the CSV export writes.
std::vector<std::array<std::string, 3>> relation_triples(
    const MultiLabelTable& table, const UnifiedLabelSpace& space,
    const std::vector<DatasetTaxonomy>& taxonomies);

}  // namespace uniseg
