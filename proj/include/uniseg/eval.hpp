#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uniseg/grid.hpp"
#include "uniseg/labelspace.hpp"
#include "uniseg/model.hpp"
#include "uniseg/synth.hpp"

namespace uniseg {

// Square count matrix over a test label space: rows are ground truth classes,
// columns are predicted classes.
struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts;

    explicit ConfusionMatrix(int k_classes) : k(k_classes) {
        if (k_classes < 1) throw std::invalid_argument("confusion matrix needs classes");
        counts.assign(static_cast<size_t>(k) * k, 0);
    }

    long long& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * k + pred]; }
    long long at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * k + pred]; }

    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }
};

// Argmax over the projected unified channels, reported as test-local indices.
// Exact score ties resolve to the lowest unified channel index.
LabelMap predict(const SegModel& model, const Grid3& features,
                 const std::vector<std::pair<int, int>>& projection);

// Adds one image: cm[gt][pred] += 1 for every pixel whose ground truth is not
// kIgnore. Out-of-range values on either side are an error.
void accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

// Per-class intersection over union. Classes that never occur on either side
// have an empty denominator and come back as NaN.
std::vector<double> per_class_iou(const ConfusionMatrix& cm);

// Mean over the defined per-class IoUs; throws "no evaluable classes" when
// every denominator is zero.
double mean_iou(const ConfusionMatrix& cm);

// Predicts every sample through the name-intersection projection of the test
// taxonomy into the trained space and accumulates one matrix over the full
// test label space. Test classes missing from the trained space can never be
// predicted; their ground truth pixels still count as misses.
ConfusionMatrix evaluate(const SegModel& model, const std::vector<Sample>& test_set,
                         const DatasetTaxonomy& test_taxonomy, const UnifiedLabelSpace& space);

enum class ScoreKind { kSigmoid, kSoftmax };

// Per-pixel prediction for a model queried outside one dataset's own label
// set. primary holds the best member channel; where the best non-member
// channel reaches the threshold, override_class records it (and final_map
// reports it instead of the primary). Unified indices throughout.
struct MultiLabelPrediction {
    LabelMap primary;
    LabelMap override_class;  // -1 where no override fired
    Grid3 override_score;     // h x w x 1, 0 where no override fired
    double threshold = 0.0;

    MultiLabelPrediction(int h, int w)
        : primary(h, w), override_class(h, w), override_score(h, w, 1) {}

    LabelMap final_map() const;
};

// Sigmoid scores each channel independently (BCE-trained models); softmax
// normalises across all unified channels (CE-trained models). Ties resolve to
// the lowest unified index. The dataset must leave at least one channel
// outside its membership, and the threshold must lie in (0, 1).
MultiLabelPrediction multilabel_predict(const SegModel& model, const Grid3& features,
                                        const UnifiedLabelSpace& space,
                                        const std::string& dataset_id, ScoreKind score,
                                        double threshold);

}  // namespace uniseg
