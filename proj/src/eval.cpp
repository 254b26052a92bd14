#include "uniseg/eval.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "uniseg/losses.hpp"

namespace uniseg {

LabelMap predict(const SegModel& model, const Grid3& features,
                 const std::vector<std::pair<int, int>>& projection) {
    if (projection.empty()) throw std::invalid_argument("empty evaluation projection");
    const Grid3 logits = forward(model, features);
    for (const auto& [uni, local] : projection) {
        (void)local;
        if (uni < 0 || uni >= logits.c)
            throw std::invalid_argument("projection points outside the model's channels");
    }

    LabelMap out(features.h, features.w);
    for (int y = 0; y < features.h; ++y)
        for (int x = 0; x < features.w; ++x) {
            size_t best = 0;
            double best_score = logits.at(y, x, projection[0].first);
            for (size_t i = 1; i < projection.size(); ++i) {
                const double s = logits.at(y, x, projection[i].first);
                if (s > best_score ||
                    (s == best_score && projection[i].first < projection[best].first)) {
                    best_score = s;
                    best = i;
                }
            }
            out.at(y, x) = projection[best].second;
        }
    return out;
}

void accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
    if (gt.h != pred.h || gt.w != pred.w)
        throw std::invalid_argument("ground truth and prediction shapes differ");
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            const int32_t g = gt.at(y, x);
            if (g == LabelMap::kIgnore) continue;
            const int32_t p = pred.at(y, x);
            if (g < 0 || g >= cm.k) throw std::out_of_range("ground truth label out of range");
            if (p < 0 || p >= cm.k) throw std::out_of_range("prediction out of range");
            ++cm.at(g, p);
        }
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
    std::vector<double> iou(static_cast<size_t>(cm.k),
                            std::numeric_limits<double>::quiet_NaN());
    for (int c = 0; c < cm.k; ++c) {
        long long tp = cm.at(c, c);
        long long fp = 0;
        long long fn = 0;
        for (int o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const long long denom = tp + fp + fn;
        if (denom > 0) iou[static_cast<size_t>(c)] = static_cast<double>(tp) / denom;
    }
    return iou;
}

double mean_iou(const ConfusionMatrix& cm) {
    double sum = 0.0;
    int defined = 0;
    for (double v : per_class_iou(cm)) {
        if (std::isnan(v)) continue;
        sum += v;
        ++defined;
    }
    if (defined == 0) throw std::invalid_argument("no evaluable classes");
    return sum / defined;
}

ConfusionMatrix evaluate(const SegModel& model, const std::vector<Sample>& test_set,
                         const DatasetTaxonomy& test_taxonomy, const UnifiedLabelSpace& space) {
    const auto projection = eval_projection(space, test_taxonomy);
    if (projection.empty())
        throw std::invalid_argument("test taxonomy shares no classes with the trained space");
    ConfusionMatrix cm(static_cast<int>(test_taxonomy.classes.size()));
    for (const Sample& s : test_set)
        accumulate_confusion(cm, predict(model, s.features, projection), s.labels);
    return cm;
}

LabelMap MultiLabelPrediction::final_map() const {
    LabelMap out = primary;
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            if (override_class.at(y, x) >= 0) out.at(y, x) = override_class.at(y, x);
    return out;
}

MultiLabelPrediction multilabel_predict(const SegModel& model, const Grid3& features,
                                        const UnifiedLabelSpace& space,
                                        const std::string& dataset_id, ScoreKind score,
                                        double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("threshold must lie in (0, 1)");
    const std::vector<uint8_t>& member = space.membership(dataset_id);
    size_t n_member = 0;
    for (uint8_t m : member) n_member += m ? 1 : 0;
    if (n_member == 0) throw std::invalid_argument("dataset has no member channels");
    if (n_member == member.size())
        throw std::invalid_argument("dataset covers every channel; no out-of-space set");

    const Grid3 logits = forward(model, features);
    if (logits.c != static_cast<int>(space.size()))
        throw std::invalid_argument("model channels do not match the label space");

    MultiLabelPrediction out(features.h, features.w);
    out.threshold = threshold;
    std::vector<double> p(static_cast<size_t>(logits.c));
    for (int y = 0; y < features.h; ++y)
        for (int x = 0; x < features.w; ++x) {
            if (score == ScoreKind::kSoftmax) {
                double m = logits.at(y, x, 0);
                for (int k = 1; k < logits.c; ++k) m = std::max(m, logits.at(y, x, k));
                double sum = 0.0;
                for (int k = 0; k < logits.c; ++k) {
                    p[static_cast<size_t>(k)] = std::exp(logits.at(y, x, k) - m);
                    sum += p[static_cast<size_t>(k)];
                }
                for (double& v : p) v /= sum;
            } else {
                for (int k = 0; k < logits.c; ++k)
                    p[static_cast<size_t>(k)] = stable_sigmoid(logits.at(y, x, k));
            }

            int best_in = -1;
            int best_out = -1;
            for (int k = 0; k < logits.c; ++k) {
                int& slot = member[static_cast<size_t>(k)] ? best_in : best_out;
                if (slot < 0 || p[static_cast<size_t>(k)] > p[static_cast<size_t>(slot)]) slot = k;
            }
            out.primary.at(y, x) = best_in;
            if (p[static_cast<size_t>(best_out)] >= threshold) {
                out.override_class.at(y, x) = best_out;
                out.override_score.at(y, x, 0) = p[static_cast<size_t>(best_out)];
            } else {
                out.override_class.at(y, x) = -1;
            }
        }
    return out;
}

}  // namespace uniseg
