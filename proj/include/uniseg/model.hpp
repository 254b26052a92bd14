#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uniseg/grid.hpp"

namespace uniseg {

enum class HeadKind { kLinear, kCosine };

std::string head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

struct ModelSpec {
    int f_in = 0;
    int f_h = 0;
    int k_u = 0;
    HeadKind head = HeadKind::kLinear;
    double scale_t = 20.0;  // cosine logit scale, unused by the linear head
};

// Per-pixel classifier: one tanh hidden layer followed by either an affine
// head or a scaled cosine-similarity head. Weights are row-major:
// w1[j*f_in + i] feeds hidden unit j from input i, w2[k*f_h + j] feeds
// channel k from hidden unit j (for the cosine head w2 holds the prototype
// rows and b2 stays empty).
struct SegModel {
    ModelSpec spec;
    std::vector<double> w1, b1, w2, b2;

    int param_count() const;
    std::array<std::vector<double>*, 4> blocks() { return {&w1, &b1, &w2, &b2}; }
    std::array<const std::vector<double>*, 4> blocks() const { return {&w1, &b1, &w2, &b2}; }
};

// Gradients with the same block layout as SegModel.
struct GradBundle {
    std::vector<double> w1, b1, w2, b2;

    static GradBundle zeros_like(const SegModel& m);
    std::array<std::vector<double>*, 4> blocks() { return {&w1, &b1, &w2, &b2}; }
    std::array<const std::vector<double>*, 4> blocks() const { return {&w1, &b1, &w2, &b2}; }
    void accumulate(const GradBundle& other, double scale);
};

// Deterministic init: weights uniform in [-a, a] with a = sqrt(6/(fan_in +
// fan_out)) drawn in block order w1 then w2 from mt19937_64(seed), biases zero.
SegModel init_model(const ModelSpec& spec, uint64_t seed);

// Hidden activations, h*w*f_h.
Grid3 forward_hidden(const SegModel& m, const Grid3& features);

// Per-pixel logits, h*w*k_u. The cosine head guards both norms with
// sqrt(dot + 1e-12) so exactly-zero vectors stay finite during training.
Grid3 forward(const SegModel& m, const Grid3& features);
Grid3 forward_from_hidden(const SegModel& m, const Grid3& hidden);

// Full-chain parameter gradients for dLoss/dLogits. The cached overload
// reuses hidden activations from forward_hidden; the plain one recomputes
// them. Both produce identical values.
GradBundle backward(const SegModel& m, const Grid3& features, const Grid3& dl_dlogits);
GradBundle backward_cached(const SegModel& m, const Grid3& features, const Grid3& hidden,
                           const Grid3& dl_dlogits);

// Standalone scaled-cosine scores between feature vectors and prototype rows
// (k x f, row-major). Unlike the training path this refuses exactly-zero
// vectors: throws std::domain_error("degenerate norm").
Grid3 cosine_scores(const Grid3& feats, const std::vector<double>& prototypes, int k,
                    double scale_t);

// Versioned JSON checkpoint with exact double round-trip.
void save_checkpoint(const SegModel& m, const std::string& path);
SegModel load_checkpoint(const std::string& path);

}  // namespace uniseg
