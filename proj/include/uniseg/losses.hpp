#pragma once

#include <cstdint>
#include <vector>

#include "uniseg/grid.hpp"

namespace uniseg {

// Numerically stable scalar kernels shared by every loss path. Keeping one
// implementation guarantees bitwise-identical terms across the loss variants,
// which the degenerate-equivalence tests rely on.
double stable_sigmoid(double x);
double stable_softplus(double x);                    // log(1 + e^x)
double bce_term_loss(double logit, double target);   // softplus(o) - y*o
double bce_term_grad(double logit, double target);   // sigmoid(o) - y

// Per-pixel softmax / sigmoid over the channel axis.
Grid3 softmax(const Grid3& logits);
Grid3 sigmoid(const Grid3& logits);

struct LossGrad {
    double loss = 0.0;
    Grid3 grad;             // dLoss/dLogits, same shape as the logits
    long long terms = 0;    // number of counted (pixel, channel) terms
};

// Softmax cross entropy over all unified channels, mean over non-ignored
// pixels. Gradient is (P - Y) / N_pixels on every channel: out-of-space
// channels of the sample's dataset receive an implicit 0 label, which is the
// source of cross-dataset gradient conflict.
// Throws std::invalid_argument when every pixel is ignored ("loss over an
// empty set") and std::out_of_range for labels outside the channel count.
LossGrad ce_loss_grad(const Grid3& logits, const LabelMap& labels);

// Sigmoid BCE restricted to the sample dataset's member channels, mean over
// counted (pixel, member channel) terms. Channels outside the membership get
// an exactly-zero gradient: they are never touched, not merely near zero.
LossGrad null_bce_loss_grad(const Grid3& logits, const LabelMap& labels,
                            const std::vector<uint8_t>& membership);

// Tri-state per-channel targets for the class-relational loss.
struct TriStateLabelMap {
    enum Code : int8_t { kNegative = 0, kPositive = 1, kNull = 2 };

    int h = 0;
    int w = 0;
    int k = 0;
    std::vector<int8_t> code;    // h*w*k, channel fastest
    std::vector<uint8_t> valid;  // h*w, 0 marks ignored pixels

    TriStateLabelMap() = default;
    TriStateLabelMap(int h_, int w_, int k_)
        : h(h_), w(w_), k(k_),
          code(static_cast<size_t>(h_) * w_ * k_, kNegative),
          valid(static_cast<size_t>(h_) * w_, 1) {
        if (h_ <= 0 || w_ <= 0 || k_ <= 0)
            throw std::invalid_argument("TriStateLabelMap: dimensions must be positive");
    }

    int8_t& at(int y, int x, int ch) { return code[(static_cast<size_t>(y) * w + x) * k + ch]; }
    int8_t at(int y, int x, int ch) const {
        return code[(static_cast<size_t>(y) * w + x) * k + ch];
    }
};

// Sigmoid BCE over the non-null channels of a tri-state map, mean over counted
// terms. Null channels receive an exactly-zero gradient. With a self-only
// multi-label table this reduces bitwise to null_bce_loss_grad.
LossGrad cr_bce_loss_grad(const Grid3& logits, const TriStateLabelMap& labels);

// Sign diagnosis for two per-parameter loss contributions.
struct ConflictReport {
    double g1 = 0.0;
    double g2 = 0.0;
    double product = 0.0;
    bool conflict = false;  // strictly opposite signs
};

ConflictReport conflict_probe(double g1, double g2);

}  // namespace uniseg
