#include "uniseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace uniseg {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    if (x >= 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double bce_term_loss(double logit, double target) {
    return stable_softplus(logit) - target * logit;
}

double bce_term_grad(double logit, double target) {
    return stable_sigmoid(logit) - target;
}

Grid3 softmax(const Grid3& logits) {
    Grid3 p(logits.h, logits.w, logits.c);
    for (int px = 0; px < logits.pixels(); ++px) {
        const double* o = &logits.v[static_cast<size_t>(px) * logits.c];
        double* q = &p.v[static_cast<size_t>(px) * logits.c];
        double m = o[0];
        for (int k = 1; k < logits.c; ++k) m = std::max(m, o[k]);
        double z = 0.0;
        for (int k = 0; k < logits.c; ++k) {
            q[k] = std::exp(o[k] - m);
            z += q[k];
        }
        for (int k = 0; k < logits.c; ++k) q[k] /= z;
    }
    return p;
}

Grid3 sigmoid(const Grid3& logits) {
    Grid3 p(logits.h, logits.w, logits.c);
    for (size_t i = 0; i < logits.v.size(); ++i) p.v[i] = stable_sigmoid(logits.v[i]);
    return p;
}

LossGrad ce_loss_grad(const Grid3& logits, const LabelMap& labels) {
    if (labels.h != logits.h || labels.w != logits.w)
        throw std::invalid_argument("ce_loss_grad: label/logit shape mismatch");

    long long n_valid = 0;
    for (int32_t lab : labels.v) {
        if (lab == LabelMap::kIgnore) continue;
        if (lab < 0 || lab >= logits.c)
            throw std::out_of_range("ce_loss_grad: label outside channel count");
        ++n_valid;
    }
    if (n_valid == 0) throw std::invalid_argument("ce_loss_grad: loss over an empty set");

    LossGrad out;
    out.grad = Grid3(logits.h, logits.w, logits.c);
    out.terms = n_valid;
    const double inv_n = 1.0 / static_cast<double>(n_valid);

    double loss = 0.0;
    for (int px = 0; px < logits.pixels(); ++px) {
        int32_t lab = labels.v[px];
        if (lab == LabelMap::kIgnore) continue;
        const double* o = &logits.v[static_cast<size_t>(px) * logits.c];
        double* g = &out.grad.v[static_cast<size_t>(px) * logits.c];

        double m = o[0];
        for (int k = 1; k < logits.c; ++k) m = std::max(m, o[k]);
        double z = 0.0;
        for (int k = 0; k < logits.c; ++k) z += std::exp(o[k] - m);
        double lse = m + std::log(z);
        loss += lse - o[lab];

        for (int k = 0; k < logits.c; ++k) g[k] = std::exp(o[k] - lse) * inv_n;
        g[lab] -= inv_n;
    }
    out.loss = loss * inv_n;
    return out;
}

LossGrad null_bce_loss_grad(const Grid3& logits, const LabelMap& labels,
                            const std::vector<uint8_t>& membership) {
    if (labels.h != logits.h || labels.w != logits.w)
        throw std::invalid_argument("null_bce_loss_grad: label/logit shape mismatch");
    if (static_cast<int>(membership.size()) != logits.c)
        throw std::invalid_argument("null_bce_loss_grad: membership size mismatch");

    long long n_member = std::count(membership.begin(), membership.end(), uint8_t{1});
    if (n_member == 0)
        throw std::invalid_argument("null_bce_loss_grad: empty membership");

    long long n_valid = 0;
    for (int32_t lab : labels.v) {
        if (lab == LabelMap::kIgnore) continue;
        if (lab < 0 || lab >= logits.c)
            throw std::out_of_range("null_bce_loss_grad: label outside channel count");
        if (!membership[lab])
            throw std::invalid_argument("null_bce_loss_grad: label is not a member channel");
        ++n_valid;
    }
    if (n_valid == 0)
        throw std::invalid_argument("null_bce_loss_grad: loss over an empty set");

    LossGrad out;
    out.grad = Grid3(logits.h, logits.w, logits.c);
    out.terms = n_valid * n_member;
    const double inv_n = 1.0 / static_cast<double>(out.terms);

    double loss = 0.0;
    for (int px = 0; px < logits.pixels(); ++px) {
        int32_t lab = labels.v[px];
        if (lab == LabelMap::kIgnore) continue;
        const double* o = &logits.v[static_cast<size_t>(px) * logits.c];
        double* g = &out.grad.v[static_cast<size_t>(px) * logits.c];
        for (int k = 0; k < logits.c; ++k) {
            if (!membership[k]) continue;  // null channel: untouched, exactly zero
            double y = (k == lab) ? 1.0 : 0.0;
            loss += bce_term_loss(o[k], y);
            g[k] = bce_term_grad(o[k], y) * inv_n;
        }
    }
    out.loss = loss * inv_n;
    return out;
}

LossGrad cr_bce_loss_grad(const Grid3& logits, const TriStateLabelMap& labels) {
    if (labels.h != logits.h || labels.w != logits.w || labels.k != logits.c)
        throw std::invalid_argument("cr_bce_loss_grad: label/logit shape mismatch");

    long long n_terms = 0;
    for (int px = 0; px < logits.pixels(); ++px) {
        if (!labels.valid[px]) continue;
        const int8_t* c = &labels.code[static_cast<size_t>(px) * labels.k];
        for (int k = 0; k < labels.k; ++k)
            if (c[k] != TriStateLabelMap::kNull) ++n_terms;
    }
    if (n_terms == 0)
        throw std::invalid_argument("cr_bce_loss_grad: loss over an empty set");

    LossGrad out;
    out.grad = Grid3(logits.h, logits.w, logits.c);
    out.terms = n_terms;
    const double inv_n = 1.0 / static_cast<double>(n_terms);

    double loss = 0.0;
    for (int px = 0; px < logits.pixels(); ++px) {
        if (!labels.valid[px]) continue;
        const double* o = &logits.v[static_cast<size_t>(px) * logits.c];
        const int8_t* c = &labels.code[static_cast<size_t>(px) * labels.k];
        double* g = &out.grad.v[static_cast<size_t>(px) * logits.c];
        for (int k = 0; k < logits.c; ++k) {
            if (c[k] == TriStateLabelMap::kNull) continue;
            double y = (c[k] == TriStateLabelMap::kPositive) ? 1.0 : 0.0;
            loss += bce_term_loss(o[k], y);
            g[k] = bce_term_grad(o[k], y) * inv_n;
        }
    }
    out.loss = loss * inv_n;
    return out;
}

ConflictReport conflict_probe(double g1, double g2) {
    ConflictReport r;
    r.g1 = g1;
    r.g2 = g2;
    r.product = g1 * g2;
    r.conflict = r.product < 0.0;
    return r;
}

}  // namespace uniseg
