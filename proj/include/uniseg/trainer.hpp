#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uniseg/labelspace.hpp"
#include "uniseg/model.hpp"
#include "uniseg/relations.hpp"
#include "uniseg/synth.hpp"

namespace uniseg {

enum class LossKind { kCE, kNullBCE, kCRBCE };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

struct TrainConfig {
    LossKind loss = LossKind::kNullBCE;
    HeadKind head = HeadKind::kLinear;
    int hidden_dim = 24;
    double scale_t = 20.0;
    // Used literally by train(): lr0 = 0 keeps every step at learning rate
    // zero, so the model comes back unchanged. The JSON loader and the
    // stage-1 pipeline map 0 to the per-head default via resolved_lr0().
    double lr0 = 0.0;
    double momentum = 0.9;
    double poly_power = 0.9;
    int max_iters = 2000;
    int batch_size = 8;
    bool hflip = true;
    uint64_t seed = 0;

    // Per-head default: 0.05 for the linear head, 0.1 for the cosine head.
    double resolved_lr0() const {
        if (lr0 != 0.0) return lr0;
        return head == HeadKind::kCosine ? 0.1 : 0.05;
    }
};

// lr0 * (1 - iter/max_iters)^power for iter in [0, max_iters].
double poly_lr(double lr0, long long iter, long long max_iters, double power);

// v <- momentum * v + g; theta <- theta - lr * v, over all parameter blocks.
void sgd_step(SegModel& m, GradBundle& velocity, const GradBundle& grad, double lr,
              double momentum);

struct TrainResult {
    SegModel model;
    std::vector<double> loss_curve;  // one batch-mean loss per iteration
    std::vector<double> lr_curve;    // learning rate applied at each iteration
    TrainConfig config;
    double wall_seconds = 0.0;
};

// Single-stage training over the concatenated sample pool of all datasets
// (dataset-local labels; remapping into the unified space happens inside).
// The pool is reshuffled each epoch with a seeded generator, horizontal flips
// are drawn per use, and batches always hold batch_size samples (a short
// epoch tail is folded into the next shuffle). Bitwise reproducible for a
// fixed seed in single-thread use. The CR loss additionally needs the frozen
// multi-label table. Throws std::runtime_error("non-finite ...") when a loss
// or gradient stops being finite.
TrainResult train(const std::map<std::string, std::vector<Sample>>& samples,
                  const UnifiedLabelSpace& space, const TrainConfig& config,
                  const MultiLabelTable* table = nullptr);

struct PipelineResult {
    TrainResult stage1;  // cosine-head null-variant BCE model
    SimilarityTensor sim;
    std::optional<double> tau;
    MultiLabelTable table;
    TrainResult stage2;  // class-relational model trained with the frozen table
};

// Two-stage run: stage 1 trains a cosine-head model with the null-variant
// BCE (its seed is salted away from config.seed), similarities over the raw
// training samples produce the frozen table, and stage 2 trains a fresh model
// with the class-relational loss using config.seed itself. With a self-only
// table stage 2 is bitwise identical to a plain null-BCE run of the same
// config. A pre-built table skips stage 1 entirely (stage1 stays empty).
PipelineResult run_cr_pipeline(const std::map<std::string, std::vector<Sample>>& samples,
                               const UnifiedLabelSpace& space, const TrainConfig& config,
                               const TrainConfig& stage1_config,
                               const MultiLabelTable* frozen_table = nullptr);

// TrainConfig <-> JSON object (keys: loss, head, hidden_dim, scale_t, lr0,
// momentum, poly_power, max_iters, batch_size, hflip, seed).
TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& config);

}  // namespace uniseg
