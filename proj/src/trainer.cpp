#include "uniseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "uniseg/losses.hpp"

namespace uniseg {

namespace {

// Same scrambler the generator uses; keeps independently seeded streams
// (model init, sample order, stage-1 pipeline) from overlapping.
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr uint64_t kModelSalt = 0x6d6f64656cULL;   // "model"
constexpr uint64_t kOrderSalt = 0x6f72646572ULL;   // "order"
constexpr uint64_t kStage1Salt = 0x737461676531ULL;

void validate_config(const TrainConfig& c) {
    if (c.hidden_dim < 1) throw std::invalid_argument("hidden_dim must be positive");
    if (c.lr0 < 0.0) throw std::invalid_argument("lr0 must be non-negative");
    if (c.momentum < 0.0 || c.momentum >= 1.0)
        throw std::invalid_argument("momentum must lie in [0, 1)");
    if (c.poly_power <= 0.0) throw std::invalid_argument("poly_power must be positive");
    if (c.max_iters < 1) throw std::invalid_argument("max_iters must be positive");
    if (c.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (c.scale_t <= 0.0) throw std::invalid_argument("scale_t must be positive");
}

Grid3 flip_grid(const Grid3& g) {
    Grid3 out(g.h, g.w, g.c);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            for (int k = 0; k < g.c; ++k) out.at(y, x, k) = g.at(y, g.w - 1 - x, k);
    return out;
}

LabelMap flip_labels(const LabelMap& m) {
    LabelMap out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, m.w - 1 - x);
    return out;
}

TriStateLabelMap flip_tristate(const TriStateLabelMap& t) {
    TriStateLabelMap out(t.h, t.w, t.k);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x) {
            const int sx = t.w - 1 - x;
            out.valid[static_cast<size_t>(y) * t.w + x] =
                t.valid[static_cast<size_t>(y) * t.w + sx];
            for (int k = 0; k < t.k; ++k) out.at(y, x, k) = t.at(y, sx, k);
        }
    return out;
}

// One pool entry per training sample with its loss-specific label view
// prepared up front so the hot loop only forwards and backprops.
struct PoolEntry {
    const Sample* sample = nullptr;
    const std::vector<uint8_t>* membership = nullptr;  // null-variant BCE
    LabelMap unified{1, 1};                            // CE and null-variant BCE
    TriStateLabelMap tri{1, 1, 1};                     // class-relational BCE
};

bool all_finite(const GradBundle& g) {
    for (const auto* block : {&g.w1, &g.b1, &g.w2, &g.b2})
        for (double v : *block)
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::kCE: return "ce";
        case LossKind::kNullBCE: return "null_bce";
        case LossKind::kCRBCE: return "cr_bce";
    }
    throw std::invalid_argument("unknown loss kind");
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "ce") return LossKind::kCE;
    if (name == "null_bce") return LossKind::kNullBCE;
    if (name == "cr_bce") return LossKind::kCRBCE;
    throw std::invalid_argument("unknown loss kind: " + name);
}

double poly_lr(double lr0, long long iter, long long max_iters, double power) {
    if (max_iters < 1) throw std::invalid_argument("max_iters must be positive");
    if (iter < 0 || iter > max_iters)
        throw std::invalid_argument("iter must lie in [0, max_iters]");
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iters);
    return lr0 * std::pow(frac, power);
}

void sgd_step(SegModel& m, GradBundle& velocity, const GradBundle& grad, double lr,
              double momentum) {
    auto params = m.blocks();
    auto vel = velocity.blocks();
    auto g = grad.blocks();
    for (size_t b = 0; b < params.size(); ++b) {
        if (vel[b]->size() != params[b]->size() || g[b]->size() != params[b]->size())
            throw std::invalid_argument("sgd_step: mismatched block sizes");
        for (size_t i = 0; i < params[b]->size(); ++i) {
            (*vel[b])[i] = momentum * (*vel[b])[i] + (*g[b])[i];
            (*params[b])[i] -= lr * (*vel[b])[i];
        }
    }
}

TrainResult train(const std::map<std::string, std::vector<Sample>>& samples,
                  const UnifiedLabelSpace& space, const TrainConfig& config,
                  const MultiLabelTable* table) {
    validate_config(config);
    if (config.loss == LossKind::kCRBCE) {
        if (table == nullptr)
            throw std::invalid_argument("class-relational training needs a multi-label table");
        if (table->k_u != static_cast<int>(space.size()))
            throw std::invalid_argument("multi-label table does not match the label space");
    }

    std::vector<PoolEntry> pool;
    int f_in = -1;
    for (const auto& [dataset_id, list] : samples) {
        if (!space.has_dataset(dataset_id))
            throw std::invalid_argument("unknown dataset in training pool: " + dataset_id);
        for (const Sample& s : list) {
            if (f_in < 0) f_in = s.features.c;
            if (s.features.c != f_in)
                throw std::invalid_argument("training samples disagree on feature depth");
            PoolEntry e;
            e.sample = &s;
            if (config.loss == LossKind::kCRBCE) {
                e.tri = expand_pixel_labels(s.labels, dataset_id, *table, space);
            } else {
                e.unified = remap_labels(s.labels, dataset_id, space);
                e.membership = &space.membership(dataset_id);
            }
            pool.push_back(std::move(e));
        }
    }
    if (pool.empty()) throw std::invalid_argument("training pool is empty");

    const ModelSpec spec{f_in, config.hidden_dim, static_cast<int>(space.size()), config.head,
                         config.scale_t};

    const auto t0 = std::chrono::steady_clock::now();

    TrainResult result;
    result.config = config;
    result.model = init_model(spec, splitmix64(config.seed ^ kModelSalt));
    result.loss_curve.reserve(static_cast<size_t>(config.max_iters));
    result.lr_curve.reserve(static_cast<size_t>(config.max_iters));

    GradBundle velocity = GradBundle::zeros_like(result.model);
    std::mt19937_64 order_rng(splitmix64(config.seed ^ kOrderSalt));
    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t pos = order.size();  // forces a shuffle before the first draw

    for (int iter = 0; iter < config.max_iters; ++iter) {
        GradBundle batch_grad = GradBundle::zeros_like(result.model);
        double batch_loss = 0.0;
        const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

        for (int b = 0; b < config.batch_size; ++b) {
            if (pos == order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                pos = 0;
            }
            const PoolEntry& entry = pool[order[pos++]];
            const bool flip = config.hflip && (order_rng() & 1ULL) != 0;

            const Grid3 features = flip ? flip_grid(entry.sample->features) : entry.sample->features;
            const Grid3 hidden = forward_hidden(result.model, features);
            const Grid3 logits = forward_from_hidden(result.model, hidden);

            LossGrad lg;
            switch (config.loss) {
                case LossKind::kCE:
                    lg = ce_loss_grad(logits, flip ? flip_labels(entry.unified) : entry.unified);
                    break;
                case LossKind::kNullBCE:
                    lg = null_bce_loss_grad(
                        logits, flip ? flip_labels(entry.unified) : entry.unified,
                        *entry.membership);
                    break;
                case LossKind::kCRBCE:
                    lg = cr_bce_loss_grad(logits, flip ? flip_tristate(entry.tri) : entry.tri);
                    break;
            }
            batch_loss += lg.loss * inv_batch;
            batch_grad.accumulate(backward_cached(result.model, features, hidden, lg.grad),
                                  inv_batch);
        }

        if (!std::isfinite(batch_loss) || !all_finite(batch_grad))
            throw std::runtime_error("non-finite loss or gradient at iteration " +
                                     std::to_string(iter));

        const double lr = poly_lr(config.lr0, iter, config.max_iters, config.poly_power);
        sgd_step(result.model, velocity, batch_grad, lr, config.momentum);
        result.loss_curve.push_back(batch_loss);
        result.lr_curve.push_back(lr);
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

PipelineResult run_cr_pipeline(const std::map<std::string, std::vector<Sample>>& samples,
                               const UnifiedLabelSpace& space, const TrainConfig& config,
                               const TrainConfig& stage1_config,
                               const MultiLabelTable* frozen_table) {
    PipelineResult r;
    if (frozen_table != nullptr) {
        r.table = *frozen_table;
    } else {
        TrainConfig s1 = stage1_config;
        s1.loss = LossKind::kNullBCE;
        s1.head = HeadKind::kCosine;
        s1.lr0 = s1.resolved_lr0();
        s1.seed = splitmix64(config.seed ^ kStage1Salt);
        r.stage1 = train(samples, space, s1);
        r.sim = compute_similarity(r.stage1.model, samples, space);
        r.tau = auto_tau(r.sim, space);
        r.table = generate_multilabels(r.sim, r.tau, space);
    }

    TrainConfig s2 = config;
    s2.loss = LossKind::kCRBCE;
    r.stage2 = train(samples, space, s2, &r.table);
    return r;
}

TrainConfig train_config_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "loss") c.loss = loss_kind_from_name(value.get<std::string>());
            else if (key == "head") c.head = head_kind_from_name(value.get<std::string>());
            else if (key == "hidden_dim") c.hidden_dim = value.get<int>();
            else if (key == "scale_t") c.scale_t = value.get<double>();
            else if (key == "lr0") c.lr0 = value.get<double>();
            else if (key == "momentum") c.momentum = value.get<double>();
            else if (key == "poly_power") c.poly_power = value.get<double>();
            else if (key == "max_iters") c.max_iters = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "hflip") c.hflip = value.get<bool>();
            else if (key == "seed") c.seed = value.get<uint64_t>();
            else throw std::invalid_argument("unknown config key: " + key);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("bad value for config key '" + key + "': " + e.what());
        }
    }
    validate_config(c);
    c.lr0 = c.resolved_lr0();
    return c;
}

std::string train_config_to_json_text(const TrainConfig& config) {
    nlohmann::json j{{"loss", loss_kind_name(config.loss)},
                     {"head", head_kind_name(config.head)},
                     {"hidden_dim", config.hidden_dim},
                     {"scale_t", config.scale_t},
                     {"lr0", config.lr0},
                     {"momentum", config.momentum},
                     {"poly_power", config.poly_power},
                     {"max_iters", config.max_iters},
                     {"batch_size", config.batch_size},
                     {"hflip", config.hflip},
                     {"seed", config.seed}};
    return j.dump(2) + "\n";
}

}  // namespace uniseg
