// Acceptance gate: eight end-to-end checks over the built library and CLI,
// one PASS/FAIL line each, exit code 0 only when every check passes. The
// checks pin the project's core claims: correct analytic gradients, the
// cross-entropy gradient conflict and its BCE resolution, recovery of the
// planted class relations, the directional leave-one-out result, multi-label
// override behavior, oracle equivalences, byte-level determinism, and the
// degenerate-pipeline equality.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "uniseg/eval.hpp"
#include "uniseg/labelspace.hpp"
#include "uniseg/losses.hpp"
#include "uniseg/model.hpp"
#include "uniseg/relations.hpp"
#include "uniseg/synth.hpp"
#include "uniseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace uniseg;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-5;         // analytic vs central finite differences
constexpr double kFdStep = 1e-6;
constexpr int kMaxParams = 500;           // gradcheck model size cap
constexpr double kIdentityTol = 1e-12;    // softmax/sigmoid identities
constexpr int kSeeds = 5;
constexpr double kSubsetMarginPts = 2.0;  // null variant over CE, mIoU points
constexpr double kCrTiePts = 0.5;         // CR may trail the null variant by this
constexpr double kCrThreshold = 0.5;      // sigmoid override threshold, CR model
constexpr double kCeThreshold = 0.1;      // softmax override threshold, CE model
constexpr double kOverrideHiFrac = 0.8;   // CR must override more than this
constexpr double kOverrideLoFrac = 0.2;   // CE must override less than this
constexpr double kBudgetGradcheck = 10.0;  // seconds
constexpr double kBudgetConflict = 1.0;
constexpr double kBudgetRecovery = 300.0;
constexpr double kBudgetHoldout = 900.0;
constexpr double kBudgetOverride = 60.0;  // prediction only, post-training
constexpr uint64_t kTrainSplit = 1;
constexpr uint64_t kTestSplit = 2;

struct CheckOutcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream ss;
    ss << std::setprecision(precision) << v;
    return ss.str();
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    const unsigned hw = std::thread::hardware_concurrency();
    const int workers = std::min(n, hw == 0 ? 4 : static_cast<int>(hw));
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto run = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// Shared fixture corpus: the default two-dataset hierarchy at full size.
struct FixtureData {
    HierarchySpec spec;
    std::vector<DatasetTaxonomy> taxes;
    UnifiedLabelSpace space;
    std::map<std::string, std::vector<Sample>> train_all;
    std::map<std::string, std::vector<Sample>> train_coarse;  // FINE held out
    std::map<std::string, std::vector<Sample>> test;
};

FixtureData make_fixture_data() {
    FixtureData f;
    f.spec = default_fixture();
    f.taxes = taxonomies(f.spec);
    f.space = unify(f.taxes);
    for (const auto& tax : f.taxes) {
        f.train_all[tax.dataset_id] = generate(f.spec, tax.dataset_id, 16, 32, 32, kTrainSplit);
        f.test[tax.dataset_id] = generate(f.spec, tax.dataset_id, 8, 32, 32, kTestSplit);
    }
    f.train_coarse["COARSE"] = f.train_all.at("COARSE");
    return f;
}

TrainConfig full_cfg(LossKind loss, uint64_t seed) {
    TrainConfig c;
    c.loss = loss;
    c.seed = seed;
    c.lr0 = c.resolved_lr0();
    return c;
}

// Stage-1 settings: same schedule, learning rate left to the cosine default.
TrainConfig stage1_cfg(const TrainConfig& c) {
    TrainConfig s = c;
    s.lr0 = 0.0;
    return s;
}

int local_of(const DatasetTaxonomy& tax, const std::string& name) {
    const auto it = std::find(tax.classes.begin(), tax.classes.end(), name);
    if (it == tax.classes.end()) throw std::logic_error("fixture class missing: " + name);
    return static_cast<int>(it - tax.classes.begin());
}

// ------------------------------------------------------------ criterion 1

double gradcheck_case(LossKind loss, HeadKind head, uint64_t seed, int* params_out) {
    const ModelSpec spec{3, 6, 4, head, 4.0};
    SegModel model = init_model(spec, seed);
    if (params_out) *params_out = std::max(*params_out, model.param_count());

    std::mt19937_64 rng(seed + 17);
    std::normal_distribution<double> feat(0.0, 1.0);
    Grid3 x(4, 4, 3);
    for (double& v : x.v) v = feat(rng);

    // Last channel sits outside the space; two pixels are ignored; local
    // class 0 additionally activates the out-of-space channel.
    std::vector<uint8_t> member(4, 1);
    member[3] = 0;
    LabelMap labels(4, 4);
    std::uniform_int_distribution<int> lab(0, 2);
    for (int32_t& v : labels.v) v = lab(rng);
    labels.v[3] = LabelMap::kIgnore;
    labels.v[9] = LabelMap::kIgnore;

    TriStateLabelMap tri(4, 4, 4);
    for (int px = 0; px < labels.pixels(); ++px) {
        if (labels.v[px] == LabelMap::kIgnore) {
            tri.valid[px] = 0;
            for (int k = 0; k < 4; ++k)
                tri.code[static_cast<size_t>(px) * 4 + k] = TriStateLabelMap::kNull;
            continue;
        }
        for (int k = 0; k < 4; ++k)
            tri.code[static_cast<size_t>(px) * 4 + k] =
                member[static_cast<size_t>(k)] ? TriStateLabelMap::kNegative
                                               : TriStateLabelMap::kNull;
        tri.code[static_cast<size_t>(px) * 4 + labels.v[px]] = TriStateLabelMap::kPositive;
        if (labels.v[px] == 0)
            tri.code[static_cast<size_t>(px) * 4 + 3] = TriStateLabelMap::kPositive;
    }

    auto loss_of = [&](const SegModel& m) -> LossGrad {
        const Grid3 logits = forward(m, x);
        switch (loss) {
            case LossKind::kCE: return ce_loss_grad(logits, labels);
            case LossKind::kNullBCE: return null_bce_loss_grad(logits, labels, member);
            case LossKind::kCRBCE: return cr_bce_loss_grad(logits, tri);
        }
        throw std::logic_error("unreachable");
    };

    const GradBundle analytic = backward(model, x, loss_of(model).grad);
    double worst = 0.0;
    auto grads = analytic.blocks();
    auto params = model.blocks();
    for (size_t b = 0; b < params.size(); ++b)
        for (size_t i = 0; i < params[b]->size(); ++i) {
            const double keep = (*params[b])[i];
            (*params[b])[i] = keep + kFdStep;
            const double lp = loss_of(model).loss;
            (*params[b])[i] = keep - kFdStep;
            const double lm = loss_of(model).loss;
            (*params[b])[i] = keep;
            const double fd = (lp - lm) / (2.0 * kFdStep);
            const double an = (*grads[b])[i];
            worst = std::max(worst,
                             std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)}));
        }
    return worst;
}

CheckOutcome criterion_gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int params = 0;
    for (LossKind loss : {LossKind::kCE, LossKind::kNullBCE, LossKind::kCRBCE})
        for (HeadKind head : {HeadKind::kLinear, HeadKind::kCosine})
            worst = std::max(worst, gradcheck_case(loss, head, 42, &params));
    const double secs = seconds_since(t0);

    CheckOutcome out;
    out.pass = worst < kGradTol && params <= kMaxParams && secs < kBudgetGradcheck;
    out.detail = "max rel err " + fmt(worst, 3) + " over 6 loss/head cases, " +
                 std::to_string(params) + " params, " + fmt(secs, 2) + " s";
    return out;
}

// ------------------------------------------------------------ criterion 2

CheckOutcome criterion_conflict(const FixtureData& fx) {
    const auto t0 = Clock::now();
    const int rider = *fx.space.index_of("rider");
    const DatasetTaxonomy& coarse = fx.taxes[0];
    const DatasetTaxonomy& fine = fx.taxes[1];
    const LabelMap lab_rider(1, 1, local_of(coarse, "rider"));
    const LabelMap lab_moto(1, 1, local_of(fine, "motorcyclist"));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    bool opposite = true;
    bool null_zero = true;
    for (int trial = 0; trial < 200; ++trial) {
        Grid3 logits(1, 1, fx.space.size());
        for (double& v : logits.v) v = dist(rng);

        // Identical features, conflicting labels on the shared rider channel.
        const double g_pos =
            ce_loss_grad(logits, remap_labels(lab_rider, "COARSE", fx.space)).grad.v[rider];
        const double g_neg =
            ce_loss_grad(logits, remap_labels(lab_moto, "FINE", fx.space)).grad.v[rider];
        opposite = opposite && g_pos < 0.0 && g_neg > 0.0;

        const double g_null =
            null_bce_loss_grad(logits, remap_labels(lab_moto, "FINE", fx.space),
                               fx.space.membership("FINE"))
                .grad.v[rider];
        null_zero = null_zero && g_null == 0.0 && !std::signbit(g_null);
    }
    const double secs = seconds_since(t0);

    CheckOutcome out;
    out.pass = opposite && null_zero && secs < kBudgetConflict;
    out.detail = std::string("CE signs strictly opposite on 200 random logit draws: ") +
                 (opposite ? "yes" : "NO") + "; out-of-space BCE contribution bitwise 0.0: " +
                 (null_zero ? "yes" : "NO") + "; " + fmt(secs, 2) + " s";
    return out;
}

// ------------------------------------------------------------ criterion 3

CheckOutcome criterion_recovery(const FixtureData& fx, SegModel* cr_seed0_out) {
    const auto t0 = Clock::now();
    const auto planted_list = planted_relations(fx.spec);
    const std::set<std::array<std::string, 3>> planted(planted_list.begin(),
                                                       planted_list.end());

    std::vector<PipelineResult> runs(kSeeds);
    parallel_for(kSeeds, [&](int s) {
        const TrainConfig cfg = full_cfg(LossKind::kCRBCE, static_cast<uint64_t>(s));
        runs[static_cast<size_t>(s)] =
            run_cr_pipeline(fx.train_all, fx.space, cfg, stage1_cfg(cfg));
    });

    int exact = 0;
    bool tau_ok = true;
    std::string taus;
    for (int s = 0; s < kSeeds; ++s) {
        const PipelineResult& pr = runs[static_cast<size_t>(s)];
        const auto triples = relation_triples(pr.table, fx.space, fx.taxes);
        if (std::set<std::array<std::string, 3>>(triples.begin(), triples.end()) == planted)
            ++exact;
        const bool any_cross = !tau_contributors(pr.sim, fx.space, fx.taxes).empty();
        if (any_cross) tau_ok = tau_ok && pr.tau && *pr.tau > 0.0 && *pr.tau < 1.0;
        taus += (s ? " " : "") + (pr.tau ? fmt(*pr.tau, 3) : std::string("NONE"));
    }
    if (cr_seed0_out) *cr_seed0_out = runs[0].stage2.model;
    const double secs = seconds_since(t0);

    CheckOutcome out;
    out.pass = exact >= 4 && tau_ok && secs < kBudgetRecovery;
    out.detail = "exact planted-set recovery in " + std::to_string(exact) + "/" +
                 std::to_string(kSeeds) + " seeds, tau per seed [" + taus + "], " +
                 fmt(secs, 1) + " s";
    return out;
}

// ------------------------------------------------------------ criterion 4

double subset_miou_points(const SegModel& model, const FixtureData& fx,
                          const std::set<std::string>& subset) {
    const DatasetTaxonomy& fine = fx.taxes[1];
    const ConfusionMatrix cm = evaluate(model, fx.test.at("FINE"), fine, fx.space);
    const std::vector<double> iou = per_class_iou(cm);
    double sum = 0.0;
    int n = 0;
    for (size_t c = 0; c < fine.classes.size(); ++c) {
        if (!subset.count(fine.classes[c]) || std::isnan(iou[c])) continue;
        sum += iou[c];
        ++n;
    }
    return n == 0 ? 0.0 : 100.0 * sum / n;
}

CheckOutcome criterion_holdout(const FixtureData& fx) {
    const auto t0 = Clock::now();
    std::set<std::string> subset;
    for (const auto& t : planted_relations(fx.spec)) {
        subset.insert(t[1]);
        subset.insert(t[2]);
    }

    const std::vector<LossKind> losses{LossKind::kCE, LossKind::kNullBCE, LossKind::kCRBCE};
    std::vector<double> points(losses.size() * kSeeds, 0.0);
    parallel_for(static_cast<int>(points.size()), [&](int i) {
        const LossKind loss = losses[static_cast<size_t>(i) / kSeeds];
        const uint64_t seed = static_cast<uint64_t>(i % kSeeds);
        const TrainConfig cfg = full_cfg(loss, seed);
        SegModel model;
        if (loss == LossKind::kCRBCE) {
            model = run_cr_pipeline(fx.train_coarse, fx.space, cfg, stage1_cfg(cfg))
                        .stage2.model;
        } else {
            model = train(fx.train_coarse, fx.space, cfg).model;
        }
        points[static_cast<size_t>(i)] = subset_miou_points(model, fx, subset);
    });

    std::vector<double> mean(losses.size(), 0.0);
    for (size_t l = 0; l < losses.size(); ++l) {
        for (int s = 0; s < kSeeds; ++s) mean[l] += points[l * kSeeds + static_cast<size_t>(s)];
        mean[l] /= kSeeds;
    }
    const double secs = seconds_since(t0);

    CheckOutcome out;
    out.pass = mean[1] - mean[0] >= kSubsetMarginPts && mean[2] >= mean[1] - kCrTiePts &&
               secs < kBudgetHoldout;
    out.detail = "held-out FINE subset mIoU pts over " + std::to_string(kSeeds) +
                 " seeds: ce " + fmt(mean[0]) + ", null " + fmt(mean[1]) + ", cr " +
                 fmt(mean[2]) + "; " + fmt(secs, 1) + " s";
    return out;
}

// ------------------------------------------------------------ criterion 5

CheckOutcome criterion_override(const FixtureData& fx, const SegModel& cr_model) {
    const SegModel ce_model = train(fx.train_all, fx.space, full_cfg(LossKind::kCE, 0)).model;

    const auto t0 = Clock::now();  // the budget covers prediction, not training
    const int moto_uni = *fx.space.index_of("motorcyclist");
    const int moto_fine = static_cast<int>(
        std::find(fx.spec.fine_classes.begin(), fx.spec.fine_classes.end(), "motorcyclist") -
        fx.spec.fine_classes.begin());

    long long moto_px = 0, cr_hits = 0, ce_hits = 0;
    for (const Sample& s : fx.test.at("COARSE")) {
        const auto cr = multilabel_predict(cr_model, s.features, fx.space, "COARSE",
                                           ScoreKind::kSigmoid, kCrThreshold);
        const auto ce = multilabel_predict(ce_model, s.features, fx.space, "COARSE",
                                           ScoreKind::kSoftmax, kCeThreshold);
        for (int px = 0; px < s.fine_truth.pixels(); ++px) {
            if (s.fine_truth.v[px] != moto_fine) continue;
            ++moto_px;
            if (cr.override_class.v[px] == moto_uni) ++cr_hits;
            if (ce.override_class.v[px] >= 0) ++ce_hits;
        }
    }
    const double secs = seconds_since(t0);
    const double cr_rate = moto_px ? static_cast<double>(cr_hits) / moto_px : 0.0;
    const double ce_rate = moto_px ? static_cast<double>(ce_hits) / moto_px : 1.0;

    CheckOutcome out;
    out.pass = cr_rate > kOverrideHiFrac && ce_rate < kOverrideLoFrac && secs < kBudgetOverride;
    out.detail = "on " + std::to_string(moto_px) +
                 " motorcyclist-truth pixels: cr override rate " + fmt(cr_rate, 3) + " @" +
                 fmt(kCrThreshold, 2) + " (need > " + fmt(kOverrideHiFrac, 2) +
                 "), ce override rate " + fmt(ce_rate, 3) + " @" + fmt(kCeThreshold, 2) +
                 " (need < " + fmt(kOverrideLoFrac, 2) + "); " + fmt(secs, 2) + " s";
    return out;
}

// ------------------------------------------------------------ criterion 6

CheckOutcome criterion_oracles(const FixtureData& fx) {
    std::mt19937_64 rng(6);
    bool miou_exact = true;

    // mIoU against a naive per-pixel counting oracle on random 8x8 maps.
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 5;
        LabelMap pred(8, 8), gt(8, 8);
        for (int px = 0; px < 64; ++px) {
            pred.v[px] = static_cast<int32_t>(rng() % k);
            gt.v[px] = (rng() % 7 == 0) ? LabelMap::kIgnore : static_cast<int32_t>(rng() % k);
        }
        ConfusionMatrix cm(k);
        accumulate_confusion(cm, pred, gt);

        std::vector<long long> tp(k, 0), fp(k, 0), fn(k, 0);
        for (int px = 0; px < 64; ++px) {
            if (gt.v[px] == LabelMap::kIgnore) continue;
            if (gt.v[px] == pred.v[px]) {
                ++tp[gt.v[px]];
            } else {
                ++fn[gt.v[px]];
                ++fp[pred.v[px]];
            }
        }
        double sum = 0.0;
        int defined = 0;
        const std::vector<double> iou = per_class_iou(cm);
        for (int c = 0; c < k; ++c) {
            const long long denom = tp[c] + fp[c] + fn[c];
            if (denom == 0) {
                miou_exact = miou_exact && std::isnan(iou[c]);
                continue;
            }
            const double oracle = static_cast<double>(tp[c]) / denom;
            miou_exact = miou_exact && iou[c] == oracle;
            sum += oracle;
            ++defined;
        }
        if (defined > 0) miou_exact = miou_exact && mean_iou(cm) == sum / defined;
    }

    // Similarity against a double-loop oracle on a 2-image toy set.
    bool sim_exact = true;
    {
        std::map<std::string, std::vector<Sample>> toy;
        toy["COARSE"] = generate(fx.spec, "COARSE", 2, 8, 8, 3);
        const SegModel model =
            init_model({fx.spec.feature_dim, 8, fx.space.size(), HeadKind::kCosine, 20.0}, 9);
        const SimilarityTensor sim = compute_similarity(model, toy, fx.space);

        const DatasetTaxonomy& coarse = fx.taxes[0];
        for (size_t c = 0; c < coarse.classes.size(); ++c) {
            std::vector<double> sums(static_cast<size_t>(fx.space.size()), 0.0);
            long long count = 0;
            for (const Sample& s : toy["COARSE"]) {
                const Grid3 logits = forward(model, s.features);
                for (int px = 0; px < s.labels.pixels(); ++px) {
                    if (s.labels.v[px] != static_cast<int32_t>(c)) continue;
                    ++count;
                    for (int u = 0; u < fx.space.size(); ++u)
                        sums[static_cast<size_t>(u)] += stable_sigmoid(logits.v[
                            static_cast<size_t>(px) * fx.space.size() + u]);
                }
            }
            const SimilarityRow& row = sim.rows.at("COARSE")[c];
            sim_exact = sim_exact && row.defined == (count > 0) && row.count == count;
            if (count == 0) continue;
            for (int u = 0; u < fx.space.size(); ++u)
                sim_exact = sim_exact && row.s[static_cast<size_t>(u)] ==
                                             sums[static_cast<size_t>(u)] / count;
        }
    }

    // Softmax/sigmoid identities on 1000 random vectors.
    bool identities = true;
    std::uniform_real_distribution<double> dist(-8.0, 8.0);
    for (int trial = 0; trial < 1000; ++trial) {
        Grid3 o(1, 1, 7);
        for (double& v : o.v) v = dist(rng);
        const double shift = dist(rng);
        Grid3 shifted = o;
        for (double& v : shifted.v) v += shift;
        const Grid3 a = softmax(o);
        const Grid3 b = softmax(shifted);
        double total = 0.0;
        for (int k = 0; k < 7; ++k) {
            identities = identities && std::abs(a.v[k] - b.v[k]) <= kIdentityTol;
            total += a.v[k];
            const double x = o.v[static_cast<size_t>(k)];
            identities = identities &&
                         std::abs(stable_sigmoid(-x) - (1.0 - stable_sigmoid(x))) <=
                             kIdentityTol;
        }
        identities = identities && std::abs(total - 1.0) <= kIdentityTol;
    }

    CheckOutcome out;
    out.pass = miou_exact && sim_exact && identities;
    out.detail = std::string("miou counting oracle exact: ") + (miou_exact ? "yes" : "NO") +
                 "; similarity double-loop oracle exact: " + (sim_exact ? "yes" : "NO") +
                 "; 1000-vector identities within 1e-12: " + (identities ? "yes" : "NO");
    return out;
}

// ------------------------------------------------------------ criterion 7

struct CmdResult {
    int code = -1;
    std::string out;
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(UNISEG_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    CmdResult r;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
    return r;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CheckOutcome criterion_determinism() {
    const fs::path root = fs::temp_directory_path() / "uniseg_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path data = root / "data";
    const fs::path cfg = root / "config.json";
    std::ofstream(cfg) << "{\"max_iters\": 40, \"batch_size\": 4, \"hidden_dim\": 8}";

    CheckOutcome out;
    if (run_cli("gen --out " + data.string() + " --n-train 4 --n-test 2 --height 12 --width 12")
            .code != 0) {
        out.detail = "dataset generation failed";
        return out;
    }
    const std::string flags = " --config " + cfg.string() + " --data " + data.string() +
                              " --loss cr_bce --seed 11";
    const fs::path r1 = root / "run1";
    const fs::path r2 = root / "run2";
    if (run_cli("train --out " + r1.string() + flags).code != 0 ||
        run_cli("train --out " + r2.string() + flags).code != 0) {
        out.detail = "training run failed";
        return out;
    }
    const bool metrics_same = read_file(r1 / "metrics.json") == read_file(r2 / "metrics.json");
    const bool ckpt_same = read_file(r1 / "checkpoint.json") == read_file(r2 / "checkpoint.json");

    out.pass = metrics_same && ckpt_same;
    out.detail = std::string("rerun metrics byte-identical: ") + (metrics_same ? "yes" : "NO") +
                 "; checkpoint byte-identical: " + (ckpt_same ? "yes" : "NO");
    return out;
}

// ------------------------------------------------------------ criterion 8

CheckOutcome criterion_degenerate(const FixtureData& fx) {
    // A similarity tensor in which every class argmaxes on itself: the
    // automatic threshold declines, and the table collapses to self-only.
    SimilarityTensor sim;
    sim.k_u = fx.space.size();
    for (const auto& tax : fx.taxes) {
        const auto& to_uni = fx.space.remap(tax.dataset_id);
        auto& rows = sim.rows[tax.dataset_id];
        for (size_t c = 0; c < tax.classes.size(); ++c) {
            SimilarityRow row;
            row.defined = true;
            row.count = 1;
            row.s.assign(static_cast<size_t>(fx.space.size()), 0.1);
            row.s[static_cast<size_t>(to_uni[c])] = 0.9;
            rows.push_back(std::move(row));
        }
    }
    const std::optional<double> tau = auto_tau(sim, fx.space);
    const MultiLabelTable table = generate_multilabels(sim, tau, fx.space);

    bool tau_none = !tau.has_value();
    bool self_only = table.self_only(fx.space);
    bool equal = true;

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (const auto& tax : fx.taxes) {
        const int k_local = static_cast<int>(tax.classes.size());
        for (int trial = 0; trial < 10; ++trial) {
            Grid3 logits(6, 6, fx.space.size());
            for (double& v : logits.v) v = dist(rng);
            LabelMap labels(6, 6);
            for (int32_t& v : labels.v)
                v = (rng() % 9 == 0) ? LabelMap::kIgnore : static_cast<int32_t>(rng() % k_local);

            const LossGrad null_lg =
                null_bce_loss_grad(logits, remap_labels(labels, tax.dataset_id, fx.space),
                                   fx.space.membership(tax.dataset_id));
            const LossGrad cr_lg = cr_bce_loss_grad(
                logits, expand_pixel_labels(labels, tax.dataset_id, table, fx.space));
            equal = equal && null_lg.loss == cr_lg.loss && null_lg.terms == cr_lg.terms &&
                    null_lg.grad.v == cr_lg.grad.v;
        }
    }

    CheckOutcome out;
    out.pass = tau_none && self_only && equal;
    out.detail = std::string("self-peaked tensor yields tau NONE: ") +
                 (tau_none ? "yes" : "NO") + "; table self-only: " + (self_only ? "yes" : "NO") +
                 "; relational loss and gradients bitwise equal to the null variant on 20 "
                 "random batches: " + (equal ? "yes" : "NO");
    return out;
}

}  // namespace

int main() {
    const FixtureData fx = make_fixture_data();
    SegModel cr_seed0;

    std::vector<std::pair<std::string, CheckOutcome>> rows;
    rows.emplace_back("analytic gradients match finite differences", criterion_gradients());
    rows.emplace_back("CE gradient conflict and its BCE resolution", criterion_conflict(fx));
    rows.emplace_back("planted relation recovery across seeds",
                      criterion_recovery(fx, &cr_seed0));
    rows.emplace_back("held-out dataset subset mIoU ordering", criterion_holdout(fx));
    rows.emplace_back("multi-label override rates on motorcyclist truth",
                      criterion_override(fx, cr_seed0));
    rows.emplace_back("oracle equivalences", criterion_oracles(fx));
    rows.emplace_back("byte-identical training reruns", criterion_determinism());
    rows.emplace_back("degenerate pipeline equals the null variant", criterion_degenerate(fx));

    int failures = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& [name, outcome] = rows[i];
        if (!outcome.pass) ++failures;
        std::cout << (outcome.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << ": "
                  << name << " (" << outcome.detail << ")\n";
    }
    std::cout << (failures == 0 ? "all criteria passed"
                                : std::to_string(failures) + " criteria failed")
              << "\n";
    return failures == 0 ? 0 : 1;
}
