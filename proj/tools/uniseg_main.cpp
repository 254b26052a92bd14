// Command-line front end: dataset generation, training, relation discovery,
// the cross-dataset experiment grid, gradient checking and the
// conflicting-label demo. All artifacts are JSON/CSV/raw arrays; timestamps
// go only into *.log files so reruns stay byte-identical.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uniseg/eval.hpp"
#include "uniseg/labelspace.hpp"
#include "uniseg/losses.hpp"
#include "uniseg/model.hpp"
#include "uniseg/relations.hpp"
#include "uniseg/synth.hpp"
#include "uniseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace uniseg;

namespace {

// Fixed split salts so train and test draws never overlap for any seed.
constexpr uint64_t kTrainSplit = 1;
constexpr uint64_t kTestSplit = 2;
constexpr double kGradTol = 1e-5;

// Shortest decimal form that round-trips the double exactly; used for every
// value that lands in a rerun-comparable CSV or JSON file.
std::string fmt(double v) { return nlohmann::json(v).dump(); }

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_buf{};
    localtime_r(&t, &tm_buf);
    std::strftime(buf, sizeof(buf), "%Y-%m-%d %H:%M:%S", &tm_buf);
    return buf;
}

// Appends timestamped lines; the log is the one artifact allowed to differ
// between reruns.
class RunLog {
  public:
    explicit RunLog(const fs::path& path) : out_(path, std::ios::app) {}
    void line(const std::string& msg) {
        if (out_) out_ << "[" << timestamp() << "] " << msg << "\n";
    }

  private:
    std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// The option values every subcommand can see.
struct GlobalArgs {
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    int threads = 0;
    std::string config;
};

// ---------------------------------------------------------------- gen

struct GenArgs {
    std::string spec_path;
    int n_train = 16;
    int n_test = 8;
    int height = 32;
    int width = 32;
};

int cmd_gen(const GlobalArgs& g, const GenArgs& a) {
    if (g.out.empty()) throw std::invalid_argument("gen needs --out");
    HierarchySpec spec = a.spec_path.empty() ? default_fixture()
                                             : spec_from_json_file(a.spec_path);
    if (g.seed_set) spec.seed = g.seed;

    std::map<std::string, std::vector<Sample>> train_sets;
    std::map<std::string, std::vector<Sample>> test_sets;
    for (const auto& [id, coarsen] : spec.datasets) {
        (void)coarsen;
        train_sets[id] = generate(spec, id, a.n_train, a.height, a.width, kTrainSplit);
        test_sets[id] = generate(spec, id, a.n_test, a.height, a.width, kTestSplit);
    }
    fs::create_directories(g.out);
    dump_datasets((fs::path(g.out) / "train").string(), spec, train_sets);
    dump_datasets((fs::path(g.out) / "test").string(), spec, test_sets);

    const auto taxes = taxonomies(spec);
    for (const auto& tax : taxes)
        save_taxonomy_json(tax, (fs::path(g.out) / ("taxonomy_" + tax.dataset_id + ".json"))
                                    .string());
    const UnifiedLabelSpace space = unify(taxes);
    export_remap_csv(space, taxes, (fs::path(g.out) / "remap.csv").string());

    std::cout << "generated " << spec.datasets.size() << " datasets (unified classes: "
              << space.size() << ", train " << a.n_train << " + test " << a.n_test
              << " images each) under " << g.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data;
    std::string loss;
    std::string table_csv;
};

std::vector<std::array<std::string, 3>> load_triples_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open relation table: " + path);
    std::vector<std::array<std::string, 3>> triples;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<std::string, 3> cols;
        std::istringstream ss(line);
        for (auto& col : cols)
            if (!std::getline(ss, col, ','))
                throw std::invalid_argument("relation table row needs 3 columns: " + line);
        if (first && cols[0] == "dataset_id") {
            first = false;
            continue;
        }
        first = false;
        triples.push_back(std::move(cols));
    }
    return triples;
}

// Stage-1 settings reuse the run's schedule but let the learning rate fall
// back to the cosine default.
TrainConfig stage1_of(const TrainConfig& cfg) {
    TrainConfig s1 = cfg;
    s1.lr0 = 0.0;
    return s1;
}

nlohmann::json evaluate_on_test_dump(const SegModel& model, const DatasetDump& test,
                                     const UnifiedLabelSpace& space) {
    nlohmann::json miou = nlohmann::json::object();
    for (const auto& tax : test.taxonomies) {
        const ConfusionMatrix cm = evaluate(model, test.samples.at(tax.dataset_id), tax, space);
        miou[tax.dataset_id] = mean_iou(cm);
    }
    return miou;
}

std::string loss_curve_csv(const std::vector<double>& curve) {
    std::string csv = "iter,loss\n";
    for (size_t i = 0; i < curve.size(); ++i)
        csv += std::to_string(i) + "," + fmt(curve[i]) + "\n";
    return csv;
}

int cmd_train(const GlobalArgs& g, const TrainArgs& a) {
    if (g.out.empty()) throw std::invalid_argument("train needs --out");
    if (a.data.empty()) throw std::invalid_argument("train needs --data");

    const DatasetDump train_dump = load_datasets((fs::path(a.data) / "train").string());
    const UnifiedLabelSpace space = unify(train_dump.taxonomies);

    TrainConfig cfg;
    if (!g.config.empty()) cfg = train_config_from_json_text(read_text(g.config));
    if (!a.loss.empty()) cfg.loss = loss_kind_from_name(a.loss);
    if (g.seed_set) cfg.seed = g.seed;
    cfg.lr0 = cfg.resolved_lr0();

    fs::create_directories(g.out);
    RunLog log(fs::path(g.out) / "run.log");
    log.line("train start: loss=" + loss_kind_name(cfg.loss) +
             " head=" + head_kind_name(cfg.head) + " seed=" + std::to_string(cfg.seed));

    nlohmann::json metrics;
    TrainResult result;
    if (cfg.loss == LossKind::kCRBCE) {
        std::optional<MultiLabelTable> frozen;
        if (!a.table_csv.empty())
            frozen = table_from_triples(load_triples_csv(a.table_csv), space,
                                        train_dump.taxonomies);
        const PipelineResult pr = run_cr_pipeline(train_dump.samples, space, cfg, stage1_of(cfg),
                                                  frozen ? &*frozen : nullptr);
        result = pr.stage2;
        if (!frozen) {
            save_checkpoint(pr.stage1.model, (fs::path(g.out) / "stage1_checkpoint.json").string());
            export_similarity_csv(pr.sim, space, train_dump.taxonomies,
                                  (fs::path(g.out) / "similarity.csv").string());
            metrics["tau"] = pr.tau ? nlohmann::json(*pr.tau) : nlohmann::json(nullptr);
            log.line("stage 1 done in " + std::to_string(pr.stage1.wall_seconds) + " s, tau=" +
                     (pr.tau ? fmt(*pr.tau) : std::string("NONE")));
        }
        export_multilabel_csv(pr.table, space, train_dump.taxonomies,
                              (fs::path(g.out) / "multilabels.csv").string());
        metrics["relations"] =
            relation_triples(pr.table, space, train_dump.taxonomies).size();
    } else {
        result = train(train_dump.samples, space, cfg);
    }

    write_text(fs::path(g.out) / "config.json", train_config_to_json_text(result.config));
    save_checkpoint(result.model, (fs::path(g.out) / "checkpoint.json").string());
    write_text(fs::path(g.out) / "loss.csv", loss_curve_csv(result.loss_curve));

    metrics["loss"] = loss_kind_name(cfg.loss);
    metrics["seed"] = cfg.seed;
    metrics["first_loss"] = result.loss_curve.front();
    metrics["final_loss"] = result.loss_curve.back();
    const fs::path test_dir = fs::path(a.data) / "test";
    if (fs::exists(test_dir / "manifest.json"))
        metrics["miou"] = evaluate_on_test_dump(result.model, load_datasets(test_dir.string()),
                                                space);
    write_text(fs::path(g.out) / "metrics.json", metrics.dump(2) + "\n");

    log.line("train done in " + std::to_string(result.wall_seconds) + " s, final loss " +
             fmt(result.loss_curve.back()));
    std::cout << "final loss " << fmt(result.loss_curve.back());
    if (metrics.contains("miou"))
        for (const auto& [id, v] : metrics["miou"].items())
            std::cout << "  miou[" << id << "] " << fmt(v.get<double>());
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------- relations

struct RelationsArgs {
    std::string checkpoint;
    std::string data;
    double tau = -1.0;
    bool tau_set = false;
};

int cmd_relations(const GlobalArgs& g, const RelationsArgs& a) {
    if (g.out.empty()) throw std::invalid_argument("relations needs --out");
    if (a.checkpoint.empty()) throw std::invalid_argument("relations needs --checkpoint");
    if (a.data.empty()) throw std::invalid_argument("relations needs --data");

    // Accepts either a gen output root or a dump directory itself.
    fs::path dump_dir = fs::path(a.data);
    if (!fs::exists(dump_dir / "manifest.json")) dump_dir /= "train";
    const DatasetDump dump = load_datasets(dump_dir.string());
    const UnifiedLabelSpace space = unify(dump.taxonomies);
    const SegModel model = load_checkpoint(a.checkpoint);

    const SimilarityTensor sim = compute_similarity(model, dump.samples, space);
    const std::optional<double> tau = a.tau_set ? std::optional<double>(a.tau)
                                                : auto_tau(sim, space);
    const auto contributors = tau_contributors(sim, space, dump.taxonomies);
    const MultiLabelTable table = generate_multilabels(sim, tau, space);
    const auto triples = relation_triples(table, space, dump.taxonomies);

    fs::create_directories(g.out);
    export_similarity_csv(sim, space, dump.taxonomies,
                          (fs::path(g.out) / "similarity.csv").string());
    export_multilabel_csv(table, space, dump.taxonomies,
                          (fs::path(g.out) / "multilabels.csv").string());

    nlohmann::json rel;
    rel["tau"] = tau ? nlohmann::json(*tau) : nlohmann::json(nullptr);
    rel["tau_source"] = a.tau_set ? "override" : "auto";
    rel["contributors"] = nlohmann::json::array();
    for (const auto& [ds, cls] : contributors)
        rel["contributors"].push_back({{"dataset_id", ds}, {"class", cls}});
    rel["relations"] = nlohmann::json::array();
    for (const auto& t : triples)
        rel["relations"].push_back(
            {{"dataset_id", t[0]}, {"primary", t[1]}, {"secondary", t[2]}});
    rel["warnings"] = table.warnings;
    write_text(fs::path(g.out) / "relations.json", rel.dump(2) + "\n");

    if (tau) {
        std::cout << "tau = " << fmt(*tau) << " (" << (a.tau_set ? "override" : "auto")
                  << "), suspected-conflict rows:\n";
        for (const auto& [ds, cls] : contributors)
            std::cout << "  " << ds << "/" << cls << " peaks outside its own space\n";
    } else {
        std::cout << "tau = NONE (no class peaks outside its own space); self-only labels\n";
    }
    for (const auto& t : triples)
        std::cout << "  " << t[0] << ": " << t[1] << " -> also " << t[2] << "\n";
    for (const auto& w : table.warnings) std::cout << "  warning: " << w << "\n";
    return 0;
}

// ---------------------------------------------------------------- experiment

struct ExperimentArgs {
    std::string data;
    std::string seeds_csv;
};

struct ExperimentConfig {
    std::vector<std::string> train_datasets;  // always trained on
    std::vector<std::string> held_out;        // left out one at a time
    std::vector<LossKind> losses{LossKind::kCE, LossKind::kNullBCE, LossKind::kCRBCE};
    std::vector<uint64_t> seeds{0};
    TrainConfig base;
};

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("experiment config is not valid JSON: ") +
                                    e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");

    ExperimentConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "train_datasets")
                c.train_datasets = value.get<std::vector<std::string>>();
            else if (key == "held_out")
                c.held_out = value.get<std::vector<std::string>>();
            else if (key == "losses") {
                c.losses.clear();
                for (const auto& name : value)
                    c.losses.push_back(loss_kind_from_name(name.get<std::string>()));
            } else if (key == "seeds")
                c.seeds = value.get<std::vector<uint64_t>>();
            else if (key == "train")
                c.base = train_config_from_json_text(value.dump());
            else
                throw std::invalid_argument("unknown experiment config key: " + key);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("bad value for experiment key '" + key + "': " +
                                        e.what());
        }
    }
    if (c.losses.empty()) throw std::invalid_argument("experiment needs at least one loss");
    if (c.seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
    c.base.lr0 = c.base.resolved_lr0();
    return c;
}

struct ResultRow {
    std::string setting;
    std::string loss;
    std::string test_dataset;
    uint64_t seed = 0;
    double miou = 0.0;
    double subset_miou = 0.0;  // NaN when no conflicting class is evaluable
};

// Mean IoU restricted to the classes that participate in a planted relation.
double subset_mean_iou(const ConfusionMatrix& cm, const DatasetTaxonomy& tax,
                       const std::set<std::string>& subset) {
    const std::vector<double> iou = per_class_iou(cm);
    double sum = 0.0;
    int n = 0;
    for (size_t c = 0; c < tax.classes.size(); ++c) {
        if (!subset.count(tax.classes[c]) || std::isnan(iou[c])) continue;
        sum += iou[c];
        ++n;
    }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / n;
}

int cmd_experiment(const GlobalArgs& g, const ExperimentArgs& a) {
    if (g.out.empty()) throw std::invalid_argument("experiment needs --out");
    if (a.data.empty()) throw std::invalid_argument("experiment needs --data");

    ExperimentConfig cfg;
    if (!g.config.empty()) cfg = experiment_config_from_json_text(read_text(g.config));
    if (!a.seeds_csv.empty()) {
        cfg.seeds.clear();
        std::istringstream ss(a.seeds_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) cfg.seeds.push_back(std::stoull(tok));
    }

    const DatasetDump train_dump = load_datasets((fs::path(a.data) / "train").string());
    const DatasetDump test_dump = load_datasets((fs::path(a.data) / "test").string());
    // The unified space always spans every dataset of the dump; leave-one-out
    // settings restrict only the training data, so held-out channels exist
    // but never receive supervision.
    const UnifiedLabelSpace space = unify(train_dump.taxonomies);

    std::vector<std::string> universe;
    for (const auto& tax : train_dump.taxonomies) universe.push_back(tax.dataset_id);
    for (const auto& id : cfg.train_datasets)
        if (!train_dump.samples.count(id))
            throw std::invalid_argument("unknown train dataset: " + id);
    for (const auto& id : cfg.held_out) {
        if (!train_dump.samples.count(id))
            throw std::invalid_argument("unknown held-out dataset: " + id);
        if (std::count(cfg.train_datasets.begin(), cfg.train_datasets.end(), id))
            throw std::invalid_argument("dataset both trained and held out: " + id);
    }
    if (cfg.held_out.empty()) {
        for (const auto& id : universe)
            if (!std::count(cfg.train_datasets.begin(), cfg.train_datasets.end(), id))
                cfg.held_out.push_back(id);
    }

    std::set<std::string> subset;
    for (const auto& t : planted_relations(train_dump.spec)) {
        subset.insert(t[1]);
        subset.insert(t[2]);
    }

    // One setting trains on everything; each held-out id then gets a setting
    // that trains on the rest.
    std::vector<std::pair<std::string, std::vector<std::string>>> settings;
    {
        std::vector<std::string> all = cfg.train_datasets;
        all.insert(all.end(), cfg.held_out.begin(), cfg.held_out.end());
        std::sort(all.begin(), all.end());
        settings.emplace_back("all", all);
        for (const auto& h : cfg.held_out) {
            std::vector<std::string> pool;
            for (const auto& id : all)
                if (id != h) pool.push_back(id);
            settings.emplace_back("holdout_" + h, pool);
        }
    }

    struct Cell {
        size_t setting_idx;
        LossKind loss;
        uint64_t seed;
    };
    std::vector<Cell> cells;
    for (size_t si = 0; si < settings.size(); ++si)
        for (LossKind loss : cfg.losses)
            for (uint64_t seed : cfg.seeds) cells.push_back({si, loss, seed});

    fs::create_directories(g.out);
    RunLog log(fs::path(g.out) / "experiment.log");
    const int threads = resolve_threads(g.threads);
    log.line("experiment start: " + std::to_string(cells.size()) + " cells on " +
             std::to_string(threads) + " threads");

    std::vector<std::vector<ResultRow>> slots(cells.size());
    std::atomic<size_t> next{0};
    std::mutex log_mutex;
    std::exception_ptr first_error;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                const Cell& cell = cells[i];
                const auto& [setting_name, pool] = settings[cell.setting_idx];

                std::map<std::string, std::vector<Sample>> pool_samples;
                for (const auto& id : pool) pool_samples[id] = train_dump.samples.at(id);

                TrainConfig run_cfg = cfg.base;
                run_cfg.seed = cell.seed;
                run_cfg.loss = cell.loss;
                SegModel model;
                if (cell.loss == LossKind::kCRBCE) {
                    model = run_cr_pipeline(pool_samples, space, run_cfg, stage1_of(run_cfg))
                                .stage2.model;
                } else {
                    model = train(pool_samples, space, run_cfg).model;
                }

                std::vector<ResultRow> rows;
                for (const auto& tax : test_dump.taxonomies) {
                    const ConfusionMatrix cm =
                        evaluate(model, test_dump.samples.at(tax.dataset_id), tax, space);
                    ResultRow row;
                    row.setting = setting_name;
                    row.loss = loss_kind_name(cell.loss);
                    row.test_dataset = tax.dataset_id;
                    row.seed = cell.seed;
                    row.miou = mean_iou(cm);
                    row.subset_miou = subset_mean_iou(cm, tax, subset);
                    rows.push_back(row);
                }
                slots[i] = std::move(rows);
                std::lock_guard<std::mutex> lk(log_mutex);
                log.line("cell done: " + setting_name + " " + loss_kind_name(cell.loss) +
                         " seed " + std::to_string(cell.seed));
            } catch (...) {
                std::lock_guard<std::mutex> lk(log_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<ResultRow> rows;
    for (auto& slot : slots) rows.insert(rows.end(), slot.begin(), slot.end());
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.setting, a.loss, a.test_dataset, a.seed) <
               std::tie(b.setting, b.loss, b.test_dataset, b.seed);
    });

    std::string results = "train_setting,loss,test_dataset,seed,miou,subset_miou\n";
    for (const ResultRow& r : rows)
        results += r.setting + "," + r.loss + "," + r.test_dataset + "," +
                   std::to_string(r.seed) + "," + fmt(r.miou) + "," + fmt(r.subset_miou) + "\n";
    write_text(fs::path(g.out) / "results.csv", results);

    // Aggregate mean and population std over seeds per (setting, loss, test).
    std::string agg =
        "train_setting,loss,test_dataset,n_seeds,miou_mean,miou_std,"
        "subset_miou_mean,subset_miou_std\n";
    for (size_t i = 0; i < rows.size();) {
        size_t j = i;
        double sum = 0, sum2 = 0, ssum = 0, ssum2 = 0;
        while (j < rows.size() && rows[j].setting == rows[i].setting &&
               rows[j].loss == rows[i].loss && rows[j].test_dataset == rows[i].test_dataset) {
            sum += rows[j].miou;
            sum2 += rows[j].miou * rows[j].miou;
            ssum += rows[j].subset_miou;
            ssum2 += rows[j].subset_miou * rows[j].subset_miou;
            ++j;
        }
        const double n = static_cast<double>(j - i);
        const double mean = sum / n;
        const double smean = ssum / n;
        const double var = std::max(0.0, sum2 / n - mean * mean);
        const double svar = std::max(0.0, ssum2 / n - smean * smean);
        agg += rows[i].setting + "," + rows[i].loss + "," + rows[i].test_dataset + "," +
               std::to_string(j - i) + "," + fmt(mean) + "," + fmt(std::sqrt(var)) + "," +
               fmt(smean) + "," + fmt(std::sqrt(svar)) + "\n";
        i = j;
    }
    write_text(fs::path(g.out) / "aggregate.csv", agg);

    log.line("experiment done");
    std::cout << "wrote " << rows.size() << " result rows to " << g.out << "/results.csv\n";
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
    std::string loss;  // empty = all three
    std::string head;  // empty = both
    int f_in = 3;
    int f_h = 6;
    int k_u = 4;
    bool corrupt = false;
};

struct CheckCase {
    LossKind loss;
    HeadKind head;
};

// Builds one deterministic random problem and compares analytic parameter
// gradients against central finite differences.
bool run_gradcheck_case(const CheckCase& cc, const GradcheckArgs& a, uint64_t seed) {
    const ModelSpec spec{a.f_in, a.f_h, a.k_u, cc.head, 4.0};
    SegModel model = init_model(spec, seed);

    std::mt19937_64 rng(seed + 17);
    std::normal_distribution<double> feat(0.0, 1.0);
    Grid3 x(4, 4, a.f_in);
    for (double& v : x.v) v = feat(rng);

    // Membership leaves the last channel outside the space so the null
    // branch is exercised; two pixels are ignored.
    std::vector<uint8_t> member(static_cast<size_t>(a.k_u), 1);
    member[static_cast<size_t>(a.k_u - 1)] = 0;
    LabelMap labels(4, 4);
    std::uniform_int_distribution<int> lab(0, a.k_u - 2);
    for (int32_t& v : labels.v) v = lab(rng);
    labels.v[3] = LabelMap::kIgnore;
    labels.v[9] = LabelMap::kIgnore;

    TriStateLabelMap tri(4, 4, a.k_u);
    for (int px = 0; px < labels.pixels(); ++px) {
        if (labels.v[px] == LabelMap::kIgnore) {
            tri.valid[px] = 0;
            for (int k = 0; k < a.k_u; ++k)
                tri.code[static_cast<size_t>(px) * a.k_u + k] = TriStateLabelMap::kNull;
            continue;
        }
        for (int k = 0; k < a.k_u; ++k)
            tri.code[static_cast<size_t>(px) * a.k_u + k] =
                member[static_cast<size_t>(k)] ? TriStateLabelMap::kNegative
                                               : TriStateLabelMap::kNull;
        tri.code[static_cast<size_t>(px) * a.k_u + labels.v[px]] = TriStateLabelMap::kPositive;
        // A discovered relation: class 0 also activates the out-of-space channel.
        if (labels.v[px] == 0)
            tri.code[static_cast<size_t>(px) * a.k_u + (a.k_u - 1)] =
                TriStateLabelMap::kPositive;
    }

    auto loss_of = [&](const SegModel& m) -> LossGrad {
        const Grid3 logits = forward(m, x);
        switch (cc.loss) {
            case LossKind::kCE: return ce_loss_grad(logits, labels);
            case LossKind::kNullBCE: return null_bce_loss_grad(logits, labels, member);
            case LossKind::kCRBCE: return cr_bce_loss_grad(logits, tri);
        }
        throw std::logic_error("unreachable");
    };

    const LossGrad base = loss_of(model);
    GradBundle analytic = backward(model, x, base.grad);
    if (a.corrupt) analytic.w1[0] += 1e-3;

    const char* block_names[4] = {"w1", "b1", "w2", "b2"};
    double block_err[4] = {0, 0, 0, 0};
    const double h = 1e-6;
    auto grads = analytic.blocks();
    auto params = model.blocks();
    for (size_t b = 0; b < params.size(); ++b) {
        for (size_t i = 0; i < params[b]->size(); ++i) {
            const double keep = (*params[b])[i];
            (*params[b])[i] = keep + h;
            const double lp = loss_of(model).loss;
            (*params[b])[i] = keep - h;
            const double lm = loss_of(model).loss;
            (*params[b])[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = (*grads[b])[i];
            const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            block_err[b] = std::max(block_err[b], rel);
        }
    }
    const double worst = *std::max_element(block_err, block_err + 4);
    const bool pass = worst <= kGradTol;

    std::cout << (pass ? "PASS" : "FAIL") << "  loss=" << loss_kind_name(cc.loss)
              << " head=" << head_kind_name(cc.head) << "  max_rel_err=" << fmt(worst)
              << "  blocks:";
    for (int b = 0; b < 4; ++b) std::cout << " " << block_names[b] << "=" << fmt(block_err[b]);
    std::cout << "\n";
    return pass;
}

int cmd_gradcheck(const GlobalArgs& g, const GradcheckArgs& a) {
    if (a.f_in < 1 || a.f_h < 1 || a.k_u < 2)
        throw std::invalid_argument("gradcheck needs --fin/--hidden >= 1 and --ku >= 2");
    std::vector<LossKind> losses{LossKind::kCE, LossKind::kNullBCE, LossKind::kCRBCE};
    std::vector<HeadKind> heads{HeadKind::kLinear, HeadKind::kCosine};
    if (!a.loss.empty()) losses = {loss_kind_from_name(a.loss)};
    if (!a.head.empty()) heads = {head_kind_from_name(a.head)};

    bool all_pass = true;
    for (LossKind loss : losses)
        for (HeadKind head : heads)
            all_pass &= run_gradcheck_case({loss, head}, a, g.seed);
    return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------- conflict-demo

// Gradient of a loss with respect to one logit channel, for a single
// contribution (one image), at all-zero logits.
double channel_grad(LossKind loss, const Grid3& logits, const LabelMap& labels_local,
                    const std::string& dataset_id, const UnifiedLabelSpace& space,
                    const MultiLabelTable& table, int channel) {
    LossGrad lg;
    switch (loss) {
        case LossKind::kCE:
            lg = ce_loss_grad(logits, remap_labels(labels_local, dataset_id, space));
            break;
        case LossKind::kNullBCE:
            lg = null_bce_loss_grad(logits, remap_labels(labels_local, dataset_id, space),
                                    space.membership(dataset_id));
            break;
        case LossKind::kCRBCE:
            lg = cr_bce_loss_grad(logits,
                                  expand_pixel_labels(labels_local, dataset_id, table, space));
            break;
    }
    double sum = 0.0;
    for (int px = 0; px < logits.pixels(); ++px)
        sum += lg.grad.v[static_cast<size_t>(px) * logits.c + channel];
    return sum;
}

int local_index_of(const DatasetTaxonomy& tax, const std::string& name) {
    const auto it = std::find(tax.classes.begin(), tax.classes.end(), name);
    if (it == tax.classes.end())
        throw std::logic_error("fixture class missing: " + name);
    return static_cast<int>(it - tax.classes.begin());
}

int cmd_conflict_demo(const GlobalArgs& g) {
    if (g.out.empty()) throw std::invalid_argument("conflict-demo needs --out");

    const HierarchySpec spec = default_fixture();
    const auto taxes = taxonomies(spec);
    const UnifiedLabelSpace space = unify(taxes);
    const MultiLabelTable table = table_from_triples(planted_relations(spec), space, taxes);

    const DatasetTaxonomy& coarse = taxes[0];
    const DatasetTaxonomy& fine = taxes[1];
    const std::vector<LossKind> losses{LossKind::kCE, LossKind::kNullBCE, LossKind::kCRBCE};
    fs::create_directories(g.out);

    // Two annotators see the identical content; logits are held at zero so
    // only the labels drive the gradients. First the out-of-space case: the
    // merged class "rider" against a fine label that the rider dataset would
    // also have called rider.
    const int rider = *space.index_of("rider");
    Grid3 zeros(1, 1, space.size());
    LabelMap coarse_rider(1, 1, local_index_of(coarse, "rider"));
    LabelMap fine_moto(1, 1, local_index_of(fine, "motorcyclist"));

    std::string probe = "loss,channel,grad_first,grad_second,product,conflict\n";
    std::cout << "shared channel 'rider', identical pixel, labels rider vs motorcyclist:\n";
    for (LossKind loss : losses) {
        const double g1 =
            channel_grad(loss, zeros, coarse_rider, coarse.dataset_id, space, table, rider);
        const double g2 =
            channel_grad(loss, zeros, fine_moto, fine.dataset_id, space, table, rider);
        const ConflictReport rep = conflict_probe(g1, g2);
        probe += loss_kind_name(loss) + ",rider," + fmt(g1) + "," + fmt(g2) + "," +
                 fmt(rep.product) + "," + (rep.conflict ? "true" : "false") + "\n";
        std::cout << "  " << loss_kind_name(loss) << ": " << fmt(g1) << " vs " << fmt(g2)
                  << (rep.conflict ? "  -> conflict" : "  -> no conflict") << "\n";
    }
    write_text(fs::path(g.out) / "probe.csv", probe);

    // Overlap sweep on the in-space split road/lane_marking: dataset FINE
    // labels a fraction of the identical pixels road (agreeing with COARSE)
    // and the rest lane_marking.
    const int road = *space.index_of("road");
    Grid3 zeros4(1, 4, space.size());
    LabelMap coarse_road(1, 4, local_index_of(coarse, "road"));
    const int fine_road = local_index_of(fine, "road");
    const int fine_lane = local_index_of(fine, "lane_marking");

    std::string sweep = "overlap,loss,channel,grad_first,grad_second,product,conflict\n";
    for (int agree = 0; agree <= 4; ++agree) {
        LabelMap fine_mix(1, 4, fine_lane);
        for (int i = 0; i < agree; ++i) fine_mix.v[i] = fine_road;
        for (LossKind loss : losses) {
            const double g1 =
                channel_grad(loss, zeros4, coarse_road, coarse.dataset_id, space, table, road);
            const double g2 =
                channel_grad(loss, zeros4, fine_mix, fine.dataset_id, space, table, road);
            const ConflictReport rep = conflict_probe(g1, g2);
            sweep += fmt(agree / 4.0) + "," + loss_kind_name(loss) + ",road," + fmt(g1) + "," +
                     fmt(g2) + "," + fmt(rep.product) + "," +
                     (rep.conflict ? "true" : "false") + "\n";
        }
    }
    write_text(fs::path(g.out) / "overlap_sweep.csv", sweep);

    std::cout << "wrote probe.csv and overlap_sweep.csv to " << g.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-dataset segmentation lab: unified label spaces, "
                 "conflict-free losses, relation discovery"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    auto* seed_opt = app.add_option("--seed", g.seed, "Base RNG seed");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--threads", g.threads, "Worker threads (0 = hardware)")
        ->envname("UNISEG_LAB_THREADS");
    app.add_option("--config", g.config, "JSON config file");

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "Generate synthetic datasets");
    gen->add_option("--spec", gen_args.spec_path, "Hierarchy spec JSON (default: built-in)");
    gen->add_option("--n-train", gen_args.n_train, "Training images per dataset");
    gen->add_option("--n-test", gen_args.n_test, "Test images per dataset");
    gen->add_option("--height", gen_args.height, "Image height");
    gen->add_option("--width", gen_args.width, "Image width");

    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "Train one model");
    tr->add_option("--data", train_args.data, "gen output directory");
    tr->add_option("--loss", train_args.loss, "ce | null_bce | cr_bce");
    tr->add_option("--table", train_args.table_csv,
                   "Frozen relation CSV (cr_bce only; skips stage 1)");

    RelationsArgs rel_args;
    auto* rel = app.add_subcommand("relations", "Discover class relations from a checkpoint");
    rel->add_option("--checkpoint", rel_args.checkpoint, "Stage-1 model checkpoint");
    rel->add_option("--data", rel_args.data, "gen output (or dump) directory");
    auto* tau_opt = rel->add_option("--tau", rel_args.tau, "Override the automatic threshold");

    ExperimentArgs exp_args;
    auto* exp = app.add_subcommand("experiment", "Leave-one-out loss comparison grid");
    exp->add_option("--data", exp_args.data, "gen output directory");
    exp->add_option("--seeds", exp_args.seeds_csv, "Comma-separated seed list");

    GradcheckArgs gc_args;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gc->add_option("--loss", gc_args.loss, "Restrict to one loss");
    gc->add_option("--head", gc_args.head, "Restrict to one head");
    gc->add_option("--fin", gc_args.f_in, "Input feature dim");
    gc->add_option("--hidden", gc_args.f_h, "Hidden units");
    gc->add_option("--ku", gc_args.k_u, "Output channels");
    gc->add_flag("--corrupt", gc_args.corrupt, "Corrupt one gradient entry (negative control)");

    auto* demo = app.add_subcommand("conflict-demo",
                                    "Gradient signs under conflicting annotations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    g.seed_set = seed_opt->count() > 0;
    rel_args.tau_set = tau_opt->count() > 0;

    try {
        if (app.got_subcommand(gen)) return cmd_gen(g, gen_args);
        if (app.got_subcommand(tr)) return cmd_train(g, train_args);
        if (app.got_subcommand(rel)) return cmd_relations(g, rel_args);
        if (app.got_subcommand(exp)) return cmd_experiment(g, exp_args);
        if (app.got_subcommand(gc)) return cmd_gradcheck(g, gc_args);
        if (app.got_subcommand(demo)) return cmd_conflict_demo(g);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
