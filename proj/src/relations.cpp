#include "uniseg/relations.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace uniseg {

SimilarityTensor compute_similarity(const SegModel& model,
                                    const std::map<std::string, std::vector<Sample>>& samples,
                                    const UnifiedLabelSpace& space) {
    if (model.spec.k_u != space.size())
        throw std::invalid_argument("compute_similarity: model channels != unified size");

    SimilarityTensor sim;
    sim.k_u = space.size();
    for (const auto& [dataset_id, list] : samples) {
        const int k_i = static_cast<int>(space.remap(dataset_id).size());
        auto& rows = sim.rows[dataset_id];
        rows.assign(k_i, SimilarityRow{});
        std::vector<std::vector<double>> acc(k_i, std::vector<double>(sim.k_u, 0.0));
        std::vector<long long> count(k_i, 0);

        for (const Sample& s : list) {
            Grid3 scores = sigmoid(forward(model, s.features));
            for (int px = 0; px < s.labels.pixels(); ++px) {
                int32_t c = s.labels.v[px];
                if (c == LabelMap::kIgnore) continue;
                if (c < 0 || c >= k_i)
                    throw std::out_of_range("compute_similarity: label outside taxonomy of '" +
                                            dataset_id + "'");
                const double* q = &scores.v[static_cast<size_t>(px) * sim.k_u];
                double* a = acc[c].data();
                for (int k = 0; k < sim.k_u; ++k) a[k] += q[k];
                ++count[c];
            }
        }
        for (int c = 0; c < k_i; ++c) {
            if (count[c] == 0) continue;
            rows[c].defined = true;
            rows[c].count = count[c];
            rows[c].s.resize(sim.k_u);
            for (int k = 0; k < sim.k_u; ++k)
                rows[c].s[k] = acc[c][k] / static_cast<double>(count[c]);
        }
    }
    return sim;
}

namespace {

const DatasetTaxonomy& taxonomy_for(const std::vector<DatasetTaxonomy>& taxonomies,
                                    const std::string& dataset_id) {
    for (const auto& t : taxonomies)
        if (t.dataset_id == dataset_id) return t;
    throw std::invalid_argument("no taxonomy for dataset '" + dataset_id + "'");
}

// Channels supervised by at least one dataset present in the tensor. Channels
// nobody in the pool trains carry untrained-prototype noise, not relational
// evidence, so discovery never considers them; with a single-dataset pool this
// leaves no out-of-space candidates at all and the pipeline stays self-only.
std::vector<uint8_t> pool_coverage(const SimilarityTensor& sim, const UnifiedLabelSpace& space) {
    std::vector<uint8_t> covered(static_cast<size_t>(space.size()), 0);
    for (const auto& [dataset_id, rows] : sim.rows) {
        const auto& member = space.membership(dataset_id);
        for (size_t k = 0; k < covered.size(); ++k) covered[k] |= member[k];
    }
    return covered;
}

// Argmax over the covered channels, ties toward the lowest index. A pool
// dataset's own channels are always covered, so the set is never empty.
int argmax_covered(const std::vector<double>& v, const std::vector<uint8_t>& covered) {
    int best = -1;
    for (int k = 0; k < static_cast<int>(v.size()); ++k)
        if (covered[static_cast<size_t>(k)] && (best < 0 || v[k] > v[best])) best = k;
    return best;
}

}  // namespace

std::optional<double> auto_tau(const SimilarityTensor& sim, const UnifiedLabelSpace& space) {
    const std::vector<uint8_t> covered = pool_coverage(sim, space);
    bool any_defined = false;
    bool any_cross = false;
    double sum = 0.0;
    long long n = 0;
    for (const auto& [dataset_id, rows] : sim.rows) {
        const auto& member = space.membership(dataset_id);
        for (const auto& row : rows) {
            if (!row.defined) continue;
            any_defined = true;
            if (!member[argmax_covered(row.s, covered)]) any_cross = true;
            double best_out = -1.0;
            for (int k = 0; k < sim.k_u; ++k)
                if (covered[static_cast<size_t>(k)] && !member[k] && row.s[k] > best_out)
                    best_out = row.s[k];
            if (best_out >= 0.0) {  // another pool dataset covers extra channels
                sum += best_out;
                ++n;
            }
        }
    }
    if (!any_defined) throw std::invalid_argument("auto_tau: similarity tensor is empty");
    if (!any_cross || n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

std::vector<std::pair<std::string, std::string>> tau_contributors(
    const SimilarityTensor& sim, const UnifiedLabelSpace& space,
    const std::vector<DatasetTaxonomy>& taxonomies) {
    const std::vector<uint8_t> covered = pool_coverage(sim, space);
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [dataset_id, rows] : sim.rows) {
        const auto& member = space.membership(dataset_id);
        for (size_t c = 0; c < rows.size(); ++c) {
            if (!rows[c].defined) continue;
            if (!member[argmax_covered(rows[c].s, covered)])
                out.emplace_back(dataset_id, taxonomy_for(taxonomies, dataset_id).classes[c]);
        }
    }
    return out;
}

MultiLabelTable generate_multilabels(const SimilarityTensor& sim, std::optional<double> tau,
                                     const UnifiedLabelSpace& space) {
    const std::vector<uint8_t> covered = pool_coverage(sim, space);
    MultiLabelTable table;
    table.k_u = space.size();
    for (const auto& [dataset_id, rows] : sim.rows) {
        const auto& to_uni = space.remap(dataset_id);
        auto& out = table.rows[dataset_id];
        out.resize(rows.size());
        for (size_t c = 0; c < rows.size(); ++c) {
            int self = to_uni[c];
            std::vector<int>& act = out[c];
            act.push_back(self);
            if (!rows[c].defined) {
                table.warnings.push_back(dataset_id + ": class " +
                                         space.classes()[self] +
                                         " has no labeled pixels; self-only entry");
                continue;
            }
            if (!tau) continue;
            double gate = std::max(*tau, rows[c].s[self]);
            for (int k = 0; k < table.k_u; ++k)
                if (k != self && covered[static_cast<size_t>(k)] && rows[c].s[k] > gate)
                    act.push_back(k);
            std::sort(act.begin(), act.end());
        }
    }
    return table;
}

MultiLabelTable table_from_triples(const std::vector<std::array<std::string, 3>>& triples,
                                   const UnifiedLabelSpace& space,
                                   const std::vector<DatasetTaxonomy>& taxonomies) {
    MultiLabelTable table;
    table.k_u = space.size();
    for (const auto& tax : taxonomies) {
        const auto& to_uni = space.remap(tax.dataset_id);
        auto& out = table.rows[tax.dataset_id];
        out.resize(tax.classes.size());
        for (size_t c = 0; c < tax.classes.size(); ++c) out[c].push_back(to_uni[c]);
    }
    for (const auto& [dataset_id, primary, secondary] : triples) {
        auto it = table.rows.find(dataset_id);
        if (it == table.rows.end())
            throw std::invalid_argument("relation names unknown dataset '" + dataset_id + "'");
        const auto& tax = taxonomy_for(taxonomies, dataset_id);
        auto cls = std::find(tax.classes.begin(), tax.classes.end(), primary);
        if (cls == tax.classes.end())
            throw std::invalid_argument("relation names unknown class '" + primary + "' in '" +
                                        dataset_id + "'");
        auto sec = space.index_of(secondary);
        if (!sec)
            throw std::invalid_argument("relation names unknown unified class '" + secondary +
                                        "'");
        auto& act = it->second[static_cast<size_t>(cls - tax.classes.begin())];
        if (std::find(act.begin(), act.end(), *sec) == act.end()) act.push_back(*sec);
        std::sort(act.begin(), act.end());
    }
    return table;
}

bool MultiLabelTable::self_only(const UnifiedLabelSpace& space) const {
    for (const auto& [dataset_id, out] : rows) {
        const auto& to_uni = space.remap(dataset_id);
        for (size_t c = 0; c < out.size(); ++c)
            if (out[c] != std::vector<int>{to_uni[c]}) return false;
    }
    return true;
}

TriStateLabelMap expand_pixel_labels(const LabelMap& local_labels, const std::string& dataset_id,
                                     const MultiLabelTable& table,
                                     const UnifiedLabelSpace& space) {
    const auto& member = space.membership(dataset_id);
    const int k_u = table.k_u;

    // A dataset the table never saw degrades to self-only entries.
    std::vector<std::vector<int>> self_rows;
    auto it = table.rows.find(dataset_id);
    if (it == table.rows.end()) {
        for (int uni : space.remap(dataset_id)) self_rows.push_back({uni});
    }
    const auto& entries = it != table.rows.end() ? it->second : self_rows;

    // Tri-state template per local class; pixels then copy their class row.
    std::vector<std::vector<int8_t>> tmpl(entries.size(),
                                          std::vector<int8_t>(k_u, TriStateLabelMap::kNull));
    for (size_t c = 0; c < entries.size(); ++c) {
        for (int k = 0; k < k_u; ++k)
            if (member[k]) tmpl[c][k] = TriStateLabelMap::kNegative;
        for (int k : entries[c]) tmpl[c][k] = TriStateLabelMap::kPositive;
    }

    TriStateLabelMap out(local_labels.h, local_labels.w, k_u);
    for (int px = 0; px < local_labels.pixels(); ++px) {
        int32_t c = local_labels.v[px];
        if (c == LabelMap::kIgnore) {
            out.valid[px] = 0;
            std::fill_n(&out.code[static_cast<size_t>(px) * k_u], k_u, TriStateLabelMap::kNull);
            continue;
        }
        if (c < 0 || c >= static_cast<int32_t>(entries.size()))
            throw std::out_of_range("expand_pixel_labels: label outside taxonomy");
        std::copy(tmpl[c].begin(), tmpl[c].end(), &out.code[static_cast<size_t>(px) * k_u]);
    }
    return out;
}

void export_similarity_csv(const SimilarityTensor& sim, const UnifiedLabelSpace& space,
                           const std::vector<DatasetTaxonomy>& taxonomies,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write similarity csv: " + path);
    out << "dataset_id,class,unified_class,score,count\n";
    for (const auto& [dataset_id, rows] : sim.rows) {
        const auto& tax = taxonomy_for(taxonomies, dataset_id);
        for (size_t c = 0; c < rows.size(); ++c) {
            if (!rows[c].defined) continue;
            for (int k = 0; k < sim.k_u; ++k)
                out << dataset_id << "," << tax.classes[c] << "," << space.classes()[k] << ","
                    << nlohmann::json(rows[c].s[k]).dump() << "," << rows[c].count << "\n";
        }
    }
}

std::vector<std::array<std::string, 3>> relation_triples(
    const MultiLabelTable& table, const UnifiedLabelSpace& space,
    const std::vector<DatasetTaxonomy>& taxonomies) {
    std::vector<std::array<std::string, 3>> out;
    for (const auto& [dataset_id, rows] : table.rows) {
        const auto& tax = taxonomy_for(taxonomies, dataset_id);
        const auto& to_uni = space.remap(dataset_id);
        for (size_t c = 0; c < rows.size(); ++c)
            for (int k : rows[c])
                if (k != to_uni[c])
                    out.push_back({dataset_id, tax.classes[c], space.classes()[k]});
    }
    return out;
}

void export_multilabel_csv(const MultiLabelTable& table, const UnifiedLabelSpace& space,
                           const std::vector<DatasetTaxonomy>& taxonomies,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write multilabel csv: " + path);
    out << "dataset_id,primary_class,secondary_class\n";
    for (const auto& row : relation_triples(table, space, taxonomies))
        out << row[0] << "," << row[1] << "," << row[2] << "\n";
}

}  // namespace uniseg
