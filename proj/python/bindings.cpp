// pybind11 surface over the core: label spaces, losses, the per-pixel model,
// fixture generation, training (including the relation pipeline) and
// evaluation. Arrays cross the boundary as numpy (H, W[, C]) with features as
// float64 and labels as int32.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uniseg/eval.hpp"
#include "uniseg/labelspace.hpp"
#include "uniseg/losses.hpp"
#include "uniseg/model.hpp"
#include "uniseg/relations.hpp"
#include "uniseg/synth.hpp"
#include "uniseg/trainer.hpp"

namespace py = pybind11;
using namespace uniseg;

namespace {

Grid3 grid_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3) throw std::invalid_argument("expected a (H, W, C) float array");
    Grid3 g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
            static_cast<int>(a.shape(2)));
    std::memcpy(g.v.data(), a.data(), g.size() * sizeof(double));
    return g;
}

py::array_t<double> grid_to_numpy(const Grid3& g) {
    py::array_t<double> a({g.h, g.w, g.c});
    std::memcpy(a.mutable_data(), g.v.data(), g.size() * sizeof(double));
    return a;
}

LabelMap labels_from_numpy(
    const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a (H, W) int32 array");
    LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.v.data(), a.data(), m.v.size() * sizeof(int32_t));
    return m;
}

py::array_t<int32_t> labels_to_numpy(const LabelMap& m) {
    py::array_t<int32_t> a({m.h, m.w});
    std::memcpy(a.mutable_data(), m.v.data(), m.v.size() * sizeof(int32_t));
    return a;
}

std::vector<uint8_t> mask_from_list(const std::vector<bool>& v) {
    std::vector<uint8_t> m(v.size());
    for (size_t i = 0; i < v.size(); ++i) m[i] = v[i] ? 1 : 0;
    return m;
}

// (features, labels) pairs per dataset id, as the trainer expects them.
std::map<std::string, std::vector<Sample>> samples_from_dict(const py::dict& d) {
    std::map<std::string, std::vector<Sample>> out;
    for (const auto& item : d) {
        const auto id = item.first.cast<std::string>();
        for (const auto& entry : item.second.cast<py::list>()) {
            const auto pair = entry.cast<py::tuple>();
            if (pair.size() != 2)
                throw std::invalid_argument("samples must be (features, labels) tuples");
            Sample s;
            s.dataset_id = id;
            s.features = grid_from_numpy(pair[0].cast<py::array_t<double>>());
            s.labels = labels_from_numpy(pair[1].cast<py::array_t<int32_t>>());
            s.fine_truth = LabelMap(s.labels.h, s.labels.w);
            out[id].push_back(std::move(s));
        }
    }
    return out;
}

py::object tau_to_py(const std::optional<double>& tau) {
    return tau ? py::cast(*tau) : py::none();
}

}  // namespace

PYBIND11_MODULE(_uniseg, m) {
    m.doc() = "Unified-label-space segmentation lab (C++ core)";
    m.attr("IGNORE") = LabelMap::kIgnore;

    py::class_<DatasetTaxonomy>(m, "Taxonomy")
        .def(py::init([](std::string id, std::vector<std::string> classes) {
                 return DatasetTaxonomy{std::move(id), std::move(classes)};
             }),
             py::arg("dataset_id"), py::arg("classes"))
        .def_readonly("dataset_id", &DatasetTaxonomy::dataset_id)
        .def_readonly("classes", &DatasetTaxonomy::classes);

    py::class_<UnifiedLabelSpace>(m, "LabelSpace")
        .def_property_readonly("classes", &UnifiedLabelSpace::classes)
        .def_property_readonly("size", &UnifiedLabelSpace::size)
        .def_property_readonly("dataset_ids", &UnifiedLabelSpace::dataset_ids)
        .def("index_of",
             [](const UnifiedLabelSpace& s, const std::string& name) -> py::object {
                 const auto idx = s.index_of(name);
                 return idx ? py::cast(*idx) : py::none();
             })
        .def("membership",
             [](const UnifiedLabelSpace& s, const std::string& id) {
                 std::vector<bool> out;
                 for (uint8_t v : s.membership(id)) out.push_back(v != 0);
                 return out;
             })
        .def("remap", &UnifiedLabelSpace::remap)
        .def("remap_labels",
             [](const UnifiedLabelSpace& s, py::array_t<int32_t> labels,
                const std::string& id) {
                 return labels_to_numpy(remap_labels(labels_from_numpy(labels), id, s));
             },
             py::arg("labels"), py::arg("dataset_id"));

    m.def("unify", &unify, py::arg("taxonomies"));
    m.def("eval_projection", &eval_projection, py::arg("space"), py::arg("test_taxonomy"));

    m.def("softmax",
          [](py::array_t<double> logits) { return grid_to_numpy(softmax(grid_from_numpy(logits))); });
    m.def("sigmoid",
          [](py::array_t<double> logits) { return grid_to_numpy(sigmoid(grid_from_numpy(logits))); });

    m.def("ce_loss_grad",
          [](py::array_t<double> logits, py::array_t<int32_t> labels) {
              const LossGrad lg = ce_loss_grad(grid_from_numpy(logits), labels_from_numpy(labels));
              return py::make_tuple(lg.loss, grid_to_numpy(lg.grad), lg.terms);
          },
          py::arg("logits"), py::arg("labels"));
    m.def("null_bce_loss_grad",
          [](py::array_t<double> logits, py::array_t<int32_t> labels,
             const std::vector<bool>& membership) {
              const LossGrad lg = null_bce_loss_grad(
                  grid_from_numpy(logits), labels_from_numpy(labels), mask_from_list(membership));
              return py::make_tuple(lg.loss, grid_to_numpy(lg.grad), lg.terms);
          },
          py::arg("logits"), py::arg("labels"), py::arg("membership"));
    m.def("conflict_probe",
          [](double g1, double g2) {
              const ConflictReport r = conflict_probe(g1, g2);
              return py::make_tuple(r.product, r.conflict);
          },
          py::arg("g1"), py::arg("g2"));

    py::class_<SegModel>(m, "Model")
        .def_property_readonly("param_count", &SegModel::param_count)
        .def_property_readonly("channels", [](const SegModel& m_) { return m_.spec.k_u; })
        .def("forward",
             [](const SegModel& m_, py::array_t<double> features) {
                 return grid_to_numpy(forward(m_, grid_from_numpy(features)));
             },
             py::arg("features"))
        .def("save", [](const SegModel& m_, const std::string& path) { save_checkpoint(m_, path); },
             py::arg("path"));

    m.def("init_model",
          [](int f_in, int f_h, int k_u, const std::string& head, double scale_t, uint64_t seed) {
              return init_model(ModelSpec{f_in, f_h, k_u, head_kind_from_name(head), scale_t},
                                seed);
          },
          py::arg("f_in"), py::arg("f_h"), py::arg("k_u"), py::arg("head") = "linear",
          py::arg("scale_t") = 20.0, py::arg("seed") = 0);
    m.def("load_model", &load_checkpoint, py::arg("path"));

    py::class_<HierarchySpec>(m, "HierarchySpec")
        .def_readonly("fine_classes", &HierarchySpec::fine_classes)
        .def_readonly("feature_dim", &HierarchySpec::feature_dim)
        .def_property_readonly("dataset_ids", [](const HierarchySpec& s) {
            std::vector<std::string> ids;
            for (const auto& [id, coarsen] : s.datasets) {
                (void)coarsen;
                ids.push_back(id);
            }
            return ids;
        });

    m.def("default_fixture", &default_fixture);
    m.def("taxonomies", &taxonomies, py::arg("spec"));
    m.def("planted_relations", &planted_relations, py::arg("spec"));
    m.def("generate",
          [](const HierarchySpec& spec, const std::string& dataset_id, int n, int h, int w,
             uint64_t split_seed) {
              py::list out;
              for (const Sample& s : generate(spec, dataset_id, n, h, w, split_seed))
                  out.append(py::make_tuple(grid_to_numpy(s.features), labels_to_numpy(s.labels),
                                            labels_to_numpy(s.fine_truth)));
              return out;
          },
          py::arg("spec"), py::arg("dataset_id"), py::arg("n"), py::arg("h") = 32,
          py::arg("w") = 32, py::arg("split_seed") = 1);

    m.def("train",
          [](const py::dict& samples, const UnifiedLabelSpace& space,
             const std::string& config_json) {
              return train(samples_from_dict(samples), space,
                           train_config_from_json_text(config_json))
                  .model;
          },
          py::arg("samples"), py::arg("space"), py::arg("config") = "{}");

    m.def("run_cr_pipeline",
          [](const py::dict& samples, const UnifiedLabelSpace& space,
             const std::string& config_json, const std::string& stage1_json) {
              const auto pool = samples_from_dict(samples);
              const TrainConfig cfg = train_config_from_json_text(config_json);
              TrainConfig s1;
              if (stage1_json.empty()) {
                  // Reuse the run's schedule but let stage 1 pick the cosine
                  // learning-rate default instead of the main head's.
                  s1 = cfg;
                  s1.lr0 = 0.0;
              } else {
                  s1 = train_config_from_json_text(stage1_json);
              }
              const PipelineResult pr = run_cr_pipeline(pool, space, cfg, s1);
              py::dict out;
              out["model"] = pr.stage2.model;
              out["stage1_model"] = pr.stage1.model;
              out["tau"] = tau_to_py(pr.tau);
              out["warnings"] = pr.table.warnings;
              return out;
          },
          py::arg("samples"), py::arg("space"), py::arg("config") = "{}",
          py::arg("stage1_config") = "");

    m.def("discover_relations",
          [](const SegModel& model, const py::dict& samples, const UnifiedLabelSpace& space,
             const std::vector<DatasetTaxonomy>& taxes) {
              const auto pool = samples_from_dict(samples);
              const SimilarityTensor sim = compute_similarity(model, pool, space);
              const std::optional<double> tau = auto_tau(sim, space);
              const MultiLabelTable table = generate_multilabels(sim, tau, space);
              py::dict out;
              out["tau"] = tau_to_py(tau);
              out["relations"] = relation_triples(table, space, taxes);
              out["warnings"] = table.warnings;
              return out;
          },
          py::arg("model"), py::arg("samples"), py::arg("space"), py::arg("taxonomies"));

    m.def("evaluate",
          [](const SegModel& model, const py::list& test_samples,
             const DatasetTaxonomy& test_taxonomy, const UnifiedLabelSpace& space) {
              std::vector<Sample> set;
              for (const auto& entry : test_samples) {
                  const auto pair = entry.cast<py::tuple>();
                  Sample s;
                  s.dataset_id = test_taxonomy.dataset_id;
                  s.features = grid_from_numpy(pair[0].cast<py::array_t<double>>());
                  s.labels = labels_from_numpy(pair[1].cast<py::array_t<int32_t>>());
                  s.fine_truth = LabelMap(s.labels.h, s.labels.w);
                  set.push_back(std::move(s));
              }
              const ConfusionMatrix cm = evaluate(model, set, test_taxonomy, space);
              py::dict out;
              out["miou"] = mean_iou(cm);
              out["per_class_iou"] = per_class_iou(cm);
              py::array_t<long long> counts({cm.k, cm.k});
              std::memcpy(counts.mutable_data(), cm.counts.data(),
                          cm.counts.size() * sizeof(long long));
              out["confusion"] = counts;
              return out;
          },
          py::arg("model"), py::arg("test_samples"), py::arg("test_taxonomy"), py::arg("space"));

    m.def("multilabel_predict",
          [](const SegModel& model, py::array_t<double> features, const UnifiedLabelSpace& space,
             const std::string& dataset_id, const std::string& score, double threshold) {
              const ScoreKind kind = score == "softmax" ? ScoreKind::kSoftmax
                                                        : ScoreKind::kSigmoid;
              if (score != "softmax" && score != "sigmoid")
                  throw std::invalid_argument("score must be 'sigmoid' or 'softmax'");
              const MultiLabelPrediction p = multilabel_predict(
                  model, grid_from_numpy(features), space, dataset_id, kind, threshold);
              py::dict out;
              out["primary"] = labels_to_numpy(p.primary);
              out["override_class"] = labels_to_numpy(p.override_class);
              out["final"] = labels_to_numpy(p.final_map());
              return out;
          },
          py::arg("model"), py::arg("features"), py::arg("space"), py::arg("dataset_id"),
          py::arg("score") = "sigmoid", py::arg("threshold") = 0.5);
}
