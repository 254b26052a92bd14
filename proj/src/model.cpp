#include "uniseg/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace uniseg {

namespace {
constexpr double kNormEps = 1e-12;
constexpr int kCheckpointVersion = 1;

void check_spec(const ModelSpec& s) {
    if (s.f_in <= 0 || s.f_h <= 0 || s.k_u <= 0)
        throw std::invalid_argument("model spec: dimensions must be positive");
    if (s.head == HeadKind::kCosine && s.scale_t <= 0.0)
        throw std::invalid_argument("model spec: cosine scale must be positive");
}

double guarded_norm(const double* v, int n) {
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += v[i] * v[i];
    return std::sqrt(dot + kNormEps);
}
}  // namespace

std::string head_kind_name(HeadKind kind) {
    return kind == HeadKind::kLinear ? "linear" : "cosine";
}

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "linear") return HeadKind::kLinear;
    if (name == "cosine") return HeadKind::kCosine;
    throw std::invalid_argument("unknown head kind: " + name);
}

int SegModel::param_count() const {
    return static_cast<int>(w1.size() + b1.size() + w2.size() + b2.size());
}

GradBundle GradBundle::zeros_like(const SegModel& m) {
    GradBundle g;
    g.w1.assign(m.w1.size(), 0.0);
    g.b1.assign(m.b1.size(), 0.0);
    g.w2.assign(m.w2.size(), 0.0);
    g.b2.assign(m.b2.size(), 0.0);
    return g;
}

void GradBundle::accumulate(const GradBundle& other, double scale) {
    auto mine = blocks();
    auto theirs = other.blocks();
    for (int b = 0; b < 4; ++b) {
        if (mine[b]->size() != theirs[b]->size())
            throw std::invalid_argument("GradBundle::accumulate: shape mismatch");
        for (size_t i = 0; i < mine[b]->size(); ++i) (*mine[b])[i] += (*theirs[b])[i] * scale;
    }
}

SegModel init_model(const ModelSpec& spec, uint64_t seed) {
    check_spec(spec);
    SegModel m;
    m.spec = spec;
    m.b1.assign(spec.f_h, 0.0);
    m.w1.resize(static_cast<size_t>(spec.f_h) * spec.f_in);
    m.w2.resize(static_cast<size_t>(spec.k_u) * spec.f_h);
    if (spec.head == HeadKind::kLinear) m.b2.assign(spec.k_u, 0.0);

    std::mt19937_64 rng(seed);
    const double a1 = std::sqrt(6.0 / (spec.f_in + spec.f_h));
    std::uniform_real_distribution<double> d1(-a1, a1);
    for (auto& w : m.w1) w = d1(rng);
    const double a2 = std::sqrt(6.0 / (spec.f_h + spec.k_u));
    std::uniform_real_distribution<double> d2(-a2, a2);
    for (auto& w : m.w2) w = d2(rng);
    return m;
}

Grid3 forward_hidden(const SegModel& m, const Grid3& features) {
    if (features.c != m.spec.f_in)
        throw std::invalid_argument("forward: feature dim mismatch");
    Grid3 hidden(features.h, features.w, m.spec.f_h);
    for (int px = 0; px < features.pixels(); ++px) {
        const double* x = &features.v[static_cast<size_t>(px) * features.c];
        double* h = &hidden.v[static_cast<size_t>(px) * m.spec.f_h];
        for (int j = 0; j < m.spec.f_h; ++j) {
            double z = m.b1[j];
            const double* wrow = &m.w1[static_cast<size_t>(j) * m.spec.f_in];
            for (int i = 0; i < m.spec.f_in; ++i) z += wrow[i] * x[i];
            h[j] = std::tanh(z);
        }
    }
    return hidden;
}

Grid3 forward_from_hidden(const SegModel& m, const Grid3& hidden) {
    if (hidden.c != m.spec.f_h)
        throw std::invalid_argument("forward: hidden dim mismatch");
    const int fh = m.spec.f_h;
    const int ku = m.spec.k_u;
    Grid3 logits(hidden.h, hidden.w, ku);

    if (m.spec.head == HeadKind::kLinear) {
        for (int px = 0; px < hidden.pixels(); ++px) {
            const double* h = &hidden.v[static_cast<size_t>(px) * fh];
            double* o = &logits.v[static_cast<size_t>(px) * ku];
            for (int k = 0; k < ku; ++k) {
                double z = m.b2[k];
                const double* wrow = &m.w2[static_cast<size_t>(k) * fh];
                for (int j = 0; j < fh; ++j) z += wrow[j] * h[j];
                o[k] = z;
            }
        }
        return logits;
    }

    std::vector<double> proto_norm(ku);
    for (int k = 0; k < ku; ++k)
        proto_norm[k] = guarded_norm(&m.w2[static_cast<size_t>(k) * fh], fh);
    for (int px = 0; px < hidden.pixels(); ++px) {
        const double* h = &hidden.v[static_cast<size_t>(px) * fh];
        double* o = &logits.v[static_cast<size_t>(px) * ku];
        double hn = guarded_norm(h, fh);
        for (int k = 0; k < ku; ++k) {
            const double* phi = &m.w2[static_cast<size_t>(k) * fh];
            double dot = 0.0;
            for (int j = 0; j < fh; ++j) dot += phi[j] * h[j];
            o[k] = m.spec.scale_t * dot / (proto_norm[k] * hn);
        }
    }
    return logits;
}

Grid3 forward(const SegModel& m, const Grid3& features) {
    return forward_from_hidden(m, forward_hidden(m, features));
}

GradBundle backward_cached(const SegModel& m, const Grid3& features, const Grid3& hidden,
                           const Grid3& dl_dlogits) {
    if (!dl_dlogits.same_shape(Grid3(features.h, features.w, m.spec.k_u)))
        throw std::invalid_argument("backward: gradient shape mismatch");
    const int fin = m.spec.f_in;
    const int fh = m.spec.f_h;
    const int ku = m.spec.k_u;

    GradBundle g = GradBundle::zeros_like(m);
    std::vector<double> dh(fh);

    std::vector<double> proto_norm;
    if (m.spec.head == HeadKind::kCosine) {
        proto_norm.resize(ku);
        for (int k = 0; k < ku; ++k)
            proto_norm[k] = guarded_norm(&m.w2[static_cast<size_t>(k) * fh], fh);
    }

    for (int px = 0; px < features.pixels(); ++px) {
        const double* x = &features.v[static_cast<size_t>(px) * fin];
        const double* h = &hidden.v[static_cast<size_t>(px) * fh];
        const double* dO = &dl_dlogits.v[static_cast<size_t>(px) * ku];
        std::fill(dh.begin(), dh.end(), 0.0);

        if (m.spec.head == HeadKind::kLinear) {
            for (int k = 0; k < ku; ++k) {
                double d = dO[k];
                if (d == 0.0) continue;
                double* gw = &g.w2[static_cast<size_t>(k) * fh];
                const double* wrow = &m.w2[static_cast<size_t>(k) * fh];
                for (int j = 0; j < fh; ++j) {
                    gw[j] += d * h[j];
                    dh[j] += d * wrow[j];
                }
                g.b2[k] += d;
            }
        } else {
            // S_k = t * (phi_k . h) / (|phi_k| |h|) with guarded norms.
            // dS/dphi = t/(|phi||h|) * (h - (phi.h)/|phi|^2 * phi)
            // dS/dh   = t/(|phi||h|) * (phi - (phi.h)/|h|^2 * h)
            double hn = guarded_norm(h, fh);
            for (int k = 0; k < ku; ++k) {
                double d = dO[k];
                if (d == 0.0) continue;
                const double* phi = &m.w2[static_cast<size_t>(k) * fh];
                double* gw = &g.w2[static_cast<size_t>(k) * fh];
                double pn = proto_norm[k];
                double dot = 0.0;
                for (int j = 0; j < fh; ++j) dot += phi[j] * h[j];
                double scale = m.spec.scale_t / (pn * hn);
                double cp = dot / (pn * pn);
                double ch = dot / (hn * hn);
                for (int j = 0; j < fh; ++j) {
                    gw[j] += d * scale * (h[j] - cp * phi[j]);
                    dh[j] += d * scale * (phi[j] - ch * h[j]);
                }
            }
        }

        for (int j = 0; j < fh; ++j) {
            double dz = dh[j] * (1.0 - h[j] * h[j]);
            if (dz == 0.0) continue;
            double* gw = &g.w1[static_cast<size_t>(j) * fin];
            for (int i = 0; i < fin; ++i) gw[i] += dz * x[i];
            g.b1[j] += dz;
        }
    }
    return g;
}

GradBundle backward(const SegModel& m, const Grid3& features, const Grid3& dl_dlogits) {
    return backward_cached(m, features, forward_hidden(m, features), dl_dlogits);
}

Grid3 cosine_scores(const Grid3& feats, const std::vector<double>& prototypes, int k,
                    double scale_t) {
    if (k <= 0 || prototypes.size() != static_cast<size_t>(k) * feats.c)
        throw std::invalid_argument("cosine_scores: prototype shape mismatch");
    const int f = feats.c;
    std::vector<double> pn(k);
    for (int r = 0; r < k; ++r) {
        double dot = 0.0;
        const double* phi = &prototypes[static_cast<size_t>(r) * f];
        for (int j = 0; j < f; ++j) dot += phi[j] * phi[j];
        if (dot == 0.0) throw std::domain_error("degenerate norm");
        pn[r] = std::sqrt(dot);
    }
    Grid3 out(feats.h, feats.w, k);
    for (int px = 0; px < feats.pixels(); ++px) {
        const double* x = &feats.v[static_cast<size_t>(px) * f];
        double dot = 0.0;
        for (int j = 0; j < f; ++j) dot += x[j] * x[j];
        if (dot == 0.0) throw std::domain_error("degenerate norm");
        double xn = std::sqrt(dot);
        double* o = &out.v[static_cast<size_t>(px) * k];
        for (int r = 0; r < k; ++r) {
            const double* phi = &prototypes[static_cast<size_t>(r) * f];
            double d = 0.0;
            for (int j = 0; j < f; ++j) d += phi[j] * x[j];
            o[r] = scale_t * d / (pn[r] * xn);
        }
    }
    return out;
}

void save_checkpoint(const SegModel& m, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["f_in"] = m.spec.f_in;
    j["f_h"] = m.spec.f_h;
    j["k_u"] = m.spec.k_u;
    j["head"] = head_kind_name(m.spec.head);
    j["scale_t"] = m.spec.scale_t;
    j["w1"] = m.w1;
    j["b1"] = m.b1;
    j["w2"] = m.w2;
    j["b2"] = m.b2;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

SegModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint parse error in " + path + ": " + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint version mismatch in " + path);
    SegModel m;
    m.spec.f_in = j.at("f_in").get<int>();
    m.spec.f_h = j.at("f_h").get<int>();
    m.spec.k_u = j.at("k_u").get<int>();
    m.spec.head = head_kind_from_name(j.at("head").get<std::string>());
    m.spec.scale_t = j.at("scale_t").get<double>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<std::vector<double>>();
    check_spec(m.spec);
    size_t want_w1 = static_cast<size_t>(m.spec.f_h) * m.spec.f_in;
    size_t want_w2 = static_cast<size_t>(m.spec.k_u) * m.spec.f_h;
    size_t want_b2 = m.spec.head == HeadKind::kLinear ? m.spec.k_u : 0;
    if (m.w1.size() != want_w1 || m.b1.size() != static_cast<size_t>(m.spec.f_h) ||
        m.w2.size() != want_w2 || m.b2.size() != want_b2)
        throw std::runtime_error("checkpoint block sizes inconsistent in " + path);
    return m;
}

}  // namespace uniseg
