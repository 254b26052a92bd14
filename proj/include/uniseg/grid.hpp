#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uniseg {

// Dense H x W x C grid of doubles, row-major with channel fastest.
// Used for per-pixel features, logits and probability maps.
struct Grid3 {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> v;

    Grid3() = default;
    Grid3(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {
        if (h_ <= 0 || w_ <= 0 || c_ <= 0)
            throw std::invalid_argument("Grid3: dimensions must be positive");
    }

    double& at(int y, int x, int k) { return v[(static_cast<size_t>(y) * w + x) * c + k]; }
    double at(int y, int x, int k) const { return v[(static_cast<size_t>(y) * w + x) * c + k]; }
    size_t size() const { return v.size(); }
    int pixels() const { return h * w; }

    bool same_shape(const Grid3& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Per-pixel integer class labels. kIgnore marks pixels excluded from all
// losses and metrics.
struct LabelMap {
    static constexpr int32_t kIgnore = 255;

    int h = 0;
    int w = 0;
    std::vector<int32_t> v;

    LabelMap() = default;
    LabelMap(int h_, int w_, int32_t fill = 0)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {
        if (h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("LabelMap: dimensions must be positive");
    }

    int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    int pixels() const { return h * w; }
};

}  // namespace uniseg
