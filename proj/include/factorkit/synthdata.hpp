#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "factorkit/tensor.hpp"

namespace factorkit::synthdata {

// Identity factor indices. All factors live in [0,1]; spatial ones are
// fractions of the image side.
enum Factor : int {
    kCenterX = 0,
    kCenterY = 1,
    kRadius = 2,
    kHue = 3,
    kShape = 4,       // superellipse exponent, 0 -> 1.6, 1 -> 4.0
    kBrightness = 5,
    kFactorCount = 6,
};

struct FactorRange {
    double lo = 0.0;
    double hi = 1.0;

    bool operator==(const FactorRange&) const = default;
};

// Bounds for the identity factors. The head must stay clear of the reserved
// glyph strip, hence the default ceiling on center-y + radius.
struct SpecRanges {
    std::array<FactorRange, kFactorCount> factors{{
        {0.34, 0.66},  // center x
        {0.28, 0.46},  // center y
        {0.15, 0.26},  // radius
        {0.00, 1.00},  // hue
        {0.00, 1.00},  // shape
        {0.55, 0.95},  // brightness
    }};

    void validate() const;
    bool operator==(const SpecRanges&) const = default;
};

// Full description of one sprite; rendering is a pure function of this.
struct SpriteSpec {
    std::array<double, kFactorCount> identity{};
    int attribute = 0;  // 1 -> smile arc, 0 -> flat bar
    int image_size = 32;
    int channels = 3;
};

// Reserved mouth-glyph regions, all rows/cols inclusive. The smile band and
// the flat band are disjoint for every image_size >= 8, which makes the
// pixel-rule oracle exact on rendered data.
struct GlyphLayout {
    int strip_top;  // first row of the reserved strip
    int smile_lo, smile_hi;
    int flat_lo, flat_hi;
    int col_lo, col_hi;
    int thickness;
};

GlyphLayout glyph_layout(int image_size);

// Renders one sprite as (C, H, W) in [0,1]. Deterministic: identical specs
// produce bit-identical images.
Tensor<float> render_sprite(const SpriteSpec& spec);

struct DatasetManifest {
    uint64_t seed = 0;
    int64_t n = 0;
    int image_size = 32;
    int channels = 3;
    SpecRanges ranges;
    int64_t n_train = 0, n_val = 0, n_test = 0;

    bool operator==(const DatasetManifest&) const = default;
};

enum class Split { train, val, test };

struct Dataset {
    Tensor<float> images;         // (N, C, H, W)
    std::vector<uint8_t> labels;  // N, values in {0,1}
    DatasetManifest manifest;

    int64_t n() const { return static_cast<int64_t>(labels.size()); }

    // Contiguous [begin, end) row range of a split.
    std::pair<int64_t, int64_t> split_range(Split s) const;

    // Copies one split (optionally only rows with the given label).
    std::pair<Tensor<float>, std::vector<uint8_t>> split_batch(Split s, int label_filter = -1) const;

    Tensor<float> image(int64_t i) const;
};

// Draws n sprite specs: identity factors from per-sample derived streams,
// attributes i.i.d. Bernoulli(0.5) then corrected to an exact 50/50 balance
// by flipping labels (identity draws are never touched).
std::vector<SpriteSpec> sample_specs(int64_t n, uint64_t seed, const SpecRanges& ranges,
                                     int image_size = 32, int channels = 3);

Dataset generate_dataset(int64_t n, uint64_t seed, const SpecRanges& ranges = SpecRanges{},
                         int image_size = 32, int channels = 3);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

// Exact attribute recovery for rendered sprites; threshold-based so it also
// grades soft decoder outputs.
int pixel_rule_label(const Tensor<float>& images, int64_t index);
std::vector<uint8_t> pixel_rule_labels(const Tensor<float>& images);

// (H, W) mask of the reserved glyph strip, 1 inside.
Tensor<float> glyph_mask(int image_size);

}  // namespace factorkit::synthdata
