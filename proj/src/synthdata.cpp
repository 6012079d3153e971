#include "factorkit/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "factorkit/errors.hpp"
#include "factorkit/parallel.hpp"
#include "factorkit/rng.hpp"

namespace factorkit::synthdata {

namespace {

constexpr char kMagic[4] = {'F', 'K', 'D', 'S'};
constexpr uint32_t kVersion = 1;

// Head geometry must stay above the glyph strip (rows >= 0.75 * S).
constexpr double kHeadFloor = 0.72;

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

void put_pixel(Tensor<float>& img, int channels, int y, int x, const double* color) {
    const int size = static_cast<int>(img.dim(1));
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    if (channels == 1) {
        img.data[static_cast<size_t>(y * size + x)] =
            static_cast<float>(0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2]);
    } else {
        for (int c = 0; c < 3; ++c)
            img.data[static_cast<size_t>((c * size + y) * size + x)] = static_cast<float>(color[c]);
    }
}

double region_mean(const Tensor<float>& images, int64_t idx, const GlyphLayout& g, int row_lo,
                   int row_hi) {
    const int64_t C = images.dim(1), S = images.dim(2);
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = row_lo; y <= row_hi; ++y)
            for (int64_t x = g.col_lo; x <= g.col_hi; ++x) {
                acc += images.at(idx, c, y, x);
                ++count;
            }
    return acc / static_cast<double>(count);
}

std::string manifest_text(const DatasetManifest& m) {
    std::ostringstream os;
    os.precision(17);
    os << "seed=" << m.seed << "\n"
       << "n=" << m.n << "\n"
       << "image_size=" << m.image_size << "\n"
       << "channels=" << m.channels << "\n"
       << "train=" << m.n_train << "\n"
       << "val=" << m.n_val << "\n"
       << "test=" << m.n_test << "\n";
    static const char* names[kFactorCount] = {"center_x", "center_y", "radius",
                                              "hue",      "shape",    "brightness"};
    for (int i = 0; i < kFactorCount; ++i)
        os << "range_" << names[i] << "=" << m.ranges.factors[static_cast<size_t>(i)].lo << ","
           << m.ranges.factors[static_cast<size_t>(i)].hi << "\n";
    return os.str();
}

DatasetManifest parse_manifest(const std::string& text) {
    DatasetManifest m;
    static const char* names[kFactorCount] = {"center_x", "center_y", "radius",
                                              "hue",      "shape",    "brightness"};
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "seed") m.seed = std::stoull(value);
        else if (key == "n") m.n = std::stoll(value);
        else if (key == "image_size") m.image_size = std::stoi(value);
        else if (key == "channels") m.channels = std::stoi(value);
        else if (key == "train") m.n_train = std::stoll(value);
        else if (key == "val") m.n_val = std::stoll(value);
        else if (key == "test") m.n_test = std::stoll(value);
        else {
            for (int i = 0; i < kFactorCount; ++i)
                if (key == std::string("range_") + names[i]) {
                    const auto comma = value.find(',');
                    if (comma == std::string::npos)
                        throw IoError("dataset manifest: malformed range for " + key);
                    m.ranges.factors[static_cast<size_t>(i)].lo = std::stod(value.substr(0, comma));
                    m.ranges.factors[static_cast<size_t>(i)].hi = std::stod(value.substr(comma + 1));
                }
        }
    }
    return m;
}

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v, const char* field) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("dataset: truncated while reading ") + field);
}

}  // namespace

void SpecRanges::validate() const {
    static const char* names[kFactorCount] = {"center_x", "center_y", "radius",
                                              "hue",      "shape",    "brightness"};
    for (int i = 0; i < kFactorCount; ++i) {
        const auto& r = factors[static_cast<size_t>(i)];
        if (!(r.lo <= r.hi))
            throw ConfigError(std::string("sprite range ") + names[i] + ": min > max");
        if (r.lo < 0.0 || r.hi > 1.0)
            throw ConfigError(std::string("sprite range ") + names[i] + " outside [0,1]");
    }
    if (factors[kCenterY].hi + factors[kRadius].hi > kHeadFloor)
        throw ConfigError("sprite ranges: center_y + radius may reach the glyph strip");
}

GlyphLayout glyph_layout(int image_size) {
    if (image_size < 8) throw ContractError("glyph_layout: image_size must be >= 8");
    GlyphLayout g;
    const int strip = image_size - (3 * image_size) / 4;
    g.strip_top = (3 * image_size) / 4;
    const int smile_h = std::max(1, (strip * 2) / 5);
    const int flat_h = std::max(1, strip / 4);
    g.smile_lo = g.strip_top;
    g.smile_hi = g.strip_top + smile_h - 1;
    g.flat_hi = image_size - 1;
    g.flat_lo = image_size - flat_h;
    g.col_lo = (28 * image_size) / 100;
    g.col_hi = (72 * image_size) / 100 - 1;
    g.thickness = image_size >= 24 ? 2 : 1;
    return g;
}

Tensor<float> render_sprite(const SpriteSpec& spec) {
    if (spec.image_size < 8) throw ContractError("render_sprite: image_size must be >= 8");
    if (spec.channels != 1 && spec.channels != 3)
        throw ContractError("render_sprite: channels must be 1 or 3");
    const int S = spec.image_size;
    const int C = spec.channels;
    Tensor<float> img({static_cast<int64_t>(C), S, S});

    const double cx = spec.identity[kCenterX] * S;
    const double cy = spec.identity[kCenterY] * S;
    const double radius = spec.identity[kRadius] * S;
    const double exponent = 1.6 + 2.4 * spec.identity[kShape];
    double head[3];
    hsv_to_rgb(spec.identity[kHue], 0.65, spec.identity[kBrightness], head);

    // Head: filled superellipse.
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y_hi = std::min(S - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x_hi = std::min(S - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dy = std::abs((y - cy) / radius);
            const double dx = std::abs((x - cx) / radius);
            if (std::pow(dx, exponent) + std::pow(dy, exponent) <= 1.0)
                put_pixel(img, C, y, x, head);
        }

    // Eyes: two dark dots, skipped when too small to resolve.
    if (S >= 16) {
        const double eye_color[3] = {0.08, 0.08, 0.08};
        const double eye_r = std::max(1.0, 0.16 * radius);
        for (const double side : {-1.0, 1.0}) {
            const double ex = cx + side * 0.42 * radius;
            const double ey = cy - 0.30 * radius;
            for (int y = static_cast<int>(ey - eye_r); y <= static_cast<int>(ey + eye_r) + 1; ++y)
                for (int x = static_cast<int>(ex - eye_r); x <= static_cast<int>(ex + eye_r) + 1;
                     ++x) {
                    const double ddx = x - ex, ddy = y - ey;
                    if (ddx * ddx + ddy * ddy <= eye_r * eye_r) put_pixel(img, C, y, x, eye_color);
                }
        }
    }

    // Mouth glyph: white smile arc or flat bar in the reserved strip.
    const GlyphLayout g = glyph_layout(S);
    const double white[3] = {1.0, 1.0, 1.0};
    const double col_center = 0.5 * (g.col_lo + g.col_hi);
    const double half_width = std::max(1.0, 0.5 * (g.col_hi - g.col_lo));
    for (int x = g.col_lo; x <= g.col_hi; ++x) {
        int row;
        if (spec.attribute == 1) {
            const double t = (x - col_center) / half_width;
            row = g.smile_lo +
                  static_cast<int>(std::lround((g.smile_hi - g.smile_lo) * (1.0 - t * t)));
        } else {
            row = g.flat_lo;
        }
        for (int k = 0; k < g.thickness; ++k) {
            const int y = row + k;
            const int cap = spec.attribute == 1 ? g.smile_hi : g.flat_hi;
            if (y <= cap) put_pixel(img, C, y, x, white);
        }
    }
    return img;
}

std::vector<SpriteSpec> sample_specs(int64_t n, uint64_t seed, const SpecRanges& ranges,
                                     int image_size, int channels) {
    if (n < 2) throw ConfigError("sample_specs: n must be >= 2 for label balancing");
    if (image_size < 8) throw ConfigError("sample_specs: image_size must be >= 8");
    ranges.validate();

    std::vector<SpriteSpec> specs(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
        auto& s = specs[static_cast<size_t>(i)];
        s.image_size = image_size;
        s.channels = channels;
        for (int f = 0; f < kFactorCount; ++f) {
            const auto& r = ranges.factors[static_cast<size_t>(f)];
            s.identity[static_cast<size_t>(f)] = rng.uniform(r.lo, r.hi);
        }
    }

    // Attributes: i.i.d. Bernoulli(0.5), then flip random majority labels
    // until the counts are exactly balanced. Identity draws stay untouched.
    Rng label_rng(derive_seed(seed ^ 0x6c6162656cULL, 0));
    int64_t ones = 0;
    for (auto& s : specs) {
        s.attribute = label_rng.bernoulli() ? 1 : 0;
        ones += s.attribute;
    }
    int64_t target = n / 2;
    if (n % 2 == 1 && label_rng.bernoulli()) ++target;
    while (ones != target) {
        const int need = ones > target ? 1 : 0;  // label value to flip away from
        const auto idx = static_cast<size_t>(label_rng.below(static_cast<uint64_t>(n)));
        if (specs[idx].attribute == need) {
            specs[idx].attribute = 1 - need;
            ones += need == 1 ? -1 : 1;
        }
    }
    return specs;
}

std::pair<int64_t, int64_t> Dataset::split_range(Split s) const {
    switch (s) {
        case Split::train: return {0, manifest.n_train};
        case Split::val: return {manifest.n_train, manifest.n_train + manifest.n_val};
        case Split::test:
        default: return {manifest.n_train + manifest.n_val, n()};
    }
}

std::pair<Tensor<float>, std::vector<uint8_t>> Dataset::split_batch(Split s,
                                                                    int label_filter) const {
    const auto [begin, end] = split_range(s);
    std::vector<int64_t> keep;
    for (int64_t i = begin; i < end; ++i)
        if (label_filter < 0 || labels[static_cast<size_t>(i)] == label_filter) keep.push_back(i);
    const int64_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensor<float> out({static_cast<int64_t>(keep.size()), C, H, W});
    std::vector<uint8_t> out_labels(keep.size());
    const int64_t stride = C * H * W;
    for (size_t k = 0; k < keep.size(); ++k) {
        std::memcpy(out.ptr() + static_cast<int64_t>(k) * stride, images.ptr() + keep[k] * stride,
                    sizeof(float) * static_cast<size_t>(stride));
        out_labels[k] = labels[static_cast<size_t>(keep[k])];
    }
    return {std::move(out), std::move(out_labels)};
}

Tensor<float> Dataset::image(int64_t i) const {
    const int64_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensor<float> out({1, C, H, W});
    std::memcpy(out.ptr(), images.ptr() + i * C * H * W,
                sizeof(float) * static_cast<size_t>(C * H * W));
    return out;
}

Dataset generate_dataset(int64_t n, uint64_t seed, const SpecRanges& ranges, int image_size,
                         int channels) {
    const auto specs = sample_specs(n, seed, ranges, image_size, channels);
    Dataset d;
    d.images = Tensor<float>({n, channels, image_size, image_size});
    d.labels.resize(static_cast<size_t>(n));
    const int64_t stride = static_cast<int64_t>(channels) * image_size * image_size;
    parallel_for(n, [&](int64_t i) {
        const Tensor<float> img = render_sprite(specs[static_cast<size_t>(i)]);
        std::memcpy(d.images.ptr() + i * stride, img.ptr(),
                    sizeof(float) * static_cast<size_t>(stride));
        d.labels[static_cast<size_t>(i)] =
            static_cast<uint8_t>(specs[static_cast<size_t>(i)].attribute);
    });
    d.manifest.seed = seed;
    d.manifest.n = n;
    d.manifest.image_size = image_size;
    d.manifest.channels = channels;
    d.manifest.ranges = ranges;
    d.manifest.n_train = std::llround(0.80 * static_cast<double>(n));
    d.manifest.n_val = std::llround(0.04 * static_cast<double>(n));
    d.manifest.n_test = n - d.manifest.n_train - d.manifest.n_val;
    return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_dataset: cannot open " + path);
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_pod(os, static_cast<uint64_t>(d.n()));
    write_pod(os, static_cast<uint32_t>(d.images.dim(2)));
    write_pod(os, static_cast<uint32_t>(d.images.dim(3)));
    write_pod(os, static_cast<uint32_t>(d.images.dim(1)));
    os.write(reinterpret_cast<const char*>(d.images.ptr()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(d.images.numel())));
    os.write(reinterpret_cast<const char*>(d.labels.data()),
             static_cast<std::streamsize>(d.labels.size()));
    const std::string manifest = manifest_text(d.manifest);
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    if (!os) throw IoError("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_dataset: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("load_dataset: bad magic (not a factorkit dataset): " + path);
    uint32_t version = 0;
    read_pod(is, version, "version");
    if (version != kVersion)
        throw IoError("load_dataset: unsupported version " + std::to_string(version));
    uint64_t n = 0;
    uint32_t h = 0, w = 0, c = 0;
    read_pod(is, n, "sample count");
    read_pod(is, h, "height");
    read_pod(is, w, "width");
    read_pod(is, c, "channels");
    if (n == 0 || h < 8 || w != h || (c != 1 && c != 3))
        throw IoError("load_dataset: implausible header dimensions");

    Dataset d;
    d.images = Tensor<float>({static_cast<int64_t>(n), static_cast<int64_t>(c),
                              static_cast<int64_t>(h), static_cast<int64_t>(w)});
    is.read(reinterpret_cast<char*>(d.images.ptr()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(d.images.numel())));
    if (!is) throw IoError("load_dataset: pixel block truncated");
    d.labels.resize(n);
    is.read(reinterpret_cast<char*>(d.labels.data()), static_cast<std::streamsize>(n));
    if (!is) throw IoError("load_dataset: label block truncated");
    std::string manifest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (manifest.empty()) throw IoError("load_dataset: manifest footer missing");
    d.manifest = parse_manifest(manifest);

    if (d.manifest.n != static_cast<int64_t>(n))
        throw IoError("load_dataset: manifest sample count disagrees with header");
    if (d.manifest.n_train + d.manifest.n_val + d.manifest.n_test != static_cast<int64_t>(n))
        throw IoError("load_dataset: split sizes do not sum to the sample count");
    for (const auto l : d.labels)
        if (l > 1) throw IoError("load_dataset: label block contains non-binary value");
    for (const float v : d.images.data)
        if (!(v >= 0.0f && v <= 1.0f)) throw IoError("load_dataset: pixel outside [0,1]");
    return d;
}

int pixel_rule_label(const Tensor<float>& images, int64_t index) {
    const GlyphLayout g = glyph_layout(static_cast<int>(images.dim(2)));
    const double smile = region_mean(images, index, g, g.smile_lo, g.smile_hi);
    const double flat = region_mean(images, index, g, g.flat_lo, g.flat_hi);
    return smile > flat ? 1 : 0;
}

std::vector<uint8_t> pixel_rule_labels(const Tensor<float>& images) {
    std::vector<uint8_t> out(static_cast<size_t>(images.dim(0)));
    for (int64_t i = 0; i < images.dim(0); ++i)
        out[static_cast<size_t>(i)] = static_cast<uint8_t>(pixel_rule_label(images, i));
    return out;
}

Tensor<float> glyph_mask(int image_size) {
    const GlyphLayout g = glyph_layout(image_size);
    Tensor<float> mask({image_size, image_size});
    for (int y = g.strip_top; y < image_size; ++y)
        for (int x = std::max(0, g.col_lo - 1); x <= std::min(image_size - 1, g.col_hi + 1); ++x)
            mask.data[static_cast<size_t>(y * image_size + x)] = 1.0f;
    return mask;
}

}  // namespace factorkit::synthdata
