#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "factorkit/autodiff.hpp"
#include "factorkit/errors.hpp"
#include "factorkit/rng.hpp"
#include "factorkit/tensor.hpp"

namespace factorkit::models {

// Convolutional architecture shared by encoder, decoder and discriminator:
// 4x4 stride-2 convolutions down to a 4x4 grid, mirrored by nearest-neighbour
// upsampling plus 3x3 convolutions on the way back up. Residual blocks are an
// optional same-resolution insert behind one flag.
struct ArchSpec {
    int image_size = 32;
    int channels = 3;
    int d_z = 16;
    int base_channels = 12;
    int residual_blocks = 0;
    bool share_trunk = true;  // y head reads the z trunk's features
    int aux_hidden = 64;
    double init_gain = 2.0;  // weights ~ N(0, init_gain / fan_in)
    // Initial scale of the decoder weights reading the attribute unit,
    // relative to the identity columns. The attribute is one redundant input
    // among d_z + 1; starting it small biases the unconstrained game toward
    // reading the attribute from the identity code (the naive baseline's
    // leak equilibrium) while the factorized model, whose identity code
    // carries no attribute signal, still adopts the unit as training
    // progresses.
    double attr_input_scale = 0.1;
    double leak = 0.2;

    int levels() const {
        int side = image_size, n = 0;
        while (side > 4) {
            side /= 2;
            ++n;
        }
        return n;
    }

    int width(int level) const { return base_channels << level; }
    int flat_features() const { return width(levels() - 1) * 16; }

    void validate() const {
        if (image_size < 8) throw ConfigError("arch: image_size must be >= 8");
        int side = image_size;
        while (side > 4 && side % 2 == 0) side /= 2;
        if (side != 4) throw ConfigError("arch: image_size must be 4 * 2^k");
        if (channels != 1 && channels != 3) throw ConfigError("arch: channels must be 1 or 3");
        if (d_z < 1) throw ConfigError("arch: d_z must be >= 1");
        if (base_channels < 1) throw ConfigError("arch: base_channels must be >= 1");
        if (residual_blocks < 0) throw ConfigError("arch: residual_blocks must be >= 0");
        if (aux_hidden < 1) throw ConfigError("arch: aux_hidden must be >= 1");
        if (!(init_gain > 0.0)) throw ConfigError("arch: init_gain must be > 0");
        if (!(attr_input_scale > 0.0))
            throw ConfigError("arch: attr_input_scale must be > 0");
    }

    bool operator==(const ArchSpec&) const = default;
};

// Named parameter store for one network. Values and gradients live here; the
// tape binds pointers into them during graph construction.
template <typename T>
struct Net {
    std::vector<std::string> names;
    std::vector<Tensor<T>> values;
    std::vector<Tensor<T>> grads;
    std::vector<int64_t> fan_in;
    std::unordered_map<std::string, size_t> index;

    void add(const std::string& name, std::vector<int64_t> shape, int64_t fan) {
        index.emplace(name, names.size());
        names.push_back(name);
        values.emplace_back(std::move(shape));
        grads.emplace_back(values.back().shape);
        fan_in.push_back(fan);
    }

    size_t at(const std::string& name) const {
        const auto it = index.find(name);
        if (it == index.end()) throw ContractError("net: unknown parameter " + name);
        return it->second;
    }

    Tensor<T>& value(const std::string& name) { return values[at(name)]; }
    Tensor<T>& grad(const std::string& name) { return grads[at(name)]; }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& v : values) n += v.numel();
        return n;
    }

    void zero_grads() {
        for (auto& g : grads) g.fill(T(0));
    }

    // Fan-in scaled Gaussian weights, zero biases (bias entries have fan 0).
    void init_params(Rng& rng, double gain) {
        for (size_t i = 0; i < values.size(); ++i) {
            if (fan_in[i] == 0) {
                values[i].fill(T(0));
                continue;
            }
            const double std_dev = std::sqrt(gain / static_cast<double>(fan_in[i]));
            for (auto& v : values[i].data) v = static_cast<T>(std_dev * rng.normal());
        }
    }

    template <typename U>
    Net<U> cast() const {
        Net<U> out;
        out.names = names;
        out.fan_in = fan_in;
        out.index = index;
        for (const auto& v : values) out.values.push_back(v.template cast<U>());
        for (const auto& v : values) out.grads.push_back(Tensor<U>::zeros(v.shape));
        return out;
    }
};

template <typename T>
struct NetworkBundle {
    ArchSpec arch;
    Net<T> encoder;
    Net<T> decoder;
    Net<T> discriminator;
    Net<T> auxiliary;
    bool trained = false;  // set by the training loop / checkpoint load

    template <typename U>
    NetworkBundle<U> cast() const {
        NetworkBundle<U> out;
        out.arch = arch;
        out.trained = trained;
        out.encoder = encoder.template cast<U>();
        out.decoder = decoder.template cast<U>();
        out.discriminator = discriminator.template cast<U>();
        out.auxiliary = auxiliary.template cast<U>();
        return out;
    }
};

// --- network shape definitions (shared by init and checkpoint load) ---------

template <typename T>
void define_conv_trunk(Net<T>& net, const ArchSpec& a, const std::string& prefix) {
    int cin = a.channels;
    for (int level = 0; level < a.levels(); ++level) {
        const int cout = a.width(level);
        const std::string base = prefix + "conv" + std::to_string(level);
        net.add(base + ".w", {cout, cin, 4, 4}, static_cast<int64_t>(cin) * 16);
        net.add(base + ".b", {cout}, 0);
        for (int r = 0; r < a.residual_blocks; ++r) {
            const std::string res = base + ".res" + std::to_string(r);
            net.add(res + ".w1", {cout, cout, 3, 3}, static_cast<int64_t>(cout) * 9);
            net.add(res + ".b1", {cout}, 0);
            net.add(res + ".w2", {cout, cout, 3, 3}, static_cast<int64_t>(cout) * 9);
            net.add(res + ".b2", {cout}, 0);
        }
        cin = cout;
    }
}

template <typename T>
void define_encoder(Net<T>& net, const ArchSpec& a) {
    define_conv_trunk(net, a, "trunk.");
    const int64_t flat = a.flat_features();
    net.add("mu.w", {flat, a.d_z}, flat);
    net.add("mu.b", {a.d_z}, 0);
    net.add("log_var.w", {flat, a.d_z}, flat);
    net.add("log_var.b", {a.d_z}, 0);
    if (!a.share_trunk) define_conv_trunk(net, a, "ytrunk.");
    net.add("y.w", {flat, 1}, flat);
    net.add("y.b", {1}, 0);
}

// Decoder upsampling runs as 3x3 conv into 4x channels followed by
// depth-to-space, so every conv works at the pre-upsample resolution.
template <typename T>
void define_decoder(Net<T>& net, const ArchSpec& a) {
    const int64_t flat = a.flat_features();
    net.add("in.w", {a.d_z + 1, flat}, a.d_z + 1);
    net.add("in.b", {flat}, 0);
    for (int level = a.levels() - 1; level >= 0; --level) {
        const int cin = a.width(level);
        const int cout = level > 0 ? a.width(level - 1) : a.channels;
        const std::string base = "up" + std::to_string(level);
        net.add(base + ".w", {4 * cout, cin, 3, 3}, static_cast<int64_t>(cin) * 9);
        net.add(base + ".b", {4 * cout}, 0);
        if (level > 0)
            for (int r = 0; r < a.residual_blocks; ++r) {
                const std::string res = base + ".res" + std::to_string(r);
                net.add(res + ".w1", {cout, cout, 3, 3}, static_cast<int64_t>(cout) * 9);
                net.add(res + ".b1", {cout}, 0);
                net.add(res + ".w2", {cout, cout, 3, 3}, static_cast<int64_t>(cout) * 9);
                net.add(res + ".b2", {cout}, 0);
            }
    }
}

template <typename T>
void define_discriminator(Net<T>& net, const ArchSpec& a) {
    define_conv_trunk(net, a, "trunk.");
    net.add("out.w", {a.flat_features(), 1}, a.flat_features());
    net.add("out.b", {1}, 0);
}

template <typename T>
void define_auxiliary(Net<T>& net, const ArchSpec& a) {
    net.add("fc0.w", {a.d_z, a.aux_hidden}, a.d_z);
    net.add("fc0.b", {a.aux_hidden}, 0);
    net.add("fc1.w", {a.aux_hidden, a.aux_hidden}, a.aux_hidden);
    net.add("fc1.b", {a.aux_hidden}, 0);
    net.add("out.w", {a.aux_hidden, 1}, a.aux_hidden);
    net.add("out.b", {1}, 0);
}

template <typename T>
NetworkBundle<T> init_bundle(const ArchSpec& arch, uint64_t seed) {
    arch.validate();
    NetworkBundle<T> b;
    b.arch = arch;
    define_encoder(b.encoder, arch);
    define_decoder(b.decoder, arch);
    define_discriminator(b.discriminator, arch);
    define_auxiliary(b.auxiliary, arch);
    Rng enc_rng(derive_seed(seed, 0x01));
    Rng dec_rng(derive_seed(seed, 0x02));
    Rng disc_rng(derive_seed(seed, 0x03));
    Rng aux_rng(derive_seed(seed, 0x04));
    b.encoder.init_params(enc_rng, arch.init_gain);
    b.decoder.init_params(dec_rng, arch.init_gain);
    b.discriminator.init_params(disc_rng, arch.init_gain);
    b.auxiliary.init_params(aux_rng, arch.init_gain);
    // Attribute row of the decoder input (the appended unit is row d_z).
    auto& in_w = b.decoder.value("in.w");
    for (int64_t j = 0; j < in_w.dim(1); ++j)
        in_w.at(arch.d_z, j) = static_cast<T>(in_w.at(arch.d_z, j) * arch.attr_input_scale);
    return b;
}

// --- graph builders ----------------------------------------------------------

struct BuildOpts {
    bool check_finite = false;  // per-layer NaN screening for the eager API
};

namespace detail {

template <typename T>
void check_layer(ad::Tape<T>& tape, ad::Var<T> v, const BuildOpts& opts, const char* net,
                 int layer) {
    if (!opts.check_finite) return;
    if (!tape.val(v).all_finite())
        throw NumericError(std::string(net) + ": non-finite activations at layer " +
                           std::to_string(layer));
}

template <typename T>
ad::Var<T> param(ad::Tape<T>& tape, Net<T>& net, const std::string& name, uint32_t group) {
    const size_t i = net.at(name);
    return tape.param(&net.values[i], &net.grads[i], group);
}

template <typename T>
ad::Var<T> residual_block(ad::Tape<T>& tape, Net<T>& net, const std::string& res, uint32_t group,
                          ad::Var<T> x, double leak) {
    auto h = tape.conv2d(x, param(tape, net, res + ".w1", group), param(tape, net, res + ".b1", group),
                         1, 1);
    h = tape.leaky_relu(h, leak);
    h = tape.conv2d(h, param(tape, net, res + ".w2", group), param(tape, net, res + ".b2", group), 1,
                    1);
    return tape.add(x, h);
}

// Strided conv trunk ending in a flattened (B, F) feature map.
template <typename T>
ad::Var<T> conv_trunk(ad::Tape<T>& tape, Net<T>& net, const ArchSpec& a, const std::string& prefix,
                      uint32_t group, ad::Var<T> x, const BuildOpts& opts, const char* label) {
    auto h = x;
    int layer = 0;
    for (int level = 0; level < a.levels(); ++level) {
        const std::string base = prefix + "conv" + std::to_string(level);
        h = tape.conv2d(h, param(tape, net, base + ".w", group),
                        param(tape, net, base + ".b", group), 2, 1);
        h = tape.leaky_relu(h, a.leak);
        check_layer(tape, h, opts, label, layer++);
        for (int r = 0; r < a.residual_blocks; ++r) {
            h = residual_block(tape, net, base + ".res" + std::to_string(r), group, h, a.leak);
            check_layer(tape, h, opts, label, layer++);
        }
    }
    const auto& shape = tape.val(h).shape;
    return tape.reshape(h, {shape[0], shape[1] * shape[2] * shape[3]});
}

}  // namespace detail

template <typename T>
struct EncoderVars {
    ad::Var<T> mu, log_var, z, y;
};

// Full encoder: trunk, posterior heads, reparameterized sample, label head.
// eps must be a (B, d_z) leaf recorded by the caller.
template <typename T>
EncoderVars<T> encoder_graph(ad::Tape<T>& tape, Net<T>& net, const ArchSpec& a, ad::Var<T> x,
                             ad::Var<T> eps, uint32_t group = ad::kEncoder,
                             const BuildOpts& opts = {}) {
    auto feat = detail::conv_trunk(tape, net, a, "trunk.", group, x, opts, "encoder");
    EncoderVars<T> out;
    out.mu = tape.dense(feat, detail::param(tape, net, "mu.w", group),
                        detail::param(tape, net, "mu.b", group));
    out.log_var = tape.dense(feat, detail::param(tape, net, "log_var.w", group),
                             detail::param(tape, net, "log_var.b", group));
    auto sigma = tape.exp(tape.scale(out.log_var, 0.5));
    out.z = tape.add(out.mu, tape.mul(sigma, eps));
    auto yfeat = a.share_trunk
                     ? feat
                     : detail::conv_trunk(tape, net, a, "ytrunk.", group, x, opts, "encoder-y");
    out.y = tape.sigmoid(tape.dense(yfeat, detail::param(tape, net, "y.w", group),
                                    detail::param(tape, net, "y.b", group)));
    detail::check_layer(tape, out.mu, opts, "encoder", 90);
    detail::check_layer(tape, out.log_var, opts, "encoder", 91);
    return out;
}

// Label head only, used to re-encode reconstructions.
template <typename T>
ad::Var<T> encoder_y_graph(ad::Tape<T>& tape, Net<T>& net, const ArchSpec& a, ad::Var<T> x,
                           uint32_t group = ad::kEncoder, const BuildOpts& opts = {}) {
    const std::string prefix = a.share_trunk ? "trunk." : "ytrunk.";
    auto feat = detail::conv_trunk(tape, net, a, prefix, group, x, opts, "encoder-y");
    return tape.sigmoid(tape.dense(feat, detail::param(tape, net, "y.w", group),
                                   detail::param(tape, net, "y.b", group)));
}

// Decoder over the concatenated (B, d_z + 1) identity-plus-attribute input.
template <typename T>
ad::Var<T> decoder_graph(ad::Tape<T>& tape, Net<T>& net, const ArchSpec& a, ad::Var<T> zy,
                         uint32_t group = ad::kDecoder, const BuildOpts& opts = {}) {
    if (tape.val(zy).dim(1) != a.d_z + 1)
        throw ContractError("decoder: input width must be d_z + 1");
    auto h = tape.dense(zy, detail::param(tape, net, "in.w", group),
                        detail::param(tape, net, "in.b", group));
    h = tape.leaky_relu(h, a.leak);
    const int64_t batch = tape.val(zy).dim(0);
    h = tape.reshape(h, {batch, a.width(a.levels() - 1), 4, 4});
    int layer = 0;
    for (int level = a.levels() - 1; level >= 0; --level) {
        const std::string base = "up" + std::to_string(level);
        h = tape.conv2d(h, detail::param(tape, net, base + ".w", group),
                        detail::param(tape, net, base + ".b", group), 1, 1);
        h = tape.pixel_shuffle2(h);
        if (level > 0) {
            h = tape.leaky_relu(h, a.leak);
            detail::check_layer(tape, h, opts, "decoder", layer++);
            for (int r = 0; r < a.residual_blocks; ++r)
                h = detail::residual_block(tape, net, base + ".res" + std::to_string(r), group, h,
                                           a.leak);
        }
    }
    auto out = tape.sigmoid(h);
    detail::check_layer(tape, out, opts, "decoder", layer);
    return out;
}

template <typename T>
ad::Var<T> discriminator_graph(ad::Tape<T>& tape, Net<T>& net, const ArchSpec& a, ad::Var<T> x,
                               uint32_t group = ad::kDiscriminator, const BuildOpts& opts = {}) {
    auto feat = detail::conv_trunk(tape, net, a, "trunk.", group, x, opts, "discriminator");
    return tape.sigmoid(tape.dense(feat, detail::param(tape, net, "out.w", group),
                                   detail::param(tape, net, "out.b", group)));
}

template <typename T>
ad::Var<T> aux_graph(ad::Tape<T>& tape, Net<T>& net, const ArchSpec& a, ad::Var<T> z,
                     uint32_t group = ad::kAuxiliary, const BuildOpts& opts = {}) {
    if (tape.val(z).dim(1) != a.d_z) throw ContractError("auxiliary: input width must be d_z");
    auto h = tape.leaky_relu(tape.dense(z, detail::param(tape, net, "fc0.w", group),
                                        detail::param(tape, net, "fc0.b", group)),
                             a.leak);
    h = tape.leaky_relu(tape.dense(h, detail::param(tape, net, "fc1.w", group),
                                   detail::param(tape, net, "fc1.b", group)),
                        a.leak);
    auto out = tape.sigmoid(tape.dense(h, detail::param(tape, net, "out.w", group),
                                       detail::param(tape, net, "out.b", group)));
    detail::check_layer(tape, out, opts, "auxiliary", 0);
    return out;
}

// --- eager operations --------------------------------------------------------

struct LatentPosterior {
    Tensor<float> mu;       // (B, d_z)
    Tensor<float> log_var;  // (B, d_z)
    Tensor<float> z_hat;    // (B, d_z), mu + exp(log_var / 2) * eps
    Tensor<float> y_hat;    // (B, 1) in (0, 1)
    Tensor<float> eps;      // the noise recorded for this pass
};

LatentPosterior encode(NetworkBundle<float>& bundle, const Tensor<float>& x,
                       const std::optional<Tensor<float>>& noise = std::nullopt,
                       Rng* rng = nullptr);

Tensor<float> decode(NetworkBundle<float>& bundle, const Tensor<float>& z, const Tensor<float>& y);

Tensor<float> discriminate(NetworkBundle<float>& bundle, const Tensor<float>& x);

Tensor<float> aux_predict(NetworkBundle<float>& bundle, const Tensor<float>& z_hat);

// Attribute classifier kept independent of the generative model: either the
// exact pixel rule for synthetic renders, or a conv net trained on real data.
struct OracleClassifier {
    enum class Kind { pixel_rule, trained };
    Kind kind = Kind::pixel_rule;
    bool is_trained = false;
    ArchSpec arch;
    Net<float> net;

    std::vector<uint8_t> classify(const Tensor<float>& images) const;
};

void save_bundle(const NetworkBundle<float>& b, std::ostream& os);
NetworkBundle<float> load_bundle(std::istream& is);

}  // namespace factorkit::models
