#include "factorkit/models.hpp"

#include "factorkit/binio.hpp"
#include "factorkit/synthdata.hpp"

namespace factorkit::models {

namespace {

constexpr char kBundleMagic[4] = {'F', 'K', 'B', 'N'};
constexpr uint32_t kBundleVersion = 2;

void require_image_batch(const Tensor<float>& x, const ArchSpec& a, const char* what) {
    if (x.ndim() != 4 || x.dim(1) != a.channels || x.dim(2) != a.image_size ||
        x.dim(3) != a.image_size)
        throw ContractError(std::string(what) + ": expected (B," + std::to_string(a.channels) +
                            "," + std::to_string(a.image_size) + "," +
                            std::to_string(a.image_size) + "), got " +
                            Tensor<float>::shape_str(x.shape));
}

void write_net(std::ostream& os, const Net<float>& net) {
    binio::write_u32(os, static_cast<uint32_t>(net.names.size()));
    for (size_t i = 0; i < net.names.size(); ++i) {
        binio::write_str(os, net.names[i]);
        const auto& v = net.values[i];
        binio::write_u32(os, static_cast<uint32_t>(v.shape.size()));
        for (auto d : v.shape) binio::write_u64(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(v.ptr()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(v.numel())));
    }
}

void read_net(std::istream& is, Net<float>& net, const char* label) {
    const uint32_t count = binio::read_u32(is, label);
    if (count != net.names.size())
        throw IoError(std::string("bundle: parameter count mismatch in ") + label);
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = binio::read_str(is, label);
        if (name != net.names[i])
            throw IoError(std::string("bundle: unexpected parameter ") + name + " in " + label);
        const uint32_t ndim = binio::read_u32(is, label);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<int64_t>(binio::read_u64(is, label));
        auto& v = net.values[i];
        if (shape != v.shape)
            throw IoError(std::string("bundle: shape mismatch for ") + name + " in " + label);
        is.read(reinterpret_cast<char*>(v.ptr()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(v.numel())));
        if (!is) throw IoError(std::string("bundle: truncated parameter data in ") + label);
    }
}

}  // namespace

LatentPosterior encode(NetworkBundle<float>& bundle, const Tensor<float>& x,
                       const std::optional<Tensor<float>>& noise, Rng* rng) {
    require_image_batch(x, bundle.arch, "encode");
    for (const float v : x.data)
        if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("encode: input pixels must be in [0,1]");
    const int64_t batch = x.dim(0);

    Tensor<float> eps;
    if (noise.has_value()) {
        require_shape(*noise, {batch, bundle.arch.d_z}, "encode noise");
        eps = *noise;
    } else {
        if (rng == nullptr)
            throw ContractError("encode: pass noise explicitly or supply the run's generator");
        eps = Tensor<float>({batch, bundle.arch.d_z});
        for (auto& v : eps.data) v = static_cast<float>(rng->normal());
    }

    ad::Tape<float> tape;
    BuildOpts opts{.check_finite = true};
    auto vx = tape.leaf(x);
    auto veps = tape.leaf(eps);
    auto enc = encoder_graph(tape, bundle.encoder, bundle.arch, vx, veps, ad::kEncoder, opts);
    LatentPosterior out;
    out.mu = tape.val(enc.mu);
    out.log_var = tape.val(enc.log_var);
    out.z_hat = tape.val(enc.z);
    out.y_hat = tape.val(enc.y);
    out.eps = std::move(eps);
    return out;
}

Tensor<float> decode(NetworkBundle<float>& bundle, const Tensor<float>& z,
                     const Tensor<float>& y) {
    if (z.ndim() != 2 || z.dim(1) != bundle.arch.d_z)
        throw ContractError("decode: identity code must be (B, d_z)");
    const int64_t batch = z.dim(0);
    if (y.numel() != batch) throw ContractError("decode: need one attribute value per sample");
    if (!z.all_finite() || !y.all_finite()) throw ContractError("decode: inputs must be finite");

    Tensor<float> ycol({batch, 1});
    for (int64_t i = 0; i < batch; ++i) ycol[i] = y[i];
    ad::Tape<float> tape;
    BuildOpts opts{.check_finite = true};
    auto zy = tape.concat_cols(tape.leaf(z), tape.leaf(ycol));
    auto img = decoder_graph(tape, bundle.decoder, bundle.arch, zy, ad::kDecoder, opts);
    return tape.val(img);
}

Tensor<float> discriminate(NetworkBundle<float>& bundle, const Tensor<float>& x) {
    require_image_batch(x, bundle.arch, "discriminate");
    ad::Tape<float> tape;
    BuildOpts opts{.check_finite = true};
    auto out = discriminator_graph(tape, bundle.discriminator, bundle.arch, tape.leaf(x),
                                   ad::kDiscriminator, opts);
    return tape.val(out);
}

Tensor<float> aux_predict(NetworkBundle<float>& bundle, const Tensor<float>& z_hat) {
    if (z_hat.ndim() != 2 || z_hat.dim(1) != bundle.arch.d_z)
        throw ContractError("aux_predict: identity code must be (B, d_z)");
    if (!z_hat.all_finite()) throw ContractError("aux_predict: input must be finite");
    ad::Tape<float> tape;
    BuildOpts opts{.check_finite = true};
    auto out = aux_graph(tape, bundle.auxiliary, bundle.arch, tape.leaf(z_hat), ad::kAuxiliary,
                         opts);
    return tape.val(out);
}

std::vector<uint8_t> OracleClassifier::classify(const Tensor<float>& images) const {
    if (images.ndim() != 4) throw ContractError("oracle: expected an image batch");
    if (kind == Kind::pixel_rule) return synthdata::pixel_rule_labels(images);
    if (!is_trained) throw StateError("oracle: trained classifier invoked before training");
    ad::Tape<float> tape;
    auto& mutable_net = const_cast<Net<float>&>(net);
    auto probs = encoder_y_graph(tape, mutable_net, arch, tape.leaf(images), ad::kOracle);
    const auto& p = tape.val(probs);
    std::vector<uint8_t> out(static_cast<size_t>(p.dim(0)));
    for (int64_t i = 0; i < p.dim(0); ++i) out[static_cast<size_t>(i)] = p[i] > 0.5f ? 1 : 0;
    return out;
}

void save_bundle(const NetworkBundle<float>& b, std::ostream& os) {
    os.write(kBundleMagic, 4);
    binio::write_u32(os, kBundleVersion);
    const auto& a = b.arch;
    binio::write_u32(os, static_cast<uint32_t>(a.image_size));
    binio::write_u32(os, static_cast<uint32_t>(a.channels));
    binio::write_u32(os, static_cast<uint32_t>(a.d_z));
    binio::write_u32(os, static_cast<uint32_t>(a.base_channels));
    binio::write_u32(os, static_cast<uint32_t>(a.residual_blocks));
    binio::write_u32(os, a.share_trunk ? 1 : 0);
    binio::write_u32(os, static_cast<uint32_t>(a.aux_hidden));
    binio::write_f64(os, a.init_gain);
    binio::write_f64(os, a.attr_input_scale);
    binio::write_f64(os, a.leak);
    write_net(os, b.encoder);
    write_net(os, b.decoder);
    write_net(os, b.discriminator);
    write_net(os, b.auxiliary);
}

NetworkBundle<float> load_bundle(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kBundleMagic, 4) != 0)
        throw IoError("bundle: bad magic (not a factorkit network bundle)");
    const uint32_t version = binio::read_u32(is, "bundle version");
    if (version != kBundleVersion)
        throw IoError("bundle: unsupported version " + std::to_string(version));
    ArchSpec a;
    a.image_size = static_cast<int>(binio::read_u32(is, "image_size"));
    a.channels = static_cast<int>(binio::read_u32(is, "channels"));
    a.d_z = static_cast<int>(binio::read_u32(is, "d_z"));
    a.base_channels = static_cast<int>(binio::read_u32(is, "base_channels"));
    a.residual_blocks = static_cast<int>(binio::read_u32(is, "residual_blocks"));
    a.share_trunk = binio::read_u32(is, "share_trunk") != 0;
    a.aux_hidden = static_cast<int>(binio::read_u32(is, "aux_hidden"));
    a.init_gain = binio::read_f64(is, "init_gain");
    a.attr_input_scale = binio::read_f64(is, "attr_input_scale");
    a.leak = binio::read_f64(is, "leak");
    a.validate();

    NetworkBundle<float> b;
    b.arch = a;
    define_encoder(b.encoder, a);
    define_decoder(b.decoder, a);
    define_discriminator(b.discriminator, a);
    define_auxiliary(b.auxiliary, a);
    read_net(is, b.encoder, "encoder");
    read_net(is, b.decoder, "decoder");
    read_net(is, b.discriminator, "discriminator");
    read_net(is, b.auxiliary, "auxiliary");
    return b;
}

}  // namespace factorkit::models
