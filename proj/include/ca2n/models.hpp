// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// Network definitions: CBAM, the per-component autoencoders (stage 1), the
// feature mappers, generator and discriminator (stage 2). Everything is
// templated on the scalar type so the same graphs run at 32-bit for training
// and 64-bit under the gradient checker.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ca2n/layout.hpp"
#include "ca2n/tensor.hpp"

namespace ca2n {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

// ceil-halving spatial chain of a k3 s2 p1 stack
inline std::vector<std::pair<int, int>> halving_chain(int h, int w, int layers) {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < layers; ++i) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        out.emplace_back(h, w);
    }
    return out;
}

struct CbamConfig {
    bool enabled = true;
    int reduction = 8;
    int spatial_kernel = 7;
};

struct EncoderConfig {
    std::vector<int> channels = {32, 64, 128, 256, 256};  // five encoding layers
    int latent = 512;
    double leaky = 0.2;
    CbamConfig cbam;
};

struct DecoderConfig {
    std::vector<int> channels = {256, 128, 64, 32};  // four intermediate widths
    double leaky = 0.2;
};

struct MapperConfig {
    std::vector<int> channels = {128, 96, 64, 48};  // four intermediate widths
    int out_channels = 32;
    double leaky = 0.2;
};

struct GeneratorConfig {
    std::vector<int> down = {32, 64, 128};
    int residual = 3;
    std::vector<int> up = {64, 32, 16};
    double leaky = 0.2;
};

struct DiscriminatorConfig {
    std::vector<int> channels = {32, 64, 128, 256};
    bool condition_on_sketch = false;
    double leaky = 0.2;
};

namespace nn {

template <typename T>
Tensor<T> kaiming(Shape shape, Rng& rng, int fan_in) {
    auto t = randn<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in));
    t.set_trainable();
    return t;
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape));
    t.set_trainable();
    return t;
}

template <typename T>
Tensor<T> ones_param(Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.raw_value()) v = static_cast<T>(1);
    t.set_trainable();
    return t;
}

template <typename T>
struct Conv {
    Tensor<T> w, b;
    int stride = 1, pad = 1;

    Conv() = default;
    Conv(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
        : w(kaiming<T>({cout, cin, k, k}, rng, cin * k * k)),
          b(zeros_param<T>({cout})),
          stride(stride_),
          pad(pad_) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

template <typename T>
struct TConv {
    Tensor<T> w, b;
    int stride = 2, pad = 1;

    TConv() = default;
    TConv(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
        : w(kaiming<T>({cin, cout, k, k}, rng, cin * k * k)),
          b(zeros_param<T>({cout})),
          stride(stride_),
          pad(pad_) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        return conv2d_transpose(x, w, b, stride, pad);
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

template <typename T>
struct Dense {
    Tensor<T> w, b;

    Dense() = default;
    Dense(int din, int dout, Rng& rng)
        : w(kaiming<T>({dout, din}, rng, din)), b(zeros_param<T>({dout})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

// Instance norm keeps pre-activations bounded through training; without it
// the near-binary targets drive the output heads into the flat sigmoid
// tails, where the whole image collapses to the background constant.
template <typename T>
struct Norm {
    Tensor<T> g, b;

    Norm() = default;
    explicit Norm(int c) : g(ones_param<T>({c})), b(zeros_param<T>({c})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return instance_norm(x, g, b); }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".g", g);
        out.emplace_back(prefix + ".b", b);
    }
};

}  // namespace nn

// Channel gate from pooled per-channel statistics through a shared scalar
// perceptron, then a spatial gate from the channelwise mean/max maps.
template <typename T>
struct Cbam {
    int channels = 0, hidden = 0;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // shared scalar MLP: 1 -> hidden -> 1
    nn::Conv<T> spatial;

    Cbam() = default;
    Cbam(int C, const CbamConfig& cfg, Rng& rng) : channels(C) {
        if (cfg.reduction < 1 || C % cfg.reduction != 0)
            throw InvalidInput(concat_msg("cbam: ", C, " channels not divisible by reduction ",
                                          cfg.reduction));
        if (cfg.spatial_kernel % 2 == 0)
            throw InvalidInput(concat_msg("cbam: spatial kernel ", cfg.spatial_kernel,
                                          " must be odd"));
        hidden = C / cfg.reduction;
        mlp_w1 = nn::kaiming<T>({hidden, 1}, rng, 1);
        mlp_b1 = nn::zeros_param<T>({hidden});
        mlp_w2 = nn::kaiming<T>({1, hidden}, rng, hidden);
        mlp_b2 = nn::zeros_param<T>({1});
        spatial = nn::Conv<T>(2, 1, cfg.spatial_kernel, 1, cfg.spatial_kernel / 2, rng);
    }

    // per-channel scalar MLP applied to a [N,C,1,1] pooled descriptor
    Tensor<T> mlp(const Tensor<T>& pooled) const {
        int N = pooled.dim(0);
        auto v = reshape(pooled, {N * channels, 1});
        auto h = relu(linear(v, mlp_w1, mlp_b1));
        return linear(h, mlp_w2, mlp_b2);  // [N*C, 1]
    }

    Tensor<T> channel_gate(const Tensor<T>& x) const {
        auto a = mlp(global_pool(x, PoolKind::Avg));
        auto m = mlp(global_pool(x, PoolKind::Max));
        return reshape(sigmoid(add(a, m)), {x.dim(0), channels});  // [N,C]
    }

    Tensor<T> spatial_gate(const Tensor<T>& gated) const {
        return sigmoid(spatial(channel_stats(gated)));  // [N,1,H,W]
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.dim(1) != channels)
            throw InvalidInput(concat_msg("cbam: built for ", channels, " channels, input has ",
                                          x.dim(1)));
        auto gated = scale_channels(x, channel_gate(x));
        return scale_spatial(gated, spatial_gate(gated));
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".mlp_w1", mlp_w1);
        out.emplace_back(prefix + ".mlp_b1", mlp_b1);
        out.emplace_back(prefix + ".mlp_w2", mlp_w2);
        out.emplace_back(prefix + ".mlp_b2", mlp_b2);
        spatial.params(out, prefix + ".spatial");
    }
};

// E_c: five strided conv blocks (optional CBAM each) + projection to d.
template <typename T>
struct ComponentEncoder {
    EncoderConfig cfg;
    int in_channels = 0, in_h = 0, in_w = 0;
    std::vector<nn::Conv<T>> blocks;
    std::vector<nn::Norm<T>> norms;
    std::vector<Cbam<T>> cbams;  // empty when disabled
    nn::Dense<T> proj;

    ComponentEncoder() = default;
    ComponentEncoder(int cin, int h, int w, const EncoderConfig& config, Rng& rng)
        : cfg(config), in_channels(cin), in_h(h), in_w(w) {
        if (cfg.channels.size() != 5)
            throw InvalidInput(concat_msg("encoder: need exactly 5 widths, got ",
                                          cfg.channels.size()));
        int c = cin;
        for (int width : cfg.channels) {
            blocks.emplace_back(c, width, 3, 2, 1, rng);
            norms.emplace_back(width);
            if (cfg.cbam.enabled) cbams.emplace_back(width, cfg.cbam, rng);
            c = width;
        }
        auto chain = halving_chain(h, w, 5);
        proj = nn::Dense<T>(c * chain.back().first * chain.back().second, cfg.latent, rng);
    }

    Tensor<T> operator()(const Tensor<T>& patch) const {
        if (patch.rank() != 4 || patch.dim(1) != in_channels || patch.dim(2) != in_h ||
            patch.dim(3) != in_w)
            throw InvalidInput(concat_msg("encode: expected [N,", in_channels, ",", in_h, ",",
                                          in_w, "], got ", shape_str(patch.shape())));
        auto x = patch;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            x = leaky_relu(norms[i](blocks[i](x)), static_cast<T>(cfg.leaky));
            if (!cbams.empty()) x = cbams[i](x);
        }
        return proj(reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)}));
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].params(out, concat_msg(prefix, ".block", i, ".conv"));
            norms[i].params(out, concat_msg(prefix, ".block", i, ".norm"));
            if (!cbams.empty()) cbams[i].params(out, concat_msg(prefix, ".block", i, ".cbam"));
        }
        proj.params(out, prefix + ".proj");
    }
};

// Shared decoder body: dense expansion + five doubling tconv blocks cropped
// to the reversed encoder chain. Used by D_c (sigmoid head) and the feature
// mappers (linear head).
template <typename T>
struct DeconvStack {
    int latent = 0, out_channels = 0, out_h = 0, out_w = 0, start_channels = 0;
    double leaky = 0.2;
    bool sigmoid_head = true;
    std::vector<std::pair<int, int>> targets;  // spatial size after each block
    nn::Dense<T> expand;
    std::vector<nn::TConv<T>> blocks;
    std::vector<nn::Norm<T>> norms;  // blocks 0..3 only; the head is affine

    DeconvStack() = default;
    DeconvStack(int d, int cout, int h, int w, int start, const std::vector<int>& widths,
                double leaky_, bool sigmoid_head_, Rng& rng)
        : latent(d), out_channels(cout), out_h(h), out_w(w), start_channels(start),
          leaky(leaky_), sigmoid_head(sigmoid_head_) {
        if (widths.size() != 4)
            throw InvalidInput(concat_msg("deconv stack: need 4 intermediate widths, got ",
                                          widths.size()));
        auto chain = halving_chain(h, w, 5);  // chain[4] is the dense grid
        targets.assign(chain.rbegin() + 1, chain.rend());
        targets.emplace_back(h, w);
        expand = nn::Dense<T>(d, start * chain.back().first * chain.back().second, rng);
        int c = start;
        for (int i = 0; i < 5; ++i) {
            int width = i < 4 ? widths[i] : cout;
            blocks.emplace_back(c, width, 4, 2, 1, rng);
            if (i < 4) norms.emplace_back(width);
            c = width;
        }
    }

    Tensor<T> operator()(const Tensor<T>& z) const {
        if (z.rank() != 2 || z.dim(1) != latent)
            throw InvalidInput(concat_msg("decode: expected [N,", latent, "] latent, got ",
                                          shape_str(z.shape())));
        auto chain = halving_chain(out_h, out_w, 5);
        auto x = leaky_relu(expand(z), static_cast<T>(leaky));
        x = reshape(x, {z.dim(0), start_channels, chain.back().first, chain.back().second});
        for (int i = 0; i < 5; ++i) {
            x = blocks[i](x);
            auto [th, tw] = targets[i];
            if (x.dim(2) != th || x.dim(3) != tw)
                x = crop(x, SpatialBox{0, 0, tw, th});
            if (i < 4)
                x = leaky_relu(norms[i](x), static_cast<T>(leaky));
            else
                x = sigmoid_head ? sigmoid(x) : x;
        }
        return x;
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        expand.params(out, prefix + ".expand");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].params(out, concat_msg(prefix, ".block", i, ".tconv"));
            if (i < norms.size()) norms[i].params(out, concat_msg(prefix, ".block", i, ".norm"));
        }
    }
};

template <typename T>
struct ComponentAutoencoder {
    ComponentEncoder<T> enc;
    DeconvStack<T> dec;

    ComponentAutoencoder() = default;
    ComponentAutoencoder(int cin, int h, int w, const EncoderConfig& ec, const DecoderConfig& dc,
                         Rng& rng)
        : enc(cin, h, w, ec, rng),
          dec(ec.latent, cin, h, w, ec.channels.back(), dc.channels, dc.leaky, true, rng) {}

    Tensor<T> reconstruct(const Tensor<T>& patch) const { return dec(enc(patch)); }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        enc.params(out, prefix + ".enc");
        dec.params(out, prefix + ".dec");
    }
};

template <typename T>
struct AutoencoderSet {
    std::array<ComponentAutoencoder<T>, 5> ae;  // indexed by ComponentId

    ComponentAutoencoder<T>& operator[](ComponentId id) { return ae[static_cast<int>(id)]; }
    const ComponentAutoencoder<T>& operator[](ComponentId id) const {
        return ae[static_cast<int>(id)];
    }

    static AutoencoderSet build(const ComponentLayout& layout, int sketch_channels,
                                const EncoderConfig& ec, const DecoderConfig& dc, Rng& rng) {
        AutoencoderSet s;
        for (ComponentId id : kComponents) {
            auto b = layout.box(id);
            Rng sub = rng.fork(static_cast<std::uint64_t>(id));
            s[id] = ComponentAutoencoder<T>(sketch_channels, b.h, b.w, ec, dc, sub);
        }
        return s;
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        for (ComponentId id : kComponents)
            ae[static_cast<int>(id)].params(out, prefix + "." + component_name(id));
    }

    void encoder_params(NamedParams<T>& out, const std::string& prefix) const {
        for (ComponentId id : kComponents)
            ae[static_cast<int>(id)].enc.params(out,
                                                prefix + "." + component_name(id) + ".enc");
    }
};

// FM decoder: latent -> 32-channel map at the component's box size.
template <typename T>
struct FeatureMapper {
    DeconvStack<T> stack;

    FeatureMapper() = default;
    FeatureMapper(int d, int h, int w, const MapperConfig& mc, Rng& rng)
        : stack(d, mc.out_channels, h, w, mc.channels.front(), mc.channels, mc.leaky, false,
                rng) {}

    Tensor<T> operator()(const Tensor<T>& z) const { return stack(z); }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        stack.params(out, prefix);
    }
};

template <typename T>
struct Generator {
    GeneratorConfig cfg;
    int in_channels = 32;
    std::vector<nn::Conv<T>> down;
    std::vector<nn::Norm<T>> down_norms;
    std::vector<nn::Conv<T>> res;  // pairs: res[2i], res[2i+1]
    std::vector<nn::Norm<T>> res_norms;
    std::vector<nn::Conv<T>> up;
    std::vector<nn::Norm<T>> up_norms;
    nn::Conv<T> head;

    Generator() = default;
    Generator(int cin, const GeneratorConfig& config, Rng& rng) : cfg(config), in_channels(cin) {
        if (cfg.down.size() != cfg.up.size())
            throw InvalidInput("generator: down/up plans must have equal depth");
        int c = cin;
        for (int width : cfg.down) {
            down.emplace_back(c, width, 3, 2, 1, rng);
            down_norms.emplace_back(width);
            c = width;
        }
        for (int i = 0; i < cfg.residual; ++i) {
            res.emplace_back(c, c, 3, 1, 1, rng);
            res.emplace_back(c, c, 3, 1, 1, rng);
            res_norms.emplace_back(c);
            res_norms.emplace_back(c);
        }
        for (int width : cfg.up) {
            up.emplace_back(c, width, 3, 1, 1, rng);
            up_norms.emplace_back(width);
            c = width;
        }
        head = nn::Conv<T>(c, 3, 3, 1, 1, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != in_channels)
            throw InvalidInput(concat_msg("generate: expected [N,", in_channels,
                                          ",S,S], got ", shape_str(x.shape())));
        int div = 1 << static_cast<int>(cfg.down.size());
        if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
            throw InvalidInput(concat_msg("generate: spatial size ", x.dim(2), "x", x.dim(3),
                                          " not divisible by ", div));
        auto h = x;
        for (std::size_t i = 0; i < down.size(); ++i)
            h = leaky_relu(down_norms[i](down[i](h)), static_cast<T>(cfg.leaky));
        for (int i = 0; i < cfg.residual; ++i) {
            auto r = leaky_relu(res_norms[2 * i](res[2 * i](h)), static_cast<T>(cfg.leaky));
            h = add(h, res_norms[2 * i + 1](res[2 * i + 1](r)));
        }
        for (std::size_t i = 0; i < up.size(); ++i)
            h = leaky_relu(up_norms[i](up[i](upsample_nearest2x(h))), static_cast<T>(cfg.leaky));
        return sigmoid(head(h));
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < down.size(); ++i) {
            down[i].params(out, concat_msg(prefix, ".down", i));
            down_norms[i].params(out, concat_msg(prefix, ".down", i, ".norm"));
        }
        for (std::size_t i = 0; i < res.size(); ++i) {
            res[i].params(out, concat_msg(prefix, ".res", i));
            res_norms[i].params(out, concat_msg(prefix, ".res", i, ".norm"));
        }
        for (std::size_t i = 0; i < up.size(); ++i) {
            up[i].params(out, concat_msg(prefix, ".up", i));
            up_norms[i].params(out, concat_msg(prefix, ".up", i, ".norm"));
        }
        head.params(out, prefix + ".head");
    }
};

template <typename T>
struct Discriminator {
    DiscriminatorConfig cfg;
    int in_channels = 3;
    std::vector<nn::Conv<T>> blocks;
    std::vector<nn::Norm<T>> norms;  // blocks 1..: the first block sees raw intensities
    nn::Dense<T> head;

    Discriminator() = default;
    Discriminator(const DiscriminatorConfig& config, Rng& rng) : cfg(config) {
        in_channels = cfg.condition_on_sketch ? 4 : 3;
        int c = in_channels;
        for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
            int width = cfg.channels[i];
            blocks.emplace_back(c, width, 3, 2, 1, rng);
            if (i > 0) norms.emplace_back(width);
            c = width;
        }
        head = nn::Dense<T>(c, 1, rng);
    }

    // returns [N,1] scores in (0,1)
    Tensor<T> operator()(const Tensor<T>& image) const {
        if (image.rank() != 4 || image.dim(1) != in_channels)
            throw InvalidInput(concat_msg("discriminate: expected [N,", in_channels,
                                          ",S,S], got ", shape_str(image.shape())));
        auto h = image;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            h = blocks[i](h);
            if (i > 0) h = norms[i - 1](h);
            h = leaky_relu(h, static_cast<T>(cfg.leaky));
        }
        auto pooled = global_pool(h, PoolKind::Avg);
        return sigmoid(head(reshape(pooled, {h.dim(0), h.dim(1)})));
    }

    void params(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].params(out, concat_msg(prefix, ".block", i));
            if (i > 0) norms[i - 1].params(out, concat_msg(prefix, ".block", i, ".norm"));
        }
        head.params(out, prefix + ".head");
    }
};

// Stage-2 generator-side bundle: fine-tuned encoders + mappers + generator.
template <typename T>
struct TranslatorModel {
    ComponentLayout layout;
    AutoencoderSet<T> autoencoders;  // decoders unused in stage 2 but kept for persistence
    std::array<FeatureMapper<T>, 5> mappers;
    Generator<T> generator;

    FeatureMapper<T>& mapper(ComponentId id) { return mappers[static_cast<int>(id)]; }
    const FeatureMapper<T>& mapper(ComponentId id) const {
        return mappers[static_cast<int>(id)];
    }

    static TranslatorModel build(const ComponentLayout& layout, const AutoencoderSet<T>& stage1,
                                 const MapperConfig& mc, const GeneratorConfig& gc, Rng& rng) {
        TranslatorModel m;
        m.layout = layout;
        m.autoencoders = stage1;
        int d = stage1[ComponentId::Remainder].enc.cfg.latent;
        for (ComponentId id : kComponents) {
            auto b = layout.box(id);
            Rng sub = rng.fork(16 + static_cast<std::uint64_t>(id));
            m.mappers[static_cast<int>(id)] = FeatureMapper<T>(d, b.h, b.w, mc, sub);
        }
        Rng gsub = rng.fork(32);
        m.generator = Generator<T>(mc.out_channels, gc, gsub);
        return m;
    }

    // sketch [N,1,S,S] -> image [N,3,S,S]
    Tensor<T> operator()(const Tensor<T>& sketch) const {
        auto parts = split(sketch, layout);
        ComponentSet<T> maps;
        for (ComponentId id : kComponents) {
            auto z = autoencoders[id].enc(parts[id]);
            maps[id] = mapper(id)(z);
        }
        auto assembled = paste_components(maps[ComponentId::Remainder], maps, layout);
        return generator(assembled);
    }

    // everything the generator objective trains
    void generator_side_params(NamedParams<T>& out) const {
        autoencoders.encoder_params(out, "ae");
        for (ComponentId id : kComponents)
            mappers[static_cast<int>(id)].params(
                out, std::string("map.") + component_name(id));
        generator.params(out, "gen");
    }

    void all_params(NamedParams<T>& out) const {
        autoencoders.params(out, "ae");
        for (ComponentId id : kComponents)
            mappers[static_cast<int>(id)].params(
                out, std::string("map.") + component_name(id));
        generator.params(out, "gen");
    }
};

template <typename T>
std::vector<Tensor<T>> param_tensors(const NamedParams<T>& named) {
    std::vector<Tensor<T>> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

}  // namespace ca2n
