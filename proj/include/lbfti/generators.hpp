#ifndef LBFTI_GENERATORS_HPP_
#define LBFTI_GENERATORS_HPP_

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lbfti/core/rng.hpp"
#include "lbfti/core/tensor.hpp"
#include "lbfti/domain.hpp"
#include "lbfti/errors.hpp"
#include "lbfti/io/checkpoint.hpp"
#include "lbfti/nn/layers.hpp"

namespace lbfti {

/// Widths for all six generators. Every count is configurable; reference()
/// is the full-size pyramid, toy() a quarter-width variant for desk runs.
struct GeneratorConfig {
    int d = 512;
    int resolution = 128;
    int fore_c0 = 256;        // FG/MG mapper channels at 4x4
    int fore_min = 16;        // floor of the halving chain
    int enc_base = 64;        // panorama encoder first width
    int enc_cap = 512;
    int template_map_ch = 64; // Ct of the injected template map
    int fusion_ch = 512;
    int dec_min = 16;
    uint64_t seed = 1;

    static GeneratorConfig reference() { return GeneratorConfig{}; }

    static GeneratorConfig toy(int resolution = 128) {
        GeneratorConfig c;
        c.resolution = resolution;
        c.fore_c0 = 48;
        c.fore_min = 8;
        c.enc_base = 16;
        c.enc_cap = 128;
        c.template_map_ch = 16;
        c.fusion_ch = 128;
        c.dec_min = 8;
        return c;
    }

    /// Upsampling steps from the 4x4 seed map to the output resolution.
    int n_upsamples() const {
        if (!is_power_of_two(resolution) || resolution < 32)
            throw ConfigError("resolution must be a power of two >= 32");
        int n = 0, s = 4;
        while (s < resolution) {
            s *= 2;
            ++n;
        }
        return n;
    }

    nlohmann::json to_json() const {
        return {{"d", d},
                {"resolution", resolution},
                {"fore_c0", fore_c0},
                {"fore_min", fore_min},
                {"enc_base", enc_base},
                {"enc_cap", enc_cap},
                {"template_map_ch", template_map_ch},
                {"fusion_ch", fusion_ch},
                {"dec_min", dec_min},
                {"seed", seed}};
    }

    static GeneratorConfig from_json(const nlohmann::json& j) {
        GeneratorConfig c;
        c.d = j.at("d").get<int>();
        c.resolution = j.at("resolution").get<int>();
        c.fore_c0 = j.at("fore_c0").get<int>();
        c.fore_min = j.at("fore_min").get<int>();
        c.enc_base = j.at("enc_base").get<int>();
        c.enc_cap = j.at("enc_cap").get<int>();
        c.template_map_ch = j.at("template_map_ch").get<int>();
        c.fusion_ch = j.at("fusion_ch").get<int>();
        c.dec_min = j.at("dec_min").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

/// linear -> reshape to {C,4,4} -> BatchNorm -> ReLU.
class TemplateMapper : public nn::Module {
public:
    TemplateMapper(const std::string& name, int d, int out_ch, Rng& rng)
        : fc_(name + ".fc", d, out_ch * 16, rng), bn_(name + ".bn", out_ch), out_ch_(out_ch), d_(d) {}

    Tensor forward(const Tensor& t, bool training) {
        if (t.size() != d_)
            throw DimensionError("template mapper expects d=" + std::to_string(d_) + ", got " +
                                 t.shape_str());
        Tensor h = fc_.forward(t);
        Tensor map({out_ch_, 4, 4}, std::vector<float>(h.data(), h.data() + h.size()));
        map = bn_.forward(map, training);
        return relu_.forward(map);
    }

    Tensor backward(const Tensor& gy) {
        Tensor g = relu_.backward(gy);
        g = bn_.backward(g);
        Tensor flat({out_ch_ * 16}, std::vector<float>(g.data(), g.data() + g.size()));
        return fc_.backward(flat);
    }

    void collect(std::vector<nn::Param*>& out) override {
        fc_.collect(out);
        bn_.collect(out);
    }

    int d() const { return d_; }

private:
    nn::Linear fc_;
    nn::BatchNorm2d bn_;
    nn::ReLU relu_;
    int out_ch_, d_;
};

/// ForeBlock / MidBlock: 2x nearest-neighbor upsample, 3x3 conv, BN, ReLU.
class UpBlock : public nn::Module {
public:
    UpBlock(const std::string& name, int in_ch, int out_ch, Rng& rng)
        : conv_(name + ".conv", in_ch, out_ch, 3, 1, 1, rng), bn_(name + ".bn", out_ch) {}

    Tensor forward(const Tensor& x, bool training) {
        Tensor h = up_.forward(x);
        h = conv_.forward(h);
        h = bn_.forward(h, training);
        return relu_.forward(h);
    }
    Tensor backward(const Tensor& gy) {
        Tensor g = relu_.backward(gy);
        g = bn_.backward(g);
        g = conv_.backward(g);
        return up_.backward(g);
    }
    void collect(std::vector<nn::Param*>& out) override {
        conv_.collect(out);
        bn_.collect(out);
    }

private:
    nn::UpsampleNearest2 up_;
    nn::Conv2d conv_;
    nn::BatchNorm2d bn_;
    nn::ReLU relu_;
};

/// ForeBlock-out / MidBlock-out: upsample, 3x3 conv, Tanh.
class UpOutBlock : public nn::Module {
public:
    UpOutBlock(const std::string& name, int in_ch, Rng& rng)
        : conv_(name + ".conv", in_ch, 3, 3, 1, 1, rng, 1.0) {}

    Tensor forward(const Tensor& x) {
        Tensor h = up_.forward(x);
        h = conv_.forward(h);
        return tanh_.forward(h);
    }
    Tensor backward(const Tensor& gy) {
        Tensor g = tanh_.backward(gy);
        g = conv_.backward(g);
        return up_.backward(g);
    }
    void collect(std::vector<nn::Param*>& out) override { conv_.collect(out); }

private:
    nn::UpsampleNearest2 up_;
    nn::Conv2d conv_;
    nn::Tanh tanh_;
};

/// EncoderBlock: stride-2 3x3 conv, BN, ReLU (halves the spatial size).
class EncoderBlock : public nn::Module {
public:
    EncoderBlock(const std::string& name, int in_ch, int out_ch, Rng& rng)
        : conv_(name + ".conv", in_ch, out_ch, 3, 2, 1, rng), bn_(name + ".bn", out_ch) {}

    Tensor forward(const Tensor& x, bool training) {
        Tensor h = conv_.forward(x);
        h = bn_.forward(h, training);
        return relu_.forward(h);
    }
    Tensor backward(const Tensor& gy) {
        Tensor g = relu_.backward(gy);
        g = bn_.backward(g);
        return conv_.backward(g);
    }
    void collect(std::vector<nn::Param*>& out) override {
        conv_.collect(out);
        bn_.collect(out);
    }
    int out_channels() const { return conv_.out_channels(); }

private:
    nn::Conv2d conv_;
    nn::BatchNorm2d bn_;
    nn::ReLU relu_;
};

/// FusionBlock: 3x3 conv, BN, ReLU over the channel-concatenated fusion map.
class FusionBlock : public nn::Module {
public:
    FusionBlock(const std::string& name, int in_ch, int out_ch, Rng& rng)
        : conv_(name + ".conv", in_ch, out_ch, 3, 1, 1, rng), bn_(name + ".bn", out_ch) {}

    Tensor forward(const Tensor& x, bool training) {
        Tensor h = conv_.forward(x);
        h = bn_.forward(h, training);
        return relu_.forward(h);
    }
    Tensor backward(const Tensor& gy) {
        Tensor g = relu_.backward(gy);
        g = bn_.backward(g);
        return conv_.backward(g);
    }
    void collect(std::vector<nn::Param*>& out) override {
        conv_.collect(out);
        bn_.collect(out);
    }

private:
    nn::Conv2d conv_;
    nn::BatchNorm2d bn_;
    nn::ReLU relu_;
};

/// PanoBlock: stride-2 deconvolution followed by four conv/BN units arranged
/// as two chained residual pairs, so with all convolutions zeroed the block
/// transports the deconvolution output unchanged:
///   u = deconv(x)
///   p = u + bn2(conv2(relu(bn1(conv1(u)))))
///   q = p + bn4(conv4(relu(bn3(conv3(p)))))
class PanoBlock : public nn::Module {
public:
    PanoBlock(const std::string& name, int in_ch, int out_ch, Rng& rng)
        : deconv_(name + ".deconv", in_ch, out_ch, 4, 2, 1, rng),
          conv1_(name + ".conv1", out_ch, out_ch, 3, 1, 1, rng),
          conv2_(name + ".conv2", out_ch, out_ch, 3, 1, 1, rng),
          conv3_(name + ".conv3", out_ch, out_ch, 3, 1, 1, rng),
          conv4_(name + ".conv4", out_ch, out_ch, 3, 1, 1, rng),
          bn1_(name + ".bn1", out_ch),
          bn2_(name + ".bn2", out_ch),
          bn3_(name + ".bn3", out_ch),
          bn4_(name + ".bn4", out_ch) {}

    Tensor forward(const Tensor& x, bool training) {
        Tensor u = deconv_.forward(x);
        Tensor b = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(u), training))),
                                training);
        Tensor p = u;
        p.add_(b);
        Tensor e = bn4_.forward(conv4_.forward(relu2_.forward(bn3_.forward(conv3_.forward(p), training))),
                                training);
        Tensor q = p;
        q.add_(e);
        return q;
    }

    Tensor backward(const Tensor& gq) {
        Tensor gp2 = conv3_.backward(bn3_.backward(relu2_.backward(conv4_.backward(bn4_.backward(gq)))));
        Tensor gp = gq;
        gp.add_(gp2);
        Tensor gu1 = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(gp)))));
        Tensor gu = gp;
        gu.add_(gu1);
        return deconv_.backward(gu);
    }

    void collect(std::vector<nn::Param*>& out) override {
        deconv_.collect(out);
        conv1_.collect(out);
        bn1_.collect(out);
        conv2_.collect(out);
        bn2_.collect(out);
        conv3_.collect(out);
        bn3_.collect(out);
        conv4_.collect(out);
        bn4_.collect(out);
    }

private:
    nn::ConvTranspose2d deconv_;
    nn::Conv2d conv1_, conv2_, conv3_, conv4_;
    nn::BatchNorm2d bn1_, bn2_, bn3_, bn4_;
    nn::ReLU relu1_, relu2_;

    // Backward note: conv2/conv4 see the post-ReLU activations cached during
    // forward; the chain above replays the graph in reverse.
};

/// PanoBlock-out: parallel 1x1, 3x3, 5x5 and 7x7 convolutions over a shared
/// input, summed, then Tanh.
class PanoOutBlock : public nn::Module {
public:
    PanoOutBlock(const std::string& name, int in_ch, Rng& rng)
        : k1_(name + ".k1", in_ch, 3, 1, 1, 0, rng, 0.5),
          k3_(name + ".k3", in_ch, 3, 3, 1, 1, rng, 0.5),
          k5_(name + ".k5", in_ch, 3, 5, 1, 2, rng, 0.5),
          k7_(name + ".k7", in_ch, 3, 7, 1, 3, rng, 0.5) {}

    Tensor forward(const Tensor& x) {
        Tensor s = k1_.forward(x);
        s.add_(k3_.forward(x));
        s.add_(k5_.forward(x));
        s.add_(k7_.forward(x));
        return tanh_.forward(s);
    }
    Tensor backward(const Tensor& gy) {
        Tensor gs = tanh_.backward(gy);
        Tensor gx = k1_.backward(gs);
        gx.add_(k3_.backward(gs));
        gx.add_(k5_.backward(gs));
        gx.add_(k7_.backward(gs));
        return gx;
    }
    void collect(std::vector<nn::Param*>& out) override {
        k1_.collect(out);
        k3_.collect(out);
        k5_.collect(out);
        k7_.collect(out);
    }

private:
    nn::Conv2d k1_, k3_, k5_, k7_;
    nn::Tanh tanh_;
};

// ---------------------------------------------------------------------------
// Foreground / midground generator (identical lightweight architecture)
// ---------------------------------------------------------------------------

/// Template mapper, (n_upsamples-1) ForeBlocks and one ForeBlock-out; turns a
/// d-dimensional template into a {3,H,H} layer image in [-1,1].
class LayerGenerator : public nn::Module {
public:
    LayerGenerator(const std::string& name, Component component, const GeneratorConfig& cfg, Rng rng)
        : name_(name), component_(component), cfg_(cfg),
          mapper_(std::make_unique<TemplateMapper>(name + ".mapper", cfg.d, cfg.fore_c0, rng)) {
        const int n_blocks = cfg.n_upsamples() - 1;
        int ch = cfg.fore_c0;
        for (int k = 0; k < n_blocks; ++k) {
            const int out_ch = std::max(cfg.fore_min, cfg.fore_c0 >> (k + 1));
            blocks_.push_back(std::make_unique<UpBlock>(name + ".block" + std::to_string(k), ch,
                                                        out_ch, rng));
            ch = out_ch;
        }
        out_ = std::make_unique<UpOutBlock>(name + ".out", ch, rng);
    }

    const std::string& name() const { return name_; }
    Component component() const { return component_; }
    int d() const { return cfg_.d; }
    int resolution() const { return cfg_.resolution; }

    bool trainable() const { return trainable_; }
    void set_trainable(bool flag) { trainable_ = flag; }

    /// Frozen generators always run in inference mode so that running
    /// statistics stay bit-identical.
    Tensor forward(const Tensor& t, bool training) {
        const bool train = training && trainable_;
        Tensor h = mapper_->forward(t, train);
        for (auto& b : blocks_) h = b->forward(h, train);
        return out_->forward(h);
    }

    /// Returns dL/dt (usually discarded).
    Tensor backward(const Tensor& gy) {
        Tensor g = out_->backward(gy);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
        return mapper_->backward(g);
    }

    void collect(std::vector<nn::Param*>& out) override {
        mapper_->collect(out);
        for (auto& b : blocks_) b->collect(out);
        out_->collect(out);
    }

private:
    std::string name_;
    Component component_;
    GeneratorConfig cfg_;
    std::unique_ptr<TemplateMapper> mapper_;
    std::vector<std::unique_ptr<UpBlock>> blocks_;
    std::unique_ptr<UpOutBlock> out_;
    bool trainable_ = true;
    mutable std::mutex mu_;

    friend FaceImage generate_layer(LayerGenerator&, const FacialTemplate&);
};

// ---------------------------------------------------------------------------
// Panorama generator
// ---------------------------------------------------------------------------

/// Encodes the concatenated foreground/midground layers to a 4x4 map, fuses
/// it with the injected template map through two FusionBlocks, and decodes
/// through PanoBlocks and the multi-kernel PanoBlock-out.
///
/// `n_input_layers` is normally 5; the midground ablation feeds 4. With
/// `use_encoder=false` (layering ablation) the fusion stage sees only the
/// template map and no layer input is consumed.
class PanoramaGenerator : public nn::Module {
public:
    PanoramaGenerator(const std::string& name, const GeneratorConfig& cfg, int n_input_layers = 5,
                      bool use_encoder = true, Rng rng = Rng(1))
        : name_(name), cfg_(cfg), n_layers_(n_input_layers), use_encoder_(use_encoder),
          mapper_(std::make_unique<TemplateMapper>(name + ".mapper", cfg.d, cfg.template_map_ch, rng)) {
        const int n_steps = cfg.n_upsamples();
        int enc_ch = 3 * n_input_layers;
        if (use_encoder_) {
            for (int k = 0; k < n_steps; ++k) {
                const int out_ch = std::min(cfg.enc_cap, cfg.enc_base << k);
                encoder_.push_back(std::make_unique<EncoderBlock>(
                    name + ".enc" + std::to_string(k), enc_ch, out_ch, rng));
                enc_ch = out_ch;
            }
        }
        const int fusion_in = (use_encoder_ ? enc_ch : 0) + cfg.template_map_ch;
        fusion1_ = std::make_unique<FusionBlock>(name + ".fusion0", fusion_in, cfg.fusion_ch, rng);
        fusion2_ = std::make_unique<FusionBlock>(name + ".fusion1", cfg.fusion_ch, cfg.fusion_ch, rng);
        int ch = cfg.fusion_ch;
        for (int k = 0; k < n_steps; ++k) {
            const int out_ch = std::max(cfg.dec_min, cfg.fusion_ch >> (k + 1));
            decoder_.push_back(std::make_unique<PanoBlock>(name + ".pano" + std::to_string(k), ch,
                                                           out_ch, rng));
            ch = out_ch;
        }
        out_ = std::make_unique<PanoOutBlock>(name + ".out", ch, rng);
    }

    const std::string& name() const { return name_; }
    int d() const { return cfg_.d; }
    int resolution() const { return cfg_.resolution; }
    int n_input_layers() const { return n_layers_; }
    bool uses_encoder() const { return use_encoder_; }

    bool trainable() const { return trainable_; }
    void set_trainable(bool flag) { trainable_ = flag; }

    /// `inject_template=false` replaces the template map with zeros, severing
    /// the identity side-channel (ablation FT-S2).
    Tensor forward(const std::vector<Tensor>& layers, const Tensor& t, bool training,
                   bool inject_template = true) {
        const bool train = training && trainable_;
        const int H = cfg_.resolution;
        Tensor enc_out;
        if (use_encoder_) {
            if (static_cast<int>(layers.size()) != n_layers_)
                throw ArityError("panorama generator expects " + std::to_string(n_layers_) +
                                 " layers, got " + std::to_string(layers.size()));
            Tensor stacked({3 * n_layers_, H, W()});
            for (int l = 0; l < n_layers_; ++l) {
                const Tensor& li = layers[static_cast<size_t>(l)];
                if (li.rank() != 3 || li.dim(0) != 3 || li.dim(1) != H || li.dim(2) != H)
                    throw DimensionError("panorama layer " + std::to_string(l) + " has shape " +
                                         li.shape_str());
                std::copy(li.data(), li.data() + li.size(),
                          stacked.data() + static_cast<int64_t>(l) * li.size());
            }
            enc_out = stacked;
            for (auto& e : encoder_) enc_out = e->forward(enc_out, train);
        }
        injected_ = inject_template;
        Tensor tmap;
        if (inject_template) {
            tmap = mapper_->forward(t, train);
        } else {
            tmap = Tensor({cfg_.template_map_ch, 4, 4});
        }
        // channel concat [encoded map || template map]
        Tensor fused = use_encoder_ ? concat_channels(enc_out, tmap) : tmap;
        fused = fusion1_->forward(fused, train);
        fused = fusion2_->forward(fused, train);
        Tensor h = fused;
        for (auto& dblk : decoder_) h = dblk->forward(h, train);
        return out_->forward(h);
    }

    /// Returns gradients for the input layers (empty when the encoder is
    /// ablated away). Template gradients flow into the mapper parameters.
    std::vector<Tensor> backward(const Tensor& gy) {
        Tensor g = out_->backward(gy);
        for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) g = (*it)->backward(g);
        g = fusion2_->backward(g);
        g = fusion1_->backward(g);
        Tensor genc, gtmap;
        if (use_encoder_) {
            split_channels(g, enc_channels(), genc, gtmap);
        } else {
            gtmap = g;
        }
        if (injected_) mapper_->backward(gtmap);
        std::vector<Tensor> glayers;
        if (use_encoder_) {
            for (auto it = encoder_.rbegin(); it != encoder_.rend(); ++it) genc = (*it)->backward(genc);
            for (int l = 0; l < n_layers_; ++l) {
                Tensor gl({3, cfg_.resolution, cfg_.resolution});
                std::copy(genc.data() + static_cast<int64_t>(l) * gl.size(),
                          genc.data() + static_cast<int64_t>(l + 1) * gl.size(), gl.data());
                glayers.push_back(std::move(gl));
            }
        }
        return glayers;
    }

    void collect(std::vector<nn::Param*>& out) override {
        mapper_->collect(out);
        for (auto& e : encoder_) e->collect(out);
        fusion1_->collect(out);
        fusion2_->collect(out);
        for (auto& dblk : decoder_) dblk->collect(out);
        out_->collect(out);
    }

private:
    int W() const { return cfg_.resolution; }

    int enc_channels() const {
        int ch = 3 * n_layers_;
        for (int k = 0; k < static_cast<int>(encoder_.size()); ++k)
            ch = std::min(cfg_.enc_cap, cfg_.enc_base << k);
        return ch;
    }

    static Tensor concat_channels(const Tensor& a, const Tensor& b) {
        Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
        std::copy(a.data(), a.data() + a.size(), out.data());
        std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
        return out;
    }

    static void split_channels(const Tensor& g, int ch_a, Tensor& ga, Tensor& gb) {
        ga = Tensor({ch_a, g.dim(1), g.dim(2)});
        gb = Tensor({g.dim(0) - ch_a, g.dim(1), g.dim(2)});
        std::copy(g.data(), g.data() + ga.size(), ga.data());
        std::copy(g.data() + ga.size(), g.data() + g.size(), gb.data());
    }

    std::string name_;
    GeneratorConfig cfg_;
    int n_layers_;
    bool use_encoder_;
    std::unique_ptr<TemplateMapper> mapper_;
    std::vector<std::unique_ptr<EncoderBlock>> encoder_;
    std::unique_ptr<FusionBlock> fusion1_, fusion2_;
    std::vector<std::unique_ptr<PanoBlock>> decoder_;
    std::unique_ptr<PanoOutBlock> out_;
    bool trainable_ = true;
    bool injected_ = true;
    mutable std::mutex mu_;

    friend FaceImage generate_panorama(PanoramaGenerator&, const std::vector<FaceImage>&,
                                       const FacialTemplate&, bool);
};

// ---------------------------------------------------------------------------
// Spec-level operations
// ---------------------------------------------------------------------------

/// Inference-mode generation. Concurrent calls on one generator are
/// serialized internally (forward passes keep per-pass scratch).
inline FaceImage generate_layer(LayerGenerator& gen, const FacialTemplate& t) {
    if (t.d() != gen.d())
        throw DimensionError("template d=" + std::to_string(t.d()) + " vs generator d=" +
                             std::to_string(gen.d()));
    std::lock_guard<std::mutex> lock(gen.mu_);
    return FaceImage(gen.forward(t.values, false));
}

inline FaceImage generate_panorama(PanoramaGenerator& gen, const std::vector<FaceImage>& layers,
                                   const FacialTemplate& t, bool inject_template = true) {
    if (t.d() != gen.d())
        throw DimensionError("template d=" + std::to_string(t.d()) + " vs generator d=" +
                             std::to_string(gen.d()));
    std::vector<Tensor> ls;
    ls.reserve(layers.size());
    for (const FaceImage& f : layers) ls.push_back(f.pixels);
    std::lock_guard<std::mutex> lock(gen.mu_);
    return FaceImage(gen.forward(ls, t.values, false, inject_template));
}

// ---------------------------------------------------------------------------
// The six-generator ensemble with checkpointing
// ---------------------------------------------------------------------------

/// All generators of one inverter: four foreground, one midground, one
/// panorama. Ablation rows may drop the midground generator or the panorama
/// generator entirely.
struct GeneratorSet {
    GeneratorConfig cfg;
    std::map<Component, std::unique_ptr<LayerGenerator>> layer_gens;
    std::unique_ptr<PanoramaGenerator> pano;
    int stage_tag = 0;
    bool has_midground = true;
    bool has_panorama = true;
    bool pano_uses_encoder = true;
    bool inject_template = true;  // false once trained with FT-S2 off

    static std::string layer_gen_name(Component c) {
        return c == Component::skin ? std::string("mg_skin") : std::string("fg_") + component_name(c);
    }

    static GeneratorSet build(const GeneratorConfig& cfg, bool with_midground = true,
                              bool with_panorama = true, bool pano_encoder = true) {
        GeneratorSet gs;
        gs.cfg = cfg;
        gs.has_midground = with_midground;
        gs.has_panorama = with_panorama;
        gs.pano_uses_encoder = pano_encoder;
        Rng root(cfg.seed);
        if (pano_encoder) {
            for (Component c : kComponents) {
                if (c == Component::skin && !with_midground) continue;
                const std::string nm = layer_gen_name(c);
                gs.layer_gens[c] =
                    std::make_unique<LayerGenerator>(nm, c, cfg, root.fork(nm));
            }
        }
        if (with_panorama) {
            const int n_inputs = pano_encoder ? (with_midground ? 5 : 4) : 0;
            gs.pano = std::make_unique<PanoramaGenerator>("pg_face", cfg, std::max(n_inputs, 1),
                                                          pano_encoder, root.fork("pg_face"));
        }
        return gs;
    }

    std::vector<nn::Param*> all_params() {
        std::vector<nn::Param*> ps;
        for (auto& [c, g] : layer_gens) g->collect(ps);
        if (pano) pano->collect(ps);
        return ps;
    }

    /// Components the panorama generator consumes, in encoder channel order.
    std::vector<Component> input_components() const {
        std::vector<Component> cs;
        if (!pano_uses_encoder) return cs;
        for (Component c : kComponents) {
            if (c == Component::skin && !has_midground) continue;
            cs.push_back(c);
        }
        return cs;
    }

    /// Full inversion pipeline x̂ = G(t). With the panorama generator ablated
    /// the layers are naively superposed pixel-wise (clipped sum); with the
    /// encoder ablated the panorama generator runs on the template map alone.
    FaceImage invert(const FacialTemplate& t) { return invert(t, inject_template); }

    FaceImage invert(const FacialTemplate& t, bool inject) {
        if (!has_panorama) {
            Tensor acc({3, cfg.resolution, cfg.resolution});
            for (Component c : input_components())
                acc.add_(layer_gens.at(c)->forward(t.values, false));
            for (int64_t i = 0; i < acc.size(); ++i) acc[i] = std::clamp(acc[i], -1.0f, 1.0f);
            return FaceImage(acc);
        }
        if (!pano_uses_encoder)
            return FaceImage(pano->forward({}, t.values, false, inject));
        std::vector<Tensor> layers;
        for (Component c : input_components())
            layers.push_back(layer_gens.at(c)->forward(t.values, false));
        return FaceImage(pano->forward(layers, t.values, false, inject));
    }

    void save(const std::string& path) {
        nlohmann::json manifest = {{"kind", "lbfti_generators"},
                                   {"config", cfg.to_json()},
                                   {"stage", stage_tag},
                                   {"has_midground", has_midground},
                                   {"has_panorama", has_panorama},
                                   {"pano_uses_encoder", pano_uses_encoder},
                                   {"inject_template", inject_template}};
        auto ps = all_params();
        io::save_checkpoint(path, manifest, ps);
    }

    static GeneratorSet load(const std::string& path) {
        nlohmann::json m = io::load_checkpoint_manifest(path);
        if (m.value("kind", "") != "lbfti_generators")
            throw FormatError("not a generator checkpoint: " + path);
        GeneratorSet gs = build(GeneratorConfig::from_json(m.at("config")),
                                m.value("has_midground", true), m.value("has_panorama", true),
                                m.value("pano_uses_encoder", true));
        gs.stage_tag = m.value("stage", 0);
        gs.inject_template = m.value("inject_template", true);
        auto ps = gs.all_params();
        io::load_checkpoint(path, ps);
        return gs;
    }
};

}  // namespace lbfti

#endif  // LBFTI_GENERATORS_HPP_
