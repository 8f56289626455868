#pragma once

// Shared encoder and generator, plus the two-stage inter-intra composition
// and its backward cycle. One parameter set each for encoder, detector and
// generator is referenced by every stage.

#include <optional>

#include "uld/detector.hpp"

namespace uld {

struct GeneratorConfig {
    int feature_dim = 256;  // D
    int enc_width = 64;
    int residual_blocks = 6;
    int upsample_blocks = 2;  // fixed by the 4x map->image ratio

    void validate() const {
        if (feature_dim < 4) throw ConfigError("generator: feature_dim must be >= 4");
        if (residual_blocks < 1) throw ConfigError("generator: residual_blocks must be >= 1");
        if (upsample_blocks != 2)
            throw ConfigError("generator: exactly two 2x upsampling blocks are supported");
    }
};

/// Phi_E: image [N,3,in,in] -> feature map [N,D,in/4,in/4]. Final layer is a
/// plain convolution so zeroing its weights yields a constant (bias) map.
template <typename T>
class Encoder {
  public:
    Encoder() = default;
    Encoder(nn::ParamStore<T>& ps, const GeneratorConfig& cfg, nn::RngEngine& rng) : cfg_(cfg) {
        cfg.validate();
        const int w = cfg.enc_width;
        down1_ = nn::ConvBlock<T>(ps, "encoder.down1", 3, w, 2, rng);
        down2_ = nn::ConvBlock<T>(ps, "encoder.down2", w, 2 * w, 2, rng);
        proj_ = nn::Conv2d<T>(ps, "encoder.proj", 2 * w, cfg.feature_dim, 3, 1, rng);
    }

    ag::Var<T> forward(ag::Tape<T>& tape, const ag::Var<T>& image) const {
        const auto& s = image->val.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] % 4 != 0 || s[2] != s[3])
            throw InputError("encoder: expected square [N,3,H,H] input with H % 4 == 0, got " +
                             shape_str(image->val));
        return proj_.forward(tape, down2_.forward(tape, down1_.forward(tape, image)));
    }

    nn::Conv2d<T>& output_layer() { return proj_; }

  private:
    GeneratorConfig cfg_;
    nn::ConvBlock<T> down1_, down2_;
    nn::Conv2d<T> proj_;
};

/// Psi: concat(features, heatmaps) -> 6 residual blocks -> two 2x upsampling
/// blocks -> image.
template <typename T>
class GeneratorNet {
  public:
    GeneratorNet() = default;
    GeneratorNet(nn::ParamStore<T>& ps, const GeneratorConfig& cfg, int K, nn::RngEngine& rng)
        : cfg_(cfg) {
        cfg.validate();
        const int g = cfg.feature_dim;
        const int g2 = std::max(4, g / 2);
        const int g4 = std::max(4, g / 4);
        entry_ = nn::ConvBlock<T>(ps, "generator.entry", g + K, g, 1, rng);
        for (int i = 0; i < cfg.residual_blocks; ++i)
            blocks_.emplace_back(ps, "generator.res" + std::to_string(i), g, rng);
        up1_ = nn::ConvBlock<T>(ps, "generator.up1", g, g2, 1, rng);
        up2_ = nn::ConvBlock<T>(ps, "generator.up2", g2, g4, 1, rng);
        out_ = nn::Conv2d<T>(ps, "generator.out", g4, 3, 3, 1, rng);
    }

    ag::Var<T> forward(ag::Tape<T>& tape, const ag::Var<T>& features,
                       const ag::Var<T>& heatmaps) const {
        if (features->val.dim(2) != heatmaps->val.dim(2) ||
            features->val.dim(3) != heatmaps->val.dim(3))
            throw InputError("generator: feature/heatmap spatial size mismatch " +
                             shape_str(features->val) + " vs " + shape_str(heatmaps->val));
        auto h = entry_.forward(tape, ag::concat_channels(tape, features, heatmaps));
        for (const auto& b : blocks_) h = b.forward(tape, h);
        h = up1_.forward(tape, ag::upsample2x(tape, h));
        h = up2_.forward(tape, ag::upsample2x(tape, h));
        return out_.forward(tape, h);  // raw values; clamp only on export
    }

  private:
    GeneratorConfig cfg_;
    nn::ConvBlock<T> entry_;
    std::vector<nn::ResidualBlock<T>> blocks_;
    nn::ConvBlock<T> up1_, up2_;
    nn::Conv2d<T> out_;
};

/// Outputs of one generation direction (source -> target).
template <typename T>
struct GenerationOutputs {
    std::optional<ag::Var<T>> image_aux;  // I_a; absent when the auxiliary stage is disabled
    ag::Var<T> image_target;              // final generated image
    typename Detector<T>::Detection det_source, det_target, det_aux;
};

template <typename T>
struct CycleOutputs {
    GenerationOutputs<T> forward;                  // targets x'
    std::optional<GenerationOutputs<T>> backward;  // targets x; absent when cycle disabled
};

/// Wires detector, encoder and generator into the two-stage pipeline.
/// The same three sub-networks are used at both stages and both directions.
template <typename T>
class GenerationPipeline {
  public:
    GenerationPipeline(const Detector<T>& det, const Encoder<T>& enc, const GeneratorNet<T>& gen,
                       bool use_aux = true)
        : det_(&det), enc_(&enc), gen_(&gen), use_aux_(use_aux) {}

    bool uses_aux() const { return use_aux_; }

    /// I_a = Psi(Phi_E(x), Phi_H(x_aux)); I_target = Psi(Phi_E(I_a), Phi_H(x_prime)).
    /// Detections may be passed in to share detector passes between directions.
    GenerationOutputs<T> inter_intra_forward(ag::Tape<T>& tape, const ag::Var<T>& x,
                                             const typename Detector<T>::Detection& det_x,
                                             const typename Detector<T>::Detection& det_xp,
                                             const typename Detector<T>::Detection& det_xa) const {
        GenerationOutputs<T> out;
        out.det_source = det_x;
        out.det_target = det_xp;
        out.det_aux = det_xa;
        auto fs = enc_->forward(tape, x);
        if (use_aux_) {
            auto ia = gen_->forward(tape, fs, det_xa.heatmaps);
            out.image_aux = ia;
            auto ft = enc_->forward(tape, ia);
            out.image_target = gen_->forward(tape, ft, det_xp.heatmaps);
        } else {
            // Baseline: single-stage generation driven by the paired image.
            out.image_target = gen_->forward(tape, fs, det_xp.heatmaps);
        }
        return out;
    }

    GenerationOutputs<T> inter_intra_forward(ag::Tape<T>& tape, const ag::Var<T>& x,
                                             const ag::Var<T>& x_prime,
                                             const ag::Var<T>& x_aux) const {
        check_shapes(x, x_prime, x_aux);
        return inter_intra_forward(tape, x, det_->detect(tape, x), det_->detect(tape, x_prime),
                                   det_->detect(tape, x_aux));
    }

    /// Forward direction plus the backward path with source/target switched.
    /// The detector runs once per distinct input; both paths share its nodes.
    CycleOutputs<T> cycle_forward(ag::Tape<T>& tape, const ag::Var<T>& x,
                                  const ag::Var<T>& x_prime, const ag::Var<T>& x_aux,
                                  bool enable_cycle = true,
                                  const ag::Var<T>& fresh_aux = nullptr) const {
        check_shapes(x, x_prime, x_aux);
        auto det_x = det_->detect(tape, x);
        auto det_xp = det_->detect(tape, x_prime);
        auto det_xa = det_->detect(tape, x_aux);
        CycleOutputs<T> out;
        out.forward = inter_intra_forward(tape, x, det_x, det_xp, det_xa);
        if (enable_cycle) {
            auto det_back_aux = det_xa;
            if (fresh_aux) det_back_aux = det_->detect(tape, fresh_aux);
            out.backward = inter_intra_forward(tape, x_prime, det_xp, det_x, det_back_aux);
        }
        return out;
    }

  private:
    static void check_shapes(const ag::Var<T>& a, const ag::Var<T>& b, const ag::Var<T>& c) {
        if (!a->val.same_shape(b->val) || !a->val.same_shape(c->val))
            throw InputError("pipeline: x, x_prime, x_aux must share one shape");
    }

    const Detector<T>* det_;
    const Encoder<T>* enc_;
    const GeneratorNet<T>* gen_;
    bool use_aux_;
};

}  // namespace uld
