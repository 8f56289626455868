#pragma once

// Landmark detector: image -> K score maps -> K soft-argmax coordinates ->
// K Gaussian heatmaps. Coordinates are (row, col) in score-map grid units;
// multiply by in_size/map_size to get image pixels.

#include "uld/nn.hpp"

namespace uld {

struct DetectorConfig {
    int K = 10;
    double beta = 10.0;
    double sigma = 0.5;   // grid units
    int in_size = 128;
    int map_size = 32;
    int width = 64;       // hourglass channel width; bottleneck runs at 2x
    int hg_depth = 2;

    void validate() const {
        if (K < 1) throw ConfigError("detector: K must be >= 1");
        if (beta <= 0) throw ConfigError("detector: beta must be > 0");
        if (sigma <= 0) throw ConfigError("detector: sigma must be > 0");
        if (in_size <= 0 || map_size <= 0 || in_size % map_size != 0)
            throw ConfigError("detector: in_size must be divisible by map_size");
        if (in_size / map_size != 4)
            throw ConfigError("detector: in_size/map_size must be 4 (two stride-2 stem stages, "
                              "two 2x generator upsampling stages)");
        if (map_size >> hg_depth < 1) throw ConfigError("detector: hg_depth too deep for map");
    }
};

/// Single-hourglass score-map network plus the differentiable bottleneck.
template <typename T>
class Detector {
  public:
    Detector() = default;
    Detector(nn::ParamStore<T>& ps, const DetectorConfig& cfg, nn::RngEngine& rng) : cfg_(cfg) {
        cfg.validate();
        const int w = cfg.width;
        stem1_ = nn::ConvBlock<T>(ps, "detector.stem1", 3, w, 2, rng);
        stem2_ = nn::ConvBlock<T>(ps, "detector.stem2", w, w, 2, rng);
        int ch = w;
        for (int i = 0; i < cfg.hg_depth; ++i) {
            const int out = (i == cfg.hg_depth - 1) ? 2 * w : w;
            downs_.emplace_back(ps, "detector.down" + std::to_string(i), ch, out, 2, rng);
            skip_ch_.push_back(ch);
            ch = out;
        }
        bottleneck_ = nn::ConvBlock<T>(ps, "detector.bottleneck", ch, ch, 1, rng);
        for (int i = cfg.hg_depth - 1; i >= 0; --i) {
            ups_.emplace_back(ps, "detector.up" + std::to_string(i), ch, skip_ch_[i], 1, rng);
            ch = skip_ch_[i];
        }
        head_ = nn::ConvBlock<T>(ps, "detector.head", ch, ch, 1, rng);
        out_ = nn::Conv2d<T>(ps, "detector.out", ch, cfg.K, 1, 1, rng);
    }

    const DetectorConfig& config() const { return cfg_; }

    /// Image batch [N,3,in,in] -> raw score maps [N,K,map,map].
    ag::Var<T> score_maps(ag::Tape<T>& tape, const ag::Var<T>& image) const {
        const auto& s = image->val.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.in_size || s[3] != cfg_.in_size)
            throw InputError("detector: expected [N,3," + std::to_string(cfg_.in_size) + "," +
                             std::to_string(cfg_.in_size) + "] input, got " +
                             shape_str(image->val));
        auto h = stem2_.forward(tape, stem1_.forward(tape, image));
        std::vector<ag::Var<T>> skips;
        for (const auto& d : downs_) {
            skips.push_back(h);
            h = d.forward(tape, h);
        }
        h = bottleneck_.forward(tape, h);
        for (size_t i = 0; i < ups_.size(); ++i) {
            h = ups_[i].forward(tape, ag::upsample2x(tape, h));
            h = ag::add(tape, h, skips[skips.size() - 1 - i]);
        }
        return out_.forward(tape, head_.forward(tape, h));
    }

    ag::Var<T> soft_argmax(ag::Tape<T>& tape, const ag::Var<T>& maps) const {
        return ag::softargmax(tape, maps, static_cast<T>(cfg_.beta));
    }

    ag::Var<T> render_heatmaps(ag::Tape<T>& tape, const ag::Var<T>& landmarks) const {
        return ag::gaussian_render(tape, landmarks, cfg_.map_size, cfg_.map_size,
                                   static_cast<T>(cfg_.sigma));
    }

    struct Detection {
        ag::Var<T> scores;     // [N,K,map,map]
        ag::Var<T> landmarks;  // [N,K,2] (row, col) grid units
        ag::Var<T> heatmaps;   // [N,K,map,map] in (0,1]
    };

    Detection detect(ag::Tape<T>& tape, const ag::Var<T>& image) const {
        Detection d;
        d.scores = score_maps(tape, image);
        d.landmarks = soft_argmax(tape, d.scores);
        d.heatmaps = render_heatmaps(tape, d.landmarks);
        return d;
    }

    /// Access to the final projection, used by tests to pin the
    /// constant-bias-map behaviour.
    nn::Conv2d<T>& output_layer() { return out_; }

  private:
    DetectorConfig cfg_;
    nn::ConvBlock<T> stem1_, stem2_;
    std::vector<nn::ConvBlock<T>> downs_;
    std::vector<int> skip_ch_;
    nn::ConvBlock<T> bottleneck_;
    std::vector<nn::ConvBlock<T>> ups_;
    nn::ConvBlock<T> head_;
    nn::Conv2d<T> out_;
};

/// Grid -> pixel coordinate scale (4 for 128/32).
inline double grid_to_px_scale(const DetectorConfig& c) {
    return static_cast<double>(c.in_size) / c.map_size;
}

}  // namespace uld
