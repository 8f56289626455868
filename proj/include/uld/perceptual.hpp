#pragma once

// Frozen feature extractors for the perceptual loss: the 16/19-layer
// pretrained convolutional classifiers (weights loaded from a file) or a
// deterministic randomly-initialized pyramid for desk-scale runs.

#include <map>
#include <set>

#include "uld/checkpoint_container.hpp"
#include "uld/nn.hpp"

namespace uld {

enum class PerceptualBackbone { random_fixed, pretrained16, pretrained19 };

inline PerceptualBackbone parse_backbone(const std::string& s) {
    if (s == "random_fixed") return PerceptualBackbone::random_fixed;
    if (s == "pretrained16") return PerceptualBackbone::pretrained16;
    if (s == "pretrained19") return PerceptualBackbone::pretrained19;
    throw ConfigError("loss.backbone: '" + s +
                      "' is not one of {pretrained16, pretrained19, random_fixed}");
}

struct PerceptualConfig {
    PerceptualBackbone backbone = PerceptualBackbone::random_fixed;
    std::vector<std::string> layers;  // empty -> backbone default tap set
    std::string weights_path;         // required for pretrained backbones
};

namespace detail {

struct ConvSpec {
    std::string name;  // tap name of the relu following this conv
    int out_ch;
};
struct StageSpec {
    std::vector<ConvSpec> convs;
    bool pool_after = true;
};

inline std::vector<StageSpec> backbone_plan(PerceptualBackbone b) {
    auto conv = [](std::string n, int c) { return ConvSpec{std::move(n), c}; };
    switch (b) {
        case PerceptualBackbone::random_fixed:
            return {{{conv("stage1", 8)}, true},
                    {{conv("stage2", 16)}, true},
                    {{conv("stage3", 32)}, true},
                    {{conv("stage4", 32)}, false}};
        case PerceptualBackbone::pretrained16:
            return {{{conv("relu1_1", 64), conv("relu1_2", 64)}, true},
                    {{conv("relu2_1", 128), conv("relu2_2", 128)}, true},
                    {{conv("relu3_1", 256), conv("relu3_2", 256), conv("relu3_3", 256)}, true},
                    {{conv("relu4_1", 512), conv("relu4_2", 512), conv("relu4_3", 512)}, false}};
        case PerceptualBackbone::pretrained19:
            return {{{conv("relu1_1", 64), conv("relu1_2", 64)}, true},
                    {{conv("relu2_1", 128), conv("relu2_2", 128)}, true},
                    {{conv("relu3_1", 256), conv("relu3_2", 256), conv("relu3_3", 256),
                      conv("relu3_4", 256)},
                     true},
                    {{conv("relu4_1", 512), conv("relu4_2", 512), conv("relu4_3", 512),
                      conv("relu4_4", 512)},
                     false}};
    }
    throw ConfigError("unknown perceptual backbone");
}

inline std::vector<std::string> default_taps(PerceptualBackbone b) {
    switch (b) {
        case PerceptualBackbone::random_fixed:
            return {"stage1", "stage2", "stage3", "stage4"};
        case PerceptualBackbone::pretrained16:
            return {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
        case PerceptualBackbone::pretrained19:
            return {"relu1_2", "relu2_2", "relu3_4", "relu4_4"};
    }
    throw ConfigError("unknown perceptual backbone");
}

}  // namespace detail

// Seed for the deterministic random-fixed pyramid. Changing it changes the
// loss landscape, so it is a constant, not a config knob.
inline constexpr uint64_t kRandomFixedSeed = 0x9e3779b97f4a7c15ULL;

/// Frozen conv stack with named relu taps. Parameters live in a private
/// store: they never reach the optimizer or the model checkpoint.
template <typename T>
class PerceptualNet {
  public:
    explicit PerceptualNet(const PerceptualConfig& cfg) : cfg_(cfg) {
        plan_ = detail::backbone_plan(cfg.backbone);
        taps_ = cfg.layers.empty() ? detail::default_taps(cfg.backbone) : cfg.layers;
        std::set<std::string> valid;
        for (const auto& st : plan_)
            for (const auto& c : st.convs) valid.insert(c.name);
        for (const auto& t : taps_)
            if (!valid.count(t))
                throw ConfigError("loss.layers: unknown layer '" + t + "' for this backbone");

        const bool pretrained = cfg.backbone != PerceptualBackbone::random_fixed;
        std::optional<TensorFile> weights;
        if (pretrained) {
            if (cfg.weights_path.empty())
                throw ConfigError(
                    "loss.backbone: pretrained backbone needs loss.backbone_weights=FILE "
                    "(or use loss.backbone=random_fixed)");
            weights = TensorFile::read(cfg.weights_path);
        }

        nn::RngEngine rng(kRandomFixedSeed);
        int in_ch = 3;
        const std::string deepest = deepest_tap();
        bool done = false;
        for (const auto& st : plan_) {
            if (done) break;
            Stage stage;
            for (const auto& c : st.convs) {
                nn::Conv2d<T> conv;
                if (pretrained) {
                    conv.w = ag::leaf(weights->get<T>(c.name + ".w"), false);
                    conv.b = ag::leaf(weights->get<T>(c.name + ".b"), false);
                    const auto& ws = conv.w->val.shape();
                    if (ws.size() != 4 || ws[0] != c.out_ch || ws[1] != in_ch)
                        throw ConfigError("backbone weights: '" + c.name +
                                          ".w' has unexpected shape " + shape_str(conv.w->val));
                    conv.stride = 1;
                    conv.pad = ws[2] / 2;
                } else {
                    conv = nn::Conv2d<T>(store_, c.name, in_ch, c.out_ch, 3, 1, rng,
                                         /*trainable=*/false);
                }
                stage.convs.push_back(conv);
                stage.names.push_back(c.name);
                in_ch = c.out_ch;
                if (c.name == deepest) {
                    stage.pool_after = false;
                    done = true;
                    break;
                }
            }
            if (!done) stage.pool_after = st.pool_after;
            stages_.push_back(std::move(stage));
        }
    }

    const std::vector<std::string>& taps() const { return taps_; }
    PerceptualBackbone backbone() const { return cfg_.backbone; }

    /// Run the stack and return the selected tap activations, in tap order.
    std::vector<ag::Var<T>> forward(ag::Tape<T>& tape, const ag::Var<T>& image) const {
        std::map<std::string, ag::Var<T>> got;
        ag::Var<T> h = image;
        if (cfg_.backbone != PerceptualBackbone::random_fixed) {
            static const std::vector<T> mean{T(0.485), T(0.456), T(0.406)};
            static const std::vector<T> stdev{T(0.229), T(0.224), T(0.225)};
            h = ag::channel_normalize(tape, h, mean, stdev);
        }
        for (const auto& st : stages_) {
            for (size_t i = 0; i < st.convs.size(); ++i) {
                h = ag::relu(tape, st.convs[i].forward(tape, h));
                got[st.names[i]] = h;
            }
            if (st.pool_after) h = ag::maxpool2x2(tape, h);
        }
        std::vector<ag::Var<T>> out;
        for (const auto& t : taps_) out.push_back(got.at(t));
        return out;
    }

    const nn::ParamStore<T>& store() const { return store_; }

  private:
    std::string deepest_tap() const {
        std::string last;
        for (const auto& st : plan_)
            for (const auto& c : st.convs)
                for (const auto& t : taps_)
                    if (c.name == t) last = c.name;
        return last;
    }

    struct Stage {
        std::vector<nn::Conv2d<T>> convs;
        std::vector<std::string> names;
        bool pool_after = false;
    };

    PerceptualConfig cfg_;
    std::vector<detail::StageSpec> plan_;
    std::vector<std::string> taps_;
    std::vector<Stage> stages_;
    nn::ParamStore<T> store_;
};

}  // namespace uld
