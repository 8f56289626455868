#pragma once

// The trainable model: one detector, one encoder, one generator, a single
// parameter set each. Checkpoints are a tensor blob plus a JSON sidecar
// describing the architecture.

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "uld/checkpoint_container.hpp"
#include "uld/generator.hpp"

namespace uld {

template <typename T>
struct Model {
    DetectorConfig det_cfg;
    GeneratorConfig gen_cfg;
    nn::ParamStore<T> params;
    Detector<T> detector;
    Encoder<T> encoder;
    GeneratorNet<T> generator;

    Model(const DetectorConfig& dc, const GeneratorConfig& gc, uint64_t init_seed)
        : det_cfg(dc), gen_cfg(gc) {
        nn::RngEngine rng(init_seed);
        detector = Detector<T>(params, det_cfg, rng);
        encoder = Encoder<T>(params, gen_cfg, rng);
        generator = GeneratorNet<T>(params, gen_cfg, det_cfg.K, rng);
        if (det_cfg.in_size / det_cfg.map_size != 4)
            throw ConfigError("model: generator upsampling fixes in_size/map_size at 4");
    }
};

namespace ckpt {

inline std::string strip_ckpt_ext(const std::string& path) {
    for (const char* ext : {".bin", ".json"})
        if (path.size() > std::strlen(ext) &&
            path.compare(path.size() - std::strlen(ext), std::string::npos, ext) == 0)
            return path.substr(0, path.size() - std::strlen(ext));
    return path;
}

template <typename T>
nlohmann::json sidecar_json(const Model<T>& m) {
    return nlohmann::json{{"architecture", "hourglass1-resgen6"},
                          {"K", m.det_cfg.K},
                          {"beta", m.det_cfg.beta},
                          {"sigma", m.det_cfg.sigma},
                          {"in_size", m.det_cfg.in_size},
                          {"map_size", m.det_cfg.map_size},
                          {"width", m.det_cfg.width},
                          {"hg_depth", m.det_cfg.hg_depth},
                          {"D", m.gen_cfg.feature_dim},
                          {"enc_width", m.gen_cfg.enc_width},
                          {"residual_blocks", m.gen_cfg.residual_blocks},
                          {"upsample_blocks", m.gen_cfg.upsample_blocks},
                          {"dtype", sizeof(T) == 4 ? "f32" : "f64"}};
}

/// Writes prefix.bin (weights + any extra state already in `extra`) and
/// prefix.json (architecture sidecar).
template <typename T>
void save(const Model<T>& m, const std::string& prefix, TensorFile extra = {}) {
    for (const auto& [name, v] : m.params.entries()) extra.set(name, v->val);
    extra.write(prefix + ".bin");
    std::ofstream f(prefix + ".json");
    if (!f) throw IoError("cannot write " + prefix + ".json");
    f << sidecar_json(m).dump(2) << "\n";
}

inline nlohmann::json read_sidecar(const std::string& path_any) {
    const std::string prefix = strip_ckpt_ext(path_any);
    std::ifstream f(prefix + ".json");
    if (!f) throw IoError("cannot open checkpoint sidecar " + prefix + ".json");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(prefix + ".json: invalid JSON: " + e.what());
    }
    return j;
}

/// Rebuild a model from prefix.{bin,json} (either file name is accepted).
/// Returns the model and the raw blob, which may carry training state.
template <typename T>
std::pair<Model<T>, TensorFile> load(const std::string& path_any) {
    const std::string prefix = strip_ckpt_ext(path_any);
    const nlohmann::json j = read_sidecar(path_any);
    DetectorConfig dc;
    dc.K = j.at("K").get<int>();
    dc.beta = j.at("beta").get<double>();
    dc.sigma = j.at("sigma").get<double>();
    dc.in_size = j.at("in_size").get<int>();
    dc.map_size = j.at("map_size").get<int>();
    dc.width = j.at("width").get<int>();
    dc.hg_depth = j.at("hg_depth").get<int>();
    GeneratorConfig gc;
    gc.feature_dim = j.at("D").get<int>();
    gc.enc_width = j.at("enc_width").get<int>();
    gc.residual_blocks = j.at("residual_blocks").get<int>();
    gc.upsample_blocks = j.at("upsample_blocks").get<int>();
    Model<T> m(dc, gc, /*init_seed=*/0);
    TensorFile tf = TensorFile::read(prefix + ".bin");
    for (auto& [name, v] : m.params.entries()) v->val = tf.get<T>(name);
    return {std::move(m), std::move(tf)};
}

}  // namespace ckpt

}  // namespace uld
