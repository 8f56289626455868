#include "uld/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace uld {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") {
        out = true;
        return true;
    }
    if (v == "false" || v == "0" || v == "off" || v == "no") {
        out = false;
        return true;
    }
    return false;
}

}  // namespace

RunConfig::RunConfig() {
    add("deform.scale_min", Type::Double, "0.9");
    add("deform.scale_max", Type::Double, "1.1");
    add("deform.rot_max_deg", Type::Double, "15");
    add("deform.trans_max", Type::Double, "0.1");

    add("model.K", Type::Int, "10");
    add("model.beta", Type::Double, "10");
    add("model.sigma", Type::Double, "0.5");
    add("model.in_size", Type::Int, "128");
    add("model.map_size", Type::Int, "32");
    add("model.width", Type::Int, "64");
    add("model.hg_depth", Type::Int, "2");
    add("model.feature_dim", Type::Int, "256");
    add("model.enc_width", Type::Int, "64");
    add("model.residual_blocks", Type::Int, "6");

    add("loss.mode", Type::Enum, "both", {"both", "recon_only", "perceptual_only"});
    add("loss.backbone", Type::Enum, "random_fixed",
        {"pretrained16", "pretrained19", "random_fixed"});
    add("loss.layers", Type::String, "");  // empty -> backbone default taps
    add("loss.backbone_weights", Type::String, "");

    add("train.batch_size", Type::Int, "32");
    add("train.lr", Type::Double, "0.001");
    add("train.lr_decay", Type::Double, "0.1");
    add("train.lr_decay_every", Type::Int, "30");
    add("train.epochs", Type::Int, "90");
    add("train.seed", Type::U64, "0");
    add("train.aux", Type::Bool, "true");
    add("train.cycle", Type::Bool, "true");
    add("train.checkpoint_every", Type::Int, "10");
    add("cycle.fresh_aux", Type::Bool, "false");

    add("eval.ridge", Type::Double, "-1");
    add("eval.bias", Type::Bool, "true");
    add("eval.left_eye", Type::Int, "0");
    add("eval.right_eye", Type::Int, "1");

    add("data.size", Type::Int, "128");
    add("data.crop", Type::Double, "0");
}

void RunConfig::add(const std::string& key, Type type, const std::string& def,
                    std::vector<std::string> choices) {
    entries_[key] = Entry{type, def, std::move(choices)};
    order_.push_back(key);
}

const RunConfig::Entry& RunConfig::find(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

void RunConfig::validate_value(const std::string& key, const Entry& e,
                               const std::string& value) const {
    switch (e.type) {
        case Type::Double: {
            size_t pos = 0;
            try {
                (void)std::stod(value, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != value.size() || value.empty())
                throw ConfigError(key + ": expected a number, got '" + value + "'");
            break;
        }
        case Type::Int:
        case Type::U64: {
            size_t pos = 0;
            try {
                (void)std::stoll(value, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != value.size() || value.empty())
                throw ConfigError(key + ": expected an integer, got '" + value + "'");
            break;
        }
        case Type::Bool: {
            bool b;
            if (!parse_bool(value, b))
                throw ConfigError(key + ": expected true/false, got '" + value + "'");
            break;
        }
        case Type::Enum: {
            if (std::find(e.choices.begin(), e.choices.end(), value) == e.choices.end()) {
                std::string opts;
                for (const auto& c : e.choices) opts += (opts.empty() ? "" : ", ") + c;
                throw ConfigError(key + ": '" + value + "' is not one of {" + opts + "}");
            }
            break;
        }
        case Type::String:
            break;
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
    validate_value(key, it->second, value);
    it->second.value = value;
}

void RunConfig::set_kv(const std::string& kv) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

double RunConfig::get_double(const std::string& key) const { return std::stod(find(key).value); }
int RunConfig::get_int(const std::string& key) const { return std::stoi(find(key).value); }
uint64_t RunConfig::get_u64(const std::string& key) const {
    return static_cast<uint64_t>(std::stoull(find(key).value));
}
bool RunConfig::get_bool(const std::string& key) const {
    bool b = false;
    parse_bool(find(key).value, b);
    return b;
}
const std::string& RunConfig::get_string(const std::string& key) const { return find(key).value; }

std::string RunConfig::echo() const {
    std::ostringstream os;
    os << "# " << kVersionTag << " resolved configuration\n";
    for (const auto& key : order_) os << key << " = " << entries_.at(key).value << "\n";
    return os.str();
}

DeformRanges RunConfig::deform_ranges() const {
    DeformRanges r;
    r.scale_min = get_double("deform.scale_min");
    r.scale_max = get_double("deform.scale_max");
    r.rot_max = get_double("deform.rot_max_deg") * 3.14159265358979323846 / 180.0;
    r.trans_max = get_double("deform.trans_max");
    r.validate();
    return r;
}

DetectorConfig RunConfig::detector_config() const {
    DetectorConfig c;
    c.K = get_int("model.K");
    c.beta = get_double("model.beta");
    c.sigma = get_double("model.sigma");
    c.in_size = get_int("model.in_size");
    c.map_size = get_int("model.map_size");
    c.width = get_int("model.width");
    c.hg_depth = get_int("model.hg_depth");
    c.validate();
    return c;
}

GeneratorConfig RunConfig::generator_config() const {
    GeneratorConfig c;
    c.feature_dim = get_int("model.feature_dim");
    c.enc_width = get_int("model.enc_width");
    c.residual_blocks = get_int("model.residual_blocks");
    c.validate();
    return c;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c;
    c.batch_size = get_int("train.batch_size");
    c.lr = get_double("train.lr");
    c.lr_decay = get_double("train.lr_decay");
    c.lr_decay_every = get_int("train.lr_decay_every");
    c.epochs = get_int("train.epochs");
    c.seed = get_u64("train.seed");
    c.aux = get_bool("train.aux");
    c.cycle = get_bool("train.cycle");
    c.fresh_aux = get_bool("cycle.fresh_aux");
    c.loss_mode = parse_loss_mode(get_string("loss.mode"));
    c.deform = deform_ranges();
    c.checkpoint_every = get_int("train.checkpoint_every");
    c.validate();
    return c;
}

PerceptualConfig RunConfig::perceptual_config() const {
    PerceptualConfig c;
    c.backbone = parse_backbone(get_string("loss.backbone"));
    c.weights_path = get_string("loss.backbone_weights");
    const std::string layers = get_string("loss.layers");
    if (!layers.empty()) {
        std::istringstream ss(layers);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = trim(item);
            if (!t.empty()) c.layers.push_back(t);
        }
        if (c.layers.empty()) throw ConfigError("loss.layers: no layers selected");
    }
    return c;
}

RegressorOptions RunConfig::regressor_options() const {
    RegressorOptions o;
    o.ridge = get_double("eval.ridge");
    o.bias = get_bool("eval.bias");
    return o;
}

std::pair<int, int> RunConfig::interocular_pair() const {
    return {get_int("eval.left_eye"), get_int("eval.right_eye")};
}

}  // namespace uld
