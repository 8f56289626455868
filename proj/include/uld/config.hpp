#pragma once

// Flat `key = value` run configuration: every key is registered with a typed
// default, unknown keys are rejected, CLI --set overrides file values, and
// the resolved result can be echoed for reproducibility.

#include <map>
#include <string>
#include <vector>

#include "uld/detector.hpp"
#include "uld/evaluation.hpp"
#include "uld/perceptual.hpp"
#include "uld/training.hpp"

namespace uld {

inline constexpr const char* kVersionTag = "uld-0.1.0";

class RunConfig {
  public:
    RunConfig();

    /// Parse a config file. Lines: `key = value`, blank, or `# comment`.
    void load_file(const std::string& path);

    /// Apply one `key=value` override (CLI --set).
    void set_kv(const std::string& kv);
    void set(const std::string& key, const std::string& value);

    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;

    /// Resolved `key = value` text, one line per key, stable order.
    std::string echo() const;

    // Typed views over the flat keys.
    DeformRanges deform_ranges() const;
    DetectorConfig detector_config() const;
    GeneratorConfig generator_config() const;
    TrainConfig train_config() const;
    PerceptualConfig perceptual_config() const;
    RegressorOptions regressor_options() const;
    std::pair<int, int> interocular_pair() const;

  private:
    enum class Type { Double, Int, U64, Bool, String, Enum };
    struct Entry {
        Type type;
        std::string value;
        std::vector<std::string> choices;  // Enum only
    };

    void add(const std::string& key, Type type, const std::string& def,
             std::vector<std::string> choices = {});
    const Entry& find(const std::string& key) const;
    void validate_value(const std::string& key, const Entry& e, const std::string& value) const;

    std::map<std::string, Entry> entries_;
    std::vector<std::string> order_;
};

}  // namespace uld
