#pragma once

// Dataset loading, the toy face-sprite synthesizer with exact ground-truth
// landmarks, and the landmark CSV format shared by predictions and
// annotations: header `image_id,point_index,x_px,y_px`, one row per point.

#include <optional>
#include <string>
#include <vector>

#include "uld/geometry.hpp"
#include "uld/tensor.hpp"

namespace uld {

struct DatasetItem {
    std::string id;  // manifest-relative path for loaded data, synthetic id for toys
    Tensor<double> image;  // {3,H,W} in [0,1]
    std::optional<std::vector<Point2>> landmarks;  // pixel coords
};

struct Dataset {
    std::vector<DatasetItem> items;
    std::string split;
    int image_size = 0;
    int skipped = 0;  // corrupt images skipped at load
};

/// Directory layout: root/manifest.txt (relative image paths, one per line),
/// optional root/annotations.csv. Images are resized to target_size and
/// annotations rescaled by the same factors. Item order is manifest order.
Dataset load_image_dataset(const std::string& root_dir, const std::string& manifest_name,
                           int target_size);

struct ToyConfig {
    int count = 2000;
    int image_size = 64;
    uint64_t seed = 7;
    int clutter = 6;  // distractor shapes behind the face

    void validate() const;
};

struct ToySample {
    Tensor<double> image;
    std::vector<Point2> landmarks;  // left eye, right eye, nose, mouth-left, mouth-right
};

/// Pure function of (config, index): sample i is identical no matter which
/// subset of the dataset is generated.
ToySample synthesize_toy_sample(const ToyConfig& cfg, int index);

/// Whole dataset in memory, landmarks exact as drawn.
Dataset synthesize_toy_dataset(const ToyConfig& cfg);

/// Write `count` sprites to dir/images/*.png plus manifest.txt and
/// annotations.csv. Byte-identical across runs for a fixed config.
void write_toy_dataset(const std::string& dir, const ToyConfig& cfg);

// Landmark tables -------------------------------------------------------

struct LandmarkTable {
    std::vector<std::string> ids;                  // unique, in file order
    std::vector<std::vector<Point2>> points;       // parallel to ids, indexed by point_index

    int points_per_image() const { return points.empty() ? 0 : static_cast<int>(points[0].size()); }
};

LandmarkTable read_landmarks(const std::string& path);
void write_landmarks(const std::string& path, const LandmarkTable& table);

}  // namespace uld
