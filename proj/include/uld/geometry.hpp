#pragma once

// Similarity deformations that create intra-subject pairs: scale, then
// rotate, then translate, all about the image center. Images are sampled
// bilinearly with reflect-101 borders; points are mapped by the same forward
// transform the image sampler inverts.

#include <array>
#include <random>
#include <vector>

#include "uld/tensor.hpp"

namespace uld {

struct Point2 {
    double x = 0;  // column, pixels
    double y = 0;  // row, pixels
};

struct DeformParams {
    double scale = 1.0;
    double rotation = 0.0;  // radians; positive turns +y (down) toward +x (right)
    double tx = 0.0;        // fraction of image width
    double ty = 0.0;        // fraction of image height

    void validate() const;
};

struct DeformRanges {
    double scale_min = 0.9;
    double scale_max = 1.1;
    double rot_max = 15.0 * 3.14159265358979323846 / 180.0;  // radians
    double trans_max = 0.1;

    void validate() const;
};

/// Each field drawn independently and uniformly from its range.
DeformParams sample_deform(const DeformRanges& ranges, std::mt19937_64& rng);

/// Forward similarity transform of pixel points; size is (W, H).
std::vector<Point2> apply_warp_points(const std::vector<Point2>& points,
                                      const DeformParams& params, int width, int height);
Point2 apply_warp_point(const Point2& p, const DeformParams& params, int width, int height);

/// Warp a {C,H,W} image. Identity params reproduce the input bit-for-bit.
Tensor<double> apply_warp_image(const Tensor<double>& image, const DeformParams& params);

/// Coefficients of the inverse map used by the sampler:
/// src_x = c[0] + c[1]*x + c[2]*y, src_y = c[3] + c[4]*x + c[5]*y.
std::array<double, 6> inverse_warp_coeffs(const DeformParams& params, int width, int height);

}  // namespace uld
