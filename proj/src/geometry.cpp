#include "uld/geometry.hpp"

#include <cmath>

#include "uld/common.hpp"
#include "uld/kernels.hpp"

namespace uld {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void DeformParams::validate() const {
    if (!(scale > 0)) throw InputError("deform: scale must be > 0");
    if (!(rotation >= -kPi && rotation <= kPi))
        throw InputError("deform: rotation must lie in [-pi, pi]");
    if (!(std::abs(tx) <= 0.5 && std::abs(ty) <= 0.5))
        throw InputError("deform: |tx|, |ty| must be <= 0.5");
}

void DeformRanges::validate() const {
    if (!(scale_min > 0 && scale_min <= scale_max))
        throw ConfigError("deform ranges: need 0 < scale_min <= scale_max");
    if (!(rot_max >= 0 && rot_max <= kPi))
        throw ConfigError("deform ranges: need 0 <= rot_max <= pi");
    if (!(trans_max >= 0 && trans_max <= 0.5))
        throw ConfigError("deform ranges: need 0 <= trans_max <= 0.5");
}

DeformParams sample_deform(const DeformRanges& ranges, std::mt19937_64& rng) {
    ranges.validate();
    DeformParams p;
    p.scale = std::uniform_real_distribution<double>(ranges.scale_min, ranges.scale_max)(rng);
    p.rotation = std::uniform_real_distribution<double>(-ranges.rot_max, ranges.rot_max)(rng);
    p.tx = std::uniform_real_distribution<double>(-ranges.trans_max, ranges.trans_max)(rng);
    p.ty = std::uniform_real_distribution<double>(-ranges.trans_max, ranges.trans_max)(rng);
    return p;
}

Point2 apply_warp_point(const Point2& p, const DeformParams& params, int width, int height) {
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    const double c = std::cos(params.rotation), s = std::sin(params.rotation);
    const double dx = params.scale * (p.x - cx), dy = params.scale * (p.y - cy);
    return {cx + params.tx * width + c * dx + s * dy,
            cy + params.ty * height - s * dx + c * dy};
}

std::vector<Point2> apply_warp_points(const std::vector<Point2>& points,
                                      const DeformParams& params, int width, int height) {
    params.validate();
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const Point2& p : points) out.push_back(apply_warp_point(p, params, width, height));
    return out;
}

std::array<double, 6> inverse_warp_coeffs(const DeformParams& params, int width, int height) {
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    const double c = std::cos(params.rotation), s = std::sin(params.rotation);
    const double inv_s = 1.0 / params.scale;
    const double ox = cx + params.tx * width, oy = cy + params.ty * height;
    // p = center + R^T (q - offset) / scale, with R = [[c, s], [-s, c]].
    return {cx + inv_s * (-c * ox + s * oy), inv_s * c, -inv_s * s,
            cy + inv_s * (-s * ox - c * oy), inv_s * s, inv_s * c};
}

Tensor<double> apply_warp_image(const Tensor<double>& image, const DeformParams& params) {
    if (image.ndim() != 3 || image.dim(0) < 1 || image.dim(1) < 1 || image.dim(2) < 1)
        throw InputError("apply_warp_image: expected nonempty {C,H,W} image");
    params.validate();
    const auto inv = inverse_warp_coeffs(params, image.dim(2), image.dim(1));
    Tensor<double> out;
    kernels::warp_affine_bilinear(image, inv, out);
    return out;
}

}  // namespace uld
