#pragma once

#include <span>
#include <string>
#include <vector>

#include "pmdiff/geometry.hpp"

namespace pmdiff {

/// Fourier features gamma(x) = [a_j cos(2 pi F_j x), a_j sin(2 pi F_j x)]_j per axis.
struct EncodingConfig {
    std::vector<double> frequencies{1.0, 2.0, 4.0, 8.0};
    std::vector<double> coefficients{1.0, 1.0, 1.0, 1.0};

    void validate() const;
    std::size_t channels() const { return 6 * frequencies.size(); }
    double max_frequency() const;
    /// Largest per-axis coordinate difference over which the kernel still
    /// decreases monotonically: 1 / (2 F_max).
    double aliasing_radius() const { return 0.5 / max_frequency(); }
};

/// Planar (channel-major) encoded point map: data[c * H * W + j * W + i].
/// Channel order: axis-major (x, y, z); within an axis, per frequency, cos then sin.
struct EncodedMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<double> data;
    std::vector<std::uint8_t> valid;

    std::size_t size() const { return width * height; }
    std::vector<double> vector_at(std::size_t idx) const;
};

struct NormParams {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;  // normalized = (p - center) * scale

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
    Vec3 invert(const Vec3& q) const { return q / scale + center; }
};

struct NormalizedPair {
    PointMap reference;
    PointMap target;
    NormParams params;
};

class DegenerateError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Shared affine normalization of X^{r,t} and X^{t,t} into [-1,1]: the shift is
/// the joint valid-point centroid, the scale 1 / max per-axis deviation.
NormalizedPair normalize_pair(const PointMap& reference, const PointMap& target);

PointMap apply_normalization(const PointMap& map, const NormParams& params);

/// Encodes one coordinate triple.
std::vector<double> encode_point(const Vec3& p, const EncodingConfig& cfg);

/// Encodes every valid pixel; invalid pixels become all-zero vectors. Appends a
/// warning when a valid coordinate leaves [-1,1] by more than 1e-6.
EncodedMap fourier_encode(const PointMap& normalized, const EncodingConfig& cfg,
                          std::vector<std::string>* warnings = nullptr);

/// Inner product of two encoded vectors.
double kernel_eval(std::span<const double> a, std::span<const double> b);

/// Closed form sum_axes sum_j a_j^2 cos(2 pi F_j (p1 - p2)).
double kernel_closed_form(const Vec3& p1, const Vec3& p2, const EncodingConfig& cfg);

}  // namespace pmdiff
