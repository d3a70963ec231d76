#include "pmdiff/encode.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pmdiff {

void EncodingConfig::validate() const {
    if (frequencies.empty() || frequencies.size() != coefficients.size())
        throw std::invalid_argument("EncodingConfig: frequencies and coefficients must be non-empty and equal length");
    for (std::size_t j = 0; j < frequencies.size(); ++j) {
        if (!(frequencies[j] > 0.0) || !(coefficients[j] > 0.0))
            throw std::invalid_argument("EncodingConfig: frequencies and coefficients must be positive");
    }
}

double EncodingConfig::max_frequency() const { return *std::max_element(frequencies.begin(), frequencies.end()); }

std::vector<double> EncodedMap::vector_at(std::size_t idx) const {
    std::vector<double> v(channels);
    for (std::size_t c = 0; c < channels; ++c) v[c] = data[c * size() + idx];
    return v;
}

NormalizedPair normalize_pair(const PointMap& reference, const PointMap& target) {
    if (reference.frame != target.frame)
        throw GeometryError("normalize_pair: maps are in frames " + std::to_string(reference.frame) + " and " +
                            std::to_string(target.frame));
    Vec3 sum = Vec3::Zero();
    std::size_t n = 0;
    for (const PointMap* m : {&reference, &target}) {
        for (std::size_t i = 0; i < m->size(); ++i) {
            if (m->is_valid(i)) {
                sum += m->point(i);
                ++n;
            }
        }
    }
    if (n == 0) throw DegenerateError("normalize_pair: no valid points");
    NormParams params;
    params.center = sum / static_cast<double>(n);
    double dev = 0.0;
    for (const PointMap* m : {&reference, &target}) {
        for (std::size_t i = 0; i < m->size(); ++i) {
            if (m->is_valid(i)) dev = std::max(dev, (m->point(i) - params.center).cwiseAbs().maxCoeff());
        }
    }
    if (!(dev > 0.0)) throw DegenerateError("normalize_pair: all valid points coincide");
    params.scale = 1.0 / dev;
    return {apply_normalization(reference, params), apply_normalization(target, params), params};
}

PointMap apply_normalization(const PointMap& map, const NormParams& params) {
    PointMap out = map;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!map.is_valid(i)) continue;
        // Clamp rounding overshoot so extreme points stay inside [-1,1].
        out.set(i, params.apply(map.point(i)).cwiseMax(-1.0).cwiseMin(1.0));
    }
    return out;
}

std::vector<double> encode_point(const Vec3& p, const EncodingConfig& cfg) {
    const std::size_t nf = cfg.frequencies.size();
    std::vector<double> v(6 * nf);
    for (int axis = 0; axis < 3; ++axis) {
        for (std::size_t j = 0; j < nf; ++j) {
            const double phase = 2.0 * std::numbers::pi * cfg.frequencies[j] * p[axis];
            v[static_cast<std::size_t>(axis) * 2 * nf + 2 * j] = cfg.coefficients[j] * std::cos(phase);
            v[static_cast<std::size_t>(axis) * 2 * nf + 2 * j + 1] = cfg.coefficients[j] * std::sin(phase);
        }
    }
    return v;
}

EncodedMap fourier_encode(const PointMap& normalized, const EncodingConfig& cfg, std::vector<std::string>* warnings) {
    cfg.validate();
    EncodedMap out;
    out.width = normalized.width;
    out.height = normalized.height;
    out.channels = cfg.channels();
    out.data.assign(out.channels * out.size(), 0.0);
    out.valid = normalized.valid;
    bool out_of_range = false;
    for (std::size_t idx = 0; idx < out.size(); ++idx) {
        if (!normalized.is_valid(idx)) continue;
        const Vec3 p = normalized.point(idx);
        if (p.cwiseAbs().maxCoeff() > 1.0 + 1e-6) out_of_range = true;
        const auto v = encode_point(p, cfg);
        for (std::size_t c = 0; c < out.channels; ++c) out.data[c * out.size() + idx] = v[c];
    }
    if (out_of_range && warnings) warnings->push_back("fourier_encode: valid coordinates outside [-1,1]");
    return out;
}

double kernel_eval(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("kernel_eval: dimension mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double kernel_closed_form(const Vec3& p1, const Vec3& p2, const EncodingConfig& cfg) {
    double acc = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
        const double delta = p1[axis] - p2[axis];
        for (std::size_t j = 0; j < cfg.frequencies.size(); ++j)
            acc += cfg.coefficients[j] * cfg.coefficients[j] *
                   std::cos(2.0 * std::numbers::pi * cfg.frequencies[j] * delta);
    }
    return acc;
}

}  // namespace pmdiff
