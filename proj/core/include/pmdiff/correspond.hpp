#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmdiff/encode.hpp"
#include "pmdiff/geometry.hpp"
#include "pmdiff/pair.hpp"

namespace pmdiff {

class EmptyBaseError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct Match {
    std::size_t reference_index = 0;  // linear pixel index in view r
    std::size_t target_index = 0;     // linear pixel index in view t
    double distance = 0.0;            // metres, in the shared frame
};

struct MatchSet {
    std::vector<Match> matches;

    std::size_t size() const { return matches.size(); }
    /// CSV with header r_index,t_index,distance_m
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

enum class NnMethod { KdTree, BruteForce };

/// For every valid query pixel, the linear index of the Euclidean-nearest valid
/// base pixel (ties -> smallest index); -1 for invalid query pixels.
std::vector<std::int64_t> nn_search(const PointMap& query, const PointMap& base, NnMethod method = NnMethod::KdTree);

/// Mutual nearest neighbours between X^{r,t} and X^{t,t}.
MatchSet mutual_matches(const PointMap& reference, const PointMap& target, NnMethod method = NnMethod::KdTree);

/// Argmax of the encoded inner product over valid base pixels (ties -> smallest
/// index); -1 for invalid query pixels.
std::vector<std::int64_t> kernel_nn(const EncodedMap& query, const EncodedMap& base);

inline constexpr double kDefaultOverlapTolerance = 0.05;
inline constexpr double kDefaultOverlapThreshold = 0.2;

/// Fraction of valid X^{r,t} pixels that project in-bounds into the target
/// camera and lie within `tol` of the valid X^{t,t} value at that pixel.
double overlap_ratio(const PointMap& reference, const PointMap& target, const Intrinsics& target_k,
                     double tol = kDefaultOverlapTolerance);

double overlap_ratio(const ScenePair& pair, double tol = kDefaultOverlapTolerance);

/// Keeps pairs whose overlap ratio is strictly greater than `threshold`.
std::vector<ScenePair> select_pairs(const std::vector<ScenePair>& pairs, double threshold = kDefaultOverlapThreshold,
                                    double tol = kDefaultOverlapTolerance);

}  // namespace pmdiff
