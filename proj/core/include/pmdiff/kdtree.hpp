#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pmdiff/geometry.hpp"

namespace pmdiff {

/// Static 3-D KD-tree over indexed points with exact nearest-neighbor queries.
///
/// Results are identical to a linear scan that compares squared distances
/// computed as dx*dx + dy*dy + dz*dz and breaks ties by the smaller index.
/// Split planes sit on stored coordinates, so the plane distance is a
/// rounding-safe lower bound and ties on the far side are still visited.
class KdTree3 {
   public:
    static constexpr std::size_t kDefaultLeafSize = 16;

    struct Result {
        std::int64_t index = -1;
        double dist2 = 0.0;
    };

    KdTree3() = default;
    KdTree3(std::vector<Vec3> points, std::vector<std::int64_t> ids, std::size_t leaf_size = kDefaultLeafSize);

    bool empty() const { return points_.empty(); }
    std::size_t size() const { return points_.size(); }

    Result nearest(const Vec3& q) const;

   private:
    struct Node {
        std::uint32_t begin = 0;
        std::uint32_t end = 0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        int axis = 0;
        double split = 0.0;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end);
    void search(std::int32_t node, const Vec3& q, Result& best) const;

    std::vector<Vec3> points_;
    std::vector<std::int64_t> ids_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_ = kDefaultLeafSize;
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace pmdiff
