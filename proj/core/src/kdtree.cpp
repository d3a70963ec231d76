#include "pmdiff/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pmdiff {

KdTree3::KdTree3(std::vector<Vec3> points, std::vector<std::int64_t> ids, std::size_t leaf_size)
    : points_(std::move(points)), ids_(std::move(ids)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    if (points_.size() != ids_.size()) throw std::invalid_argument("KdTree3: points/ids length mismatch");
    if (!points_.empty()) build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KdTree3::build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({begin, end, -1, -1, 0, 0.0});
    if (end - begin <= leaf_size_) return id;

    Vec3 lo = points_[begin], hi = points_[begin];
    for (std::uint32_t i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[i]);
        hi = hi.cwiseMax(points_[i]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all points coincide: stay a leaf

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::vector<std::uint32_t> order(end - begin);
    std::iota(order.begin(), order.end(), begin);
    std::nth_element(order.begin(), order.begin() + (mid - begin), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    std::vector<Vec3> p(end - begin);
    std::vector<std::int64_t> d(end - begin);
    for (std::size_t k = 0; k < order.size(); ++k) {
        p[k] = points_[order[k]];
        d[k] = ids_[order[k]];
    }
    std::copy(p.begin(), p.end(), points_.begin() + begin);
    std::copy(d.begin(), d.end(), ids_.begin() + begin);

    // left: [begin, mid) with coord <= split ; right: [mid, end) with coord >= split
    const double split = points_[mid][axis];
    nodes_[static_cast<std::size_t>(id)].axis = axis;
    nodes_[static_cast<std::size_t>(id)].split = split;
    const std::int32_t l = build(begin, mid);
    const std::int32_t r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
}

void KdTree3::search(std::int32_t node_id, const Vec3& q, Result& best) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.left < 0) {
        for (std::uint32_t i = node.begin; i < node.end; ++i) {
            const double d2 = squared_distance(points_[i], q);
            if (best.index < 0 || d2 < best.dist2 || (d2 == best.dist2 && ids_[i] < best.index)) {
                best.index = ids_[i];
                best.dist2 = d2;
            }
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    const std::int32_t near = diff <= 0.0 ? node.left : node.right;
    const std::int32_t far = diff <= 0.0 ? node.right : node.left;
    search(near, q, best);
    // The left subtree may also hold points equal to the split, so a query at
    // diff == 0 must always visit both sides.
    if (best.index < 0 || diff * diff <= best.dist2) search(far, q, best);
}

KdTree3::Result KdTree3::nearest(const Vec3& q) const {
    Result best;
    if (!points_.empty()) search(0, q, best);
    return best;
}

}  // namespace pmdiff
