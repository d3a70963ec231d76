#include "pmdiff/correspond.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pmdiff/kdtree.hpp"

namespace pmdiff {

void build_pair_geometry(ScenePair& pair, GeometrySource source) {
    pair.reference_to_target = relative_pose(pair.reference_view.pose, pair.target_view.pose);
    PointMap ref, tgt;
    if (source == GeometrySource::Lidar) {
        if (!pair.reference_lidar || !pair.target_lidar)
            throw std::invalid_argument("build_pair_geometry: LiDAR source requested but scans are missing");
        ref = lidar_to_sparse_pointmap(*pair.reference_lidar, pair.reference_view, kReferenceFrame);
        tgt = lidar_to_sparse_pointmap(*pair.target_lidar, pair.target_view, kTargetFrame);
    } else {
        ref = pointmap_from_depth(pair.reference_view.intrinsics, pair.reference_depth, kReferenceFrame);
        tgt = pointmap_from_depth(pair.target_view.intrinsics, pair.target_depth, kTargetFrame);
    }
    pair.reference_in_target = transform_pointmap(ref, pair.reference_to_target, kReferenceFrame, kTargetFrame);
    pair.target_in_target = std::move(tgt);
    pair.geometry = source;
}

std::string MatchSet::to_csv() const {
    std::ostringstream os;
    os << "r_index,t_index,distance_m\n";
    os << std::setprecision(17);
    for (const auto& m : matches) os << m.reference_index << ',' << m.target_index << ',' << m.distance << '\n';
    return os.str();
}

void MatchSet::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_csv();
}

namespace {

std::vector<std::int64_t> brute_force_nn(const PointMap& query, const PointMap& base) {
    std::vector<std::int64_t> out(query.size(), -1);
    for (std::size_t a = 0; a < query.size(); ++a) {
        if (!query.is_valid(a)) continue;
        const Vec3 q = query.point(a);
        double best = 0.0;
        std::int64_t best_idx = -1;
        for (std::size_t b = 0; b < base.size(); ++b) {
            if (!base.is_valid(b)) continue;
            const double d2 = squared_distance(base.point(b), q);
            if (best_idx < 0 || d2 < best) {  // strict: first (smallest) index wins ties
                best = d2;
                best_idx = static_cast<std::int64_t>(b);
            }
        }
        out[a] = best_idx;
    }
    return out;
}

KdTree3 build_tree(const PointMap& base) {
    std::vector<Vec3> pts;
    std::vector<std::int64_t> ids;
    for (std::size_t b = 0; b < base.size(); ++b) {
        if (!base.is_valid(b)) continue;
        pts.push_back(base.point(b));
        ids.push_back(static_cast<std::int64_t>(b));
    }
    return KdTree3(std::move(pts), std::move(ids));
}

}  // namespace

std::vector<std::int64_t> nn_search(const PointMap& query, const PointMap& base, NnMethod method) {
    if (query.frame != base.frame)
        throw GeometryError("nn_search: query frame " + std::to_string(query.frame) + " vs base frame " +
                            std::to_string(base.frame));
    if (base.valid_count() == 0) throw EmptyBaseError("nn_search: base point map has no valid pixels");
    if (method == NnMethod::BruteForce) return brute_force_nn(query, base);
    const KdTree3 tree = build_tree(base);
    std::vector<std::int64_t> out(query.size(), -1);
    for (std::size_t a = 0; a < query.size(); ++a) {
        if (query.is_valid(a)) out[a] = tree.nearest(query.point(a)).index;
    }
    return out;
}

MatchSet mutual_matches(const PointMap& reference, const PointMap& target, NnMethod method) {
    const auto r_to_t = nn_search(reference, target, method);
    const auto t_to_r = nn_search(target, reference, method);
    MatchSet set;
    for (std::size_t a = 0; a < reference.size(); ++a) {
        const std::int64_t b = r_to_t[a];
        if (b < 0) continue;
        if (t_to_r[static_cast<std::size_t>(b)] != static_cast<std::int64_t>(a)) continue;
        const auto bi = static_cast<std::size_t>(b);
        set.matches.push_back({a, bi, std::sqrt(squared_distance(reference.point(a), target.point(bi)))});
    }
    return set;
}

std::vector<std::int64_t> kernel_nn(const EncodedMap& query, const EncodedMap& base) {
    if (query.channels != base.channels)
        throw std::invalid_argument("kernel_nn: channel mismatch " + std::to_string(query.channels) + " vs " +
                                    std::to_string(base.channels));
    std::vector<std::size_t> candidates;
    for (std::size_t b = 0; b < base.size(); ++b) {
        if (base.valid[b]) candidates.push_back(b);
    }
    if (candidates.empty()) throw EmptyBaseError("kernel_nn: base map has no valid pixels");
    // Pixel-major copy of the base so each candidate vector is contiguous.
    const std::size_t c = base.channels;
    std::vector<double> packed(candidates.size() * c);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) packed[k * c + ch] = base.data[ch * base.size() + candidates[k]];
    }
    std::vector<std::int64_t> out(query.size(), -1);
    for (std::size_t a = 0; a < query.size(); ++a) {
        if (!query.valid[a]) continue;
        const auto q = query.vector_at(a);
        double best = 0.0;
        std::int64_t best_idx = -1;
        for (std::size_t k = 0; k < candidates.size(); ++k) {
            const double s = kernel_eval(q, std::span<const double>(packed.data() + k * c, c));
            if (best_idx < 0 || s > best) {
                best = s;
                best_idx = static_cast<std::int64_t>(candidates[k]);
            }
        }
        out[a] = best_idx;
    }
    return out;
}

double overlap_ratio(const PointMap& reference, const PointMap& target, const Intrinsics& target_k, double tol) {
    if (reference.frame != target.frame)
        throw GeometryError("overlap_ratio: maps are in different frames");
    if (!(tol > 0.0)) throw std::invalid_argument("overlap_ratio: tolerance must be positive");
    if (target.width != target_k.width || target.height != target_k.height)
        throw SizeMismatchError("overlap_ratio: target map does not match target intrinsics");
    std::size_t valid = 0, covisible = 0;
    const double tol2 = tol * tol;
    for (std::size_t a = 0; a < reference.size(); ++a) {
        if (!reference.is_valid(a)) continue;
        ++valid;
        const Vec3 p = reference.point(a);
        const Projection proj = project_camera_point(p, target_k);
        if (!proj.in_bounds) continue;
        const std::size_t b = proj.py * target.width + proj.px;
        if (target.is_valid(b) && squared_distance(p, target.point(b)) <= tol2) ++covisible;
    }
    return valid == 0 ? 0.0 : static_cast<double>(covisible) / static_cast<double>(valid);
}

double overlap_ratio(const ScenePair& pair, double tol) {
    return overlap_ratio(pair.reference_in_target, pair.target_in_target, pair.target_view.intrinsics, tol);
}

std::vector<ScenePair> select_pairs(const std::vector<ScenePair>& pairs, double threshold, double tol) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("select_pairs: threshold not in [0,1]");
    std::vector<ScenePair> kept;
    for (const auto& p : pairs) {
        if (overlap_ratio(p, tol) > threshold) kept.push_back(p);
    }
    return kept;
}

}  // namespace pmdiff
