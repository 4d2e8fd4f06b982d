#include "splat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splat/errors.hpp"
#include "splat/util.hpp"

namespace splat {

namespace {

void check_same_size(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.height != b.height || a.width != b.width)
        throw shape_error("metric inputs differ in shape");
}

// ---- exact 3D kd-tree ------------------------------------------------------

struct KdTree {
    struct Node {
        int point = -1; // index into pts
        int axis = 0;
        int left = -1, right = -1;
    };
    std::vector<Eigen::Vector3d> pts;
    std::vector<Node> nodes;
    int root = -1;

    explicit KdTree(const std::vector<Eigen::Vector3d>& points) : pts(points) {
        std::vector<int> idx(pts.size());
        std::iota(idx.begin(), idx.end(), 0);
        nodes.reserve(pts.size());
        root = build(idx.begin(), idx.end(), 0);
    }

    int build(std::vector<int>::iterator first, std::vector<int>::iterator last,
              int depth) {
        if (first == last) return -1;
        const int axis = depth % 3;
        auto mid = first + (last - first) / 2;
        std::nth_element(first, mid, last, [&](int a, int b) {
            if (pts[a][axis] != pts[b][axis]) return pts[a][axis] < pts[b][axis];
            return a < b; // deterministic tie-break
        });
        const int id = static_cast<int>(nodes.size());
        nodes.push_back(Node{*mid, axis, -1, -1});
        const int l = build(first, mid, depth + 1);
        const int r = build(mid + 1, last, depth + 1);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }

    void nearest(int node, const Eigen::Vector3d& q, double& best) const {
        if (node < 0) return;
        const Node& n = nodes[node];
        best = std::min(best, (pts[n.point] - q).norm());
        const double delta = q[n.axis] - pts[n.point][n.axis];
        const int near = delta < 0 ? n.left : n.right;
        const int far = delta < 0 ? n.right : n.left;
        nearest(near, q, best);
        if (std::abs(delta) < best) nearest(far, q, best);
    }

    double nearest(const Eigen::Vector3d& q) const {
        double best = std::numeric_limits<double>::infinity();
        nearest(root, q, best);
        return best;
    }
};

} // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    check_same_size(a, b);
    if (a.pixels.empty()) throw invalid_parameter("psnr: empty image");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    check_same_size(a, b);
    constexpr int kWin = 11;
    if (a.height < kWin || a.width < kWin)
        throw invalid_parameter("ssim: image smaller than the 11x11 window");
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;

    // separable gaussian window, sigma 1.5, normalized to sum 1
    double win[kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        wsum += win[i];
    }
    for (double& w : win) w /= wsum;

    double total = 0.0;
    std::size_t count = 0;
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r + kWin <= a.height; ++r)
            for (int c = 0; c + kWin <= a.width; ++c) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double w = win[i] * win[j];
                        const double x = a.at(r + i, c + j, ch);
                        const double y = b.at(r + i, c + j, ch);
                        mx += w * x;
                        my += w * y;
                        xx += w * x * x;
                        yy += w * y * y;
                        xy += w * x * y;
                    }
                const double vx = xx - mx * mx;
                const double vy = yy - my * my;
                const double cxy = xy - mx * my;
                total += ((2 * mx * my + kC1) * (2 * cxy + kC2)) /
                         ((mx * mx + my * my + kC1) * (vx + vy + kC2));
                ++count;
            }
    return total / static_cast<double>(count);
}

PointCloud sample_points(const GaussianScene& scene, int n, std::uint64_t seed) {
    if (scene.empty()) throw invalid_parameter("sample_points: empty scene");
    if (n < 1) throw invalid_parameter("sample_points: n must be positive");
    std::vector<double> cum(scene.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian3D& g = scene.gaussians[i];
        const Eigen::Vector3d s = g.activated_scale();
        acc += g.activated_opacity() * s.x() * s.y() * s.z();
        cum[i] = acc;
    }
    RngStream rng(seed);
    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double u = rng.uniform() * acc;
        const auto it = std::upper_bound(cum.begin(), cum.end(), u);
        const std::size_t gi = std::min(
            static_cast<std::size_t>(it - cum.begin()), scene.size() - 1);
        const Gaussian3D& g = scene.gaussians[gi];
        const Eigen::Matrix3d rot = quat_to_rotmat(g.rotation);
        const Eigen::Vector3d s = g.activated_scale();
        const Eigen::Vector3d xi(rng.gaussian(), rng.gaussian(), rng.gaussian());
        cloud.points.push_back(g.mean + rot * s.cwiseProduct(xi));
    }
    return cloud;
}

std::vector<double> nn_distances(const PointCloud& queries,
                                 const PointCloud& targets) {
    if (queries.size() == 0 || targets.size() == 0)
        throw invalid_parameter("nn_distances: empty point cloud");
    KdTree tree(targets.points);
    std::vector<double> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i)
        out[i] = tree.nearest(queries.points[i]);
    return out;
}

std::vector<double> nn_distances_bruteforce(const PointCloud& queries,
                                            const PointCloud& targets) {
    if (queries.size() == 0 || targets.size() == 0)
        throw invalid_parameter("nn_distances: empty point cloud");
    std::vector<double> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& t : targets.points)
            best = std::min(best, (queries.points[i] - t).norm());
        out[i] = best;
    }
    return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
    const auto da = nn_distances(a, b);
    const auto db = nn_distances(b, a);
    const double ma =
        std::accumulate(da.begin(), da.end(), 0.0) / static_cast<double>(da.size());
    const double mb =
        std::accumulate(db.begin(), db.end(), 0.0) / static_cast<double>(db.size());
    return 0.5 * (ma + mb);
}

double fscore(const PointCloud& a, const PointCloud& b, double tau) {
    if (tau <= 0.0) throw invalid_parameter("fscore: tau must be positive");
    const auto da = nn_distances(a, b);
    const auto db = nn_distances(b, a);
    const auto frac_within = [tau](const std::vector<double>& d) {
        std::size_t k = 0;
        for (double v : d) k += v <= tau ? 1 : 0;
        return static_cast<double>(k) / static_cast<double>(d.size());
    };
    const double precision = frac_within(da);
    const double recall = frac_within(db);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double iou_voxel(const PointCloud& a, const PointCloud& b, int resolution,
                 const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    if (resolution < 2) throw invalid_parameter("iou_voxel: resolution must be >= 2");
    if (a.size() == 0 || b.size() == 0)
        throw invalid_parameter("iou_voxel: empty point cloud");
    for (int k = 0; k < 3; ++k)
        if (!(hi[k] > lo[k])) throw invalid_parameter("iou_voxel: degenerate bounds");

    const auto voxelize = [&](const PointCloud& cloud) {
        std::vector<std::uint8_t> occ(
            static_cast<std::size_t>(resolution) * resolution * resolution, 0);
        for (const auto& p : cloud.points) {
            int idx[3];
            for (int k = 0; k < 3; ++k) {
                const double t = (p[k] - lo[k]) / (hi[k] - lo[k]);
                idx[k] = std::clamp(static_cast<int>(std::floor(t * resolution)), 0,
                                    resolution - 1);
            }
            occ[(static_cast<std::size_t>(idx[0]) * resolution + idx[1]) * resolution +
                idx[2]] = 1;
        }
        return occ;
    };
    const auto oa = voxelize(a), ob = voxelize(b);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < oa.size(); ++i) {
        inter += (oa[i] & ob[i]) ? 1 : 0;
        uni += (oa[i] | ob[i]) ? 1 : 0;
    }
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace splat
