#include "splat/rasterizer.hpp"

#include <algorithm>
#include <cmath>

#include "splat/errors.hpp"
#include "splat/util.hpp"

namespace splat {

namespace {

std::uint64_t fingerprint(const GaussianScene& scene, const Camera& cam,
                          const Eigen::Vector3d& bg, const RasterConfig& cfg) {
    const std::size_t count = scene.gaussians.size();
    std::uint64_t h = fnv1a(&count, sizeof(count));
    h = fnv1a(cam.rotation.data(), 9 * sizeof(double), h);
    h = fnv1a(cam.translation.data(), 3 * sizeof(double), h);
    h = fnv1a(&cam.focal, sizeof(double), h);
    h = fnv1a(&cam.width, sizeof(int), h);
    h = fnv1a(&cam.height, sizeof(int), h);
    h = fnv1a(bg.data(), 3 * sizeof(double), h);
    const double cfg_fields[5] = {cfg.near_plane, cfg.alpha_clamp,
                                  cfg.transmittance_cutoff, cfg.alpha_min,
                                  cfg.dilation};
    h = fnv1a(cfg_fields, sizeof(cfg_fields), h);
    return h;
}

void check_finite(const GaussianScene& scene) {
    for (const auto& g : scene.gaussians) {
        const bool ok = g.mean.allFinite() && g.log_scale.allFinite() &&
                        g.rotation.allFinite() && std::isfinite(g.opacity_logit) &&
                        g.color.allFinite();
        if (!ok) throw numerical_error("render: non-finite Gaussian parameters");
    }
}

} // namespace

struct RasterRecord {
    std::uint64_t fp = 0;
    Eigen::Vector3d background;
    std::vector<Splat2D> splats; // sorted by (camera_depth, source_index)
    // per-pixel compositing state needed by the backward pass
    std::vector<double> t_final;
    std::vector<Eigen::Vector3d> c_splat; // splat-only color sum
    std::vector<double> d_splat;          // splat-only depth sum
    // tile binning (empty lists mean "all splats", used by the reference path)
    bool tiled = false;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tile_lists;
};

void SceneGrads::resize(std::size_t n) {
    d_mean.assign(n, Eigen::Vector3d::Zero());
    d_log_scale.assign(n, Eigen::Vector3d::Zero());
    d_rotation.assign(n, Eigen::Vector4d::Zero());
    d_opacity_logit.assign(n, 0.0);
    d_color.assign(n, Eigen::Vector3d::Zero());
}

void SceneGrads::accumulate(const SceneGrads& o, double w) {
    for (std::size_t i = 0; i < d_mean.size(); ++i) {
        d_mean[i] += w * o.d_mean[i];
        d_log_scale[i] += w * o.d_log_scale[i];
        d_rotation[i] += w * o.d_rotation[i];
        d_opacity_logit[i] += w * o.d_opacity_logit[i];
        d_color[i] += w * o.d_color[i];
    }
}

std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const Camera& cam,
                                        const RasterConfig& cfg) {
    const Eigen::Vector3d p_cam = cam.rotation * g.mean + cam.translation;
    if (p_cam.z() <= cfg.near_plane) return std::nullopt;

    const double z = p_cam.z();
    const double f = cam.focal;
    const double cx = cam.width * 0.5, cy = cam.height * 0.5;

    Eigen::Matrix<double, 2, 3> jac;
    jac << f / z, 0.0, -f * p_cam.x() / (z * z),
           0.0, f / z, -f * p_cam.y() / (z * z);

    const Eigen::Matrix3d sigma_cam =
        cam.rotation * covariance_from(g) * cam.rotation.transpose();

    Splat2D s;
    s.mean2d = Eigen::Vector2d(f * p_cam.x() / z + cx, f * p_cam.y() / z + cy);
    s.cov2d = jac * sigma_cam * jac.transpose();
    s.cov2d(0, 0) += cfg.dilation;
    s.cov2d(1, 1) += cfg.dilation;
    s.camera_depth = z;
    s.color = g.color;
    s.opacity = g.activated_opacity();

    const double det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(1, 0);
    s.cov_inv << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det,
                 -s.cov2d(1, 0) / det, s.cov2d(0, 0) / det;

    // alpha = opacity * exp(-q/2) >= alpha_min  <=>  q <= 2 ln(opacity/alpha_min)
    s.q_cut = 2.0 * std::log(s.opacity / cfg.alpha_min);
    const double tr = s.cov2d(0, 0) + s.cov2d(1, 1);
    const double lam_max =
        0.5 * (tr + std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
    s.radius_px = s.q_cut > 0.0 ? std::sqrt(s.q_cut * lam_max) : 0.0;
    return s;
}

namespace {

std::vector<Splat2D> project_and_sort(const GaussianScene& scene, const Camera& cam,
                                      const RasterConfig& cfg) {
    std::vector<Splat2D> splats;
    splats.reserve(scene.gaussians.size());
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        auto s = project_gaussian(scene.gaussians[i], cam, cfg);
        if (!s) continue;
        s->source_index = static_cast<int>(i);
        if (s->q_cut <= 0.0) continue; // opacity below alpha_min, never visible
        splats.push_back(*s);
    }
    std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.camera_depth != b.camera_depth) return a.camera_depth < b.camera_depth;
        return a.source_index < b.source_index;
    });
    return splats;
}

/// Composite one pixel. `ids` indexes into `splats`; when null, all splats
/// are used. Both render paths funnel through this so they are bit-identical.
inline void composite_pixel(const std::vector<Splat2D>& splats,
                            const std::vector<int>* ids, double px, double py,
                            const RasterConfig& cfg, double& t_out,
                            Eigen::Vector3d& c_out, double& d_out) {
    double t = 1.0;
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    double dsum = 0.0;
    const std::size_t n = ids ? ids->size() : splats.size();
    for (std::size_t k = 0; k < n; ++k) {
        const Splat2D& s = splats[ids ? static_cast<std::size_t>((*ids)[k]) : k];
        const double dx = px - s.mean2d.x();
        const double dy = py - s.mean2d.y();
        const double q = s.cov_inv(0, 0) * dx * dx +
                         (s.cov_inv(0, 1) + s.cov_inv(1, 0)) * dx * dy +
                         s.cov_inv(1, 1) * dy * dy;
        if (!(q <= s.q_cut)) continue;
        const double alpha = std::min(s.opacity * std::exp(-0.5 * q), cfg.alpha_clamp);
        c += s.color * (alpha * t);
        dsum += s.camera_depth * (alpha * t);
        t *= 1.0 - alpha;
        if (t < cfg.transmittance_cutoff) break;
    }
    t_out = t;
    c_out = c;
    d_out = dsum;
}

RenderOutput finish_render(const GaussianScene& scene, const Camera& cam,
                           const Eigen::Vector3d& bg, const RasterConfig& cfg,
                           std::shared_ptr<RasterRecord> rec) {
    const int w = cam.width, h = cam.height;
    RenderOutput out;
    out.image = ImageBuffer(h, w);
    out.depth = DepthBuffer(h, w);
    rec->fp = fingerprint(scene, cam, bg, cfg);
    rec->background = bg;
    rec->t_final.resize(static_cast<std::size_t>(w) * h);
    rec->c_splat.resize(static_cast<std::size_t>(w) * h);
    rec->d_splat.resize(static_cast<std::size_t>(w) * h);

    for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
            const std::size_t pi = static_cast<std::size_t>(iy) * w + ix;
            const std::vector<int>* ids = nullptr;
            if (rec->tiled) {
                const int tx = ix / cfg.tile_size, ty = iy / cfg.tile_size;
                ids = &rec->tile_lists[static_cast<std::size_t>(ty) * rec->tiles_x + tx];
            }
            double t;
            Eigen::Vector3d c;
            double d;
            composite_pixel(rec->splats, ids, ix + 0.5, iy + 0.5, cfg, t, c, d);
            rec->t_final[pi] = t;
            rec->c_splat[pi] = c;
            rec->d_splat[pi] = d;
            for (int ch = 0; ch < 3; ++ch)
                out.image.at(iy, ix, ch) = std::clamp(c[ch] + t * bg[ch], 0.0, 1.0);
            out.depth.depth_at(iy, ix) = d;
            out.depth.alpha_at(iy, ix) = 1.0 - t;
        }
    }
    out.record = std::move(rec);
    return out;
}

} // namespace

RenderOutput render(const GaussianScene& scene, const Camera& cam,
                    const Eigen::Vector3d& bg, const RasterConfig& cfg) {
    check_finite(scene);
    auto rec = std::make_shared<RasterRecord>();
    rec->splats = project_and_sort(scene, cam, cfg);
    rec->tiled = true;
    rec->tiles_x = (cam.width + cfg.tile_size - 1) / cfg.tile_size;
    rec->tiles_y = (cam.height + cfg.tile_size - 1) / cfg.tile_size;
    rec->tile_lists.assign(static_cast<std::size_t>(rec->tiles_x) * rec->tiles_y, {});

    // Conservative binning: every pixel whose center can see alpha >= alpha_min
    // lies within radius_px of the splat mean.
    for (std::size_t si = 0; si < rec->splats.size(); ++si) {
        const Splat2D& s = rec->splats[si];
        const double r = s.radius_px + 1e-9;
        const int x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - r - 0.5)));
        const int x1 = std::min(cam.width - 1,
                                static_cast<int>(std::floor(s.mean2d.x() + r - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - r - 0.5)));
        const int y1 = std::min(cam.height - 1,
                                static_cast<int>(std::floor(s.mean2d.y() + r - 0.5)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / cfg.tile_size; ty <= y1 / cfg.tile_size; ++ty)
            for (int tx = x0 / cfg.tile_size; tx <= x1 / cfg.tile_size; ++tx)
                rec->tile_lists[static_cast<std::size_t>(ty) * rec->tiles_x + tx]
                    .push_back(static_cast<int>(si));
    }
    return finish_render(scene, cam, bg, cfg, std::move(rec));
}

RenderOutput render_reference(const GaussianScene& scene, const Camera& cam,
                              const Eigen::Vector3d& bg, const RasterConfig& cfg) {
    check_finite(scene);
    auto rec = std::make_shared<RasterRecord>();
    rec->splats = project_and_sort(scene, cam, cfg);
    rec->tiled = false;
    return finish_render(scene, cam, bg, cfg, std::move(rec));
}

namespace {

/// d R(q_n) / d q_n for a unit quaternion (w, x, y, z); returns the 3x3
/// partial for component k contracted with dR.
double contract_rot_grad(const Eigen::Matrix3d& dr, const Eigen::Vector4d& qn, int k) {
    const double w = qn[0], x = qn[1], y = qn[2], z = qn[3];
    Eigen::Matrix3d p;
    switch (k) {
        case 0: p << 0, -z, y, z, 0, -x, -y, x, 0; break;
        case 1: p << 0, y, z, y, -2 * x, -w, z, w, -2 * x; break;
        case 2: p << -2 * y, x, w, x, 0, z, -w, z, -2 * y; break;
        default: p << -2 * z, -w, x, w, -2 * z, y, x, y, 0; break;
    }
    return 2.0 * dr.cwiseProduct(p).sum();
}

} // namespace

SceneGrads render_backward(const GaussianScene& scene, const Camera& cam,
                           const RenderOutput& fwd, const ImageBuffer& d_image,
                           const std::vector<double>& d_depth,
                           const RasterConfig& cfg) {
    const auto& rec = fwd.record;
    if (!rec) throw contract_violation("render_backward: missing forward record");
    if (rec->fp != fingerprint(scene, cam, rec->background, cfg))
        throw contract_violation("render_backward: forward record does not match inputs");
    if (d_image.height != cam.height || d_image.width != cam.width ||
        d_depth.size() != static_cast<std::size_t>(cam.width) * cam.height)
        throw shape_error("render_backward: upstream gradient shape mismatch");

    const int w = cam.width, h = cam.height;
    const auto& splats = rec->splats;

    // screen-space accumulators per projected splat
    struct Acc {
        Eigen::Vector2d g_mean2d = Eigen::Vector2d::Zero();
        Eigen::Matrix2d g_cov2d = Eigen::Matrix2d::Zero();
        double g_z = 0.0;
        double g_opacity = 0.0;
        Eigen::Vector3d g_color = Eigen::Vector3d::Zero();
    };
    std::vector<Acc> acc(splats.size());

    for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
            const std::size_t pi = static_cast<std::size_t>(iy) * w + ix;
            Eigen::Vector3d gi(d_image.at(iy, ix, 0), d_image.at(iy, ix, 1),
                               d_image.at(iy, ix, 2));
            const double gd = d_depth[pi];
            if (gi.isZero(0.0) && gd == 0.0) continue;

            const std::vector<int>* ids = nullptr;
            if (rec->tiled) {
                const int tx = ix / cfg.tile_size, ty = iy / cfg.tile_size;
                ids = &rec->tile_lists[static_cast<std::size_t>(ty) * rec->tiles_x + tx];
            }
            const double px = ix + 0.5, py = iy + 0.5;
            const double t_end = rec->t_final[pi];
            const Eigen::Vector3d c_total = rec->c_splat[pi];
            const double d_total = rec->d_splat[pi];

            double t = 1.0;
            Eigen::Vector3d c_prefix = Eigen::Vector3d::Zero();
            double d_prefix = 0.0;
            const std::size_t n = ids ? ids->size() : splats.size();
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t si = ids ? static_cast<std::size_t>((*ids)[k]) : k;
                const Splat2D& s = splats[si];
                const double dx = px - s.mean2d.x();
                const double dy = py - s.mean2d.y();
                const double q = s.cov_inv(0, 0) * dx * dx +
                                 (s.cov_inv(0, 1) + s.cov_inv(1, 0)) * dx * dy +
                                 s.cov_inv(1, 1) * dy * dy;
                if (!(q <= s.q_cut)) continue;
                const double alpha_raw = s.opacity * std::exp(-0.5 * q);
                const bool clamped = alpha_raw > cfg.alpha_clamp;
                const double alpha = clamped ? cfg.alpha_clamp : alpha_raw;
                const double weight = alpha * t;

                Acc& a = acc[si];
                a.g_color += gi * weight;
                a.g_z += gd * weight;

                const Eigen::Vector3d suffix_c = c_total - c_prefix - s.color * weight;
                const double suffix_d = d_total - d_prefix - s.camera_depth * weight;
                const Eigen::Vector3d dc_dalpha =
                    s.color * t - (suffix_c + rec->background * t_end) / (1.0 - alpha);
                const double dd_dalpha =
                    s.camera_depth * t - suffix_d / (1.0 - alpha);
                const double g_alpha = gi.dot(dc_dalpha) + gd * dd_dalpha;

                c_prefix += s.color * weight;
                d_prefix += s.camera_depth * weight;
                t *= 1.0 - alpha;

                if (!clamped) {
                    a.g_opacity += g_alpha * std::exp(-0.5 * q);
                    const double g_q = g_alpha * (-0.5 * alpha);
                    const Eigen::Vector2d ld = s.cov_inv * Eigen::Vector2d(dx, dy);
                    a.g_mean2d += g_q * (-2.0 * ld);
                    a.g_cov2d += g_q * (-(ld * ld.transpose()));
                }
                if (t < cfg.transmittance_cutoff) break;
            }
        }
    }

    // chain screen-space gradients back to raw 3D parameters
    SceneGrads grads;
    grads.resize(scene.gaussians.size());
    const double f = cam.focal;
    for (std::size_t si = 0; si < splats.size(); ++si) {
        const Splat2D& s = splats[si];
        const Acc& a = acc[si];
        const int gi_idx = s.source_index;
        const Gaussian3D& g = scene.gaussians[static_cast<std::size_t>(gi_idx)];

        // opacity and color
        grads.d_opacity_logit[gi_idx] += a.g_opacity * s.opacity * (1.0 - s.opacity);
        grads.d_color[gi_idx] += a.g_color;

        // recompute projection intermediates
        const Eigen::Vector3d p_cam = cam.rotation * g.mean + cam.translation;
        const double z = p_cam.z(), xc = p_cam.x(), yc = p_cam.y();
        Eigen::Matrix<double, 2, 3> jac;
        jac << f / z, 0.0, -f * xc / (z * z),
               0.0, f / z, -f * yc / (z * z);
        const Eigen::Matrix3d sigma_world = covariance_from(g);
        const Eigen::Matrix3d sigma_cam =
            cam.rotation * sigma_world * cam.rotation.transpose();

        // cov2d = J * sigma_cam * J^T + dil*I
        const Eigen::Matrix3d d_sigma_cam = jac.transpose() * a.g_cov2d * jac;
        const Eigen::Matrix<double, 2, 3> d_jac = 2.0 * a.g_cov2d * jac * sigma_cam;

        // mean_cam gradient: projection + jacobian + depth channels
        Eigen::Vector3d g_pcam = Eigen::Vector3d::Zero();
        g_pcam.x() += a.g_mean2d.x() * f / z;
        g_pcam.y() += a.g_mean2d.y() * f / z;
        g_pcam.z() += -f * (xc * a.g_mean2d.x() + yc * a.g_mean2d.y()) / (z * z);
        g_pcam.x() += d_jac(0, 2) * (-f / (z * z));
        g_pcam.y() += d_jac(1, 2) * (-f / (z * z));
        g_pcam.z() += (d_jac(0, 0) + d_jac(1, 1)) * (-f / (z * z)) +
                      d_jac(0, 2) * (2.0 * f * xc / (z * z * z)) +
                      d_jac(1, 2) * (2.0 * f * yc / (z * z * z));
        g_pcam.z() += a.g_z;
        grads.d_mean[gi_idx] += cam.rotation.transpose() * g_pcam;

        // world covariance gradient -> scale / quaternion
        const Eigen::Matrix3d d_sigma =
            cam.rotation.transpose() * d_sigma_cam * cam.rotation;
        const Eigen::Matrix3d rot = quat_to_rotmat(g.rotation);
        const Eigen::Vector3d scale = g.activated_scale();
        const Eigen::Matrix3d m = rot * scale.asDiagonal();
        const Eigen::Matrix3d d_m = 2.0 * d_sigma * m; // sigma = M M^T, d_sigma symmetric
        const Eigen::Matrix3d d_rot_m = d_m * scale.asDiagonal();
        const Eigen::Vector3d d_scale = (rot.transpose() * d_m).diagonal();
        for (int kk = 0; kk < 3; ++kk) {
            const double sraw = std::exp(g.log_scale[kk]);
            // clamp boundary: zero gradient outside the active range
            if (sraw > kScaleMin && sraw < kScaleMax)
                grads.d_log_scale[gi_idx][kk] += d_scale[kk] * sraw;
        }

        // quaternion: R(q/|q|) with normalization chain
        const double qn_norm = g.rotation.norm();
        const Eigen::Vector4d qn = g.rotation / qn_norm;
        Eigen::Vector4d d_qn;
        for (int kk = 0; kk < 4; ++kk) d_qn[kk] = contract_rot_grad(d_rot_m, qn, kk);
        grads.d_rotation[gi_idx] +=
            (d_qn - qn * qn.dot(d_qn)) / qn_norm;
    }
    return grads;
}

} // namespace splat
