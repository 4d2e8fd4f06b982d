#include "splat/synthetic.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "splat/errors.hpp"
#include "splat/imageio.hpp"
#include "splat/losses.hpp"
#include "splat/rasterizer.hpp"
#include "splat/util.hpp"

namespace splat {

namespace fs = std::filesystem;

GaussianScene gen_object(std::uint64_t seed) {
    RngStream rng(seed);
    GaussianScene scene;
    const int clusters = static_cast<int>(rng.uniform_int(3, 8));
    for (int c = 0; c < clusters; ++c) {
        Eigen::Vector3d center(rng.uniform(-0.55, 0.55), rng.uniform(-0.55, 0.55),
                               rng.uniform(-0.55, 0.55));
        const Eigen::Vector3d base_color(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                                         rng.uniform(0.1, 0.9));
        // ellipsoidal spread of the cluster
        const Eigen::Vector3d spread(rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.25),
                                     rng.uniform(0.05, 0.25));
        const int count = static_cast<int>(rng.uniform_int(50, 400));
        for (int i = 0; i < count; ++i) {
            Gaussian3D g;
            g.mean = center + Eigen::Vector3d(spread.x() * rng.gaussian(),
                                              spread.y() * rng.gaussian(),
                                              spread.z() * rng.gaussian());
            if (g.mean.norm() > 0.98) g.mean *= 0.98 / g.mean.norm();
            g.log_scale = Eigen::Vector3d(rng.uniform(-3.6, -2.4),
                                          rng.uniform(-3.6, -2.4),
                                          rng.uniform(-3.6, -2.4));
            g.rotation = Eigen::Vector4d(rng.gaussian(), rng.gaussian(),
                                         rng.gaussian(), rng.gaussian());
            if (g.rotation.norm() < 1e-6) g.rotation = Eigen::Vector4d(1, 0, 0, 0);
            g.opacity_logit = rng.uniform(0.5, 2.5);
            g.color = base_color + Eigen::Vector3d(rng.uniform(-0.08, 0.08),
                                                   rng.uniform(-0.08, 0.08),
                                                   rng.uniform(-0.08, 0.08));
            for (int k = 0; k < 3; ++k)
                g.color[k] = std::clamp(g.color[k], 0.02, 0.98);
            scene.gaussians.push_back(g);
        }
    }
    scene.bound_radius = 1.0;
    return scene;
}

Camera dataset_camera(const DatasetConfig& cfg, double azimuth_deg,
                      double elevation_deg) {
    return make_orbit_camera(deg_to_rad(azimuth_deg), deg_to_rad(elevation_deg),
                             cfg.radius,
                             focal_from_fov(deg_to_rad(cfg.fov_y_deg),
                                            cfg.resolution),
                             cfg.resolution);
}

namespace {

nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    const DatasetConfig& c = m.config;
    j["object_count"] = c.object_count;
    j["views_per_object"] = c.views_per_object;
    j["input_views"] = c.input_views;
    j["elevation_range_deg"] = {c.elevation_lo_deg, c.elevation_hi_deg};
    j["resolution"] = c.resolution;
    j["radius"] = c.radius;
    j["fov_y_deg"] = c.fov_y_deg;
    j["seed"] = c.seed;
    j["eval_set"] = c.eval_set;
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : m.objects) {
        nlohmann::json jo;
        jo["id"] = o.id;
        jo["seed"] = o.seed;
        jo["elevation_deg"] = o.elevation_deg;
        jo["input_view_indices"] = o.input_view_indices;
        if (o.conditioning_view >= 0) jo["conditioning_view"] = o.conditioning_view;
        nlohmann::json views = nlohmann::json::array();
        for (const auto& v : o.views)
            views.push_back({{"azimuth_deg", v.azimuth_deg},
                             {"elevation_deg", v.elevation_deg},
                             {"image", v.image},
                             {"depth", v.depth},
                             {"alpha", v.alpha}});
        jo["views"] = views;
        objs.push_back(jo);
    }
    j["objects"] = objs;
    return j;
}

DatasetManifest render_views(const DatasetConfig& cfg, const std::string& out_dir) {
    if (cfg.object_count < 1 || cfg.views_per_object < 1)
        throw invalid_parameter("render_dataset: empty configuration");
    if (cfg.input_views < 1 || cfg.input_views > cfg.views_per_object)
        throw invalid_parameter("render_dataset: input_views out of range");

    fs::create_directories(out_dir);
    DatasetManifest m;
    m.config = cfg;
    m.root_dir = out_dir;

    RngStream master(cfg.seed);
    const double focal =
        focal_from_fov(deg_to_rad(cfg.fov_y_deg), cfg.resolution);
    for (int oi = 0; oi < cfg.object_count; ++oi) {
        ObjectRecord rec;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "obj_%04d", oi);
        rec.id = idbuf;
        rec.seed = master.next_u64();
        rec.elevation_deg =
            cfg.elevation_lo_deg +
            master.uniform() * (cfg.elevation_hi_deg - cfg.elevation_lo_deg);
        rec.input_view_indices =
            select_input_views(cfg.views_per_object, cfg.input_views);
        if (cfg.eval_set) rec.conditioning_view = 0;

        const GaussianScene scene = gen_object(rec.seed);
        const auto cams =
            make_orbit_cameras(cfg.views_per_object, deg_to_rad(rec.elevation_deg),
                               cfg.radius, focal, cfg.resolution);
        const fs::path obj_dir = fs::path(out_dir) / rec.id;
        fs::create_directories(obj_dir);
        for (int vi = 0; vi < cfg.views_per_object; ++vi) {
            RenderOutput out;
            try {
                out = render_reference(scene, cams[static_cast<std::size_t>(vi)],
                                       Eigen::Vector3d::Ones());
            } catch (const std::exception& e) {
                throw data_error("render_dataset: object " + rec.id + " view " +
                                 std::to_string(vi) + ": " + e.what());
            }
            ViewRecord v;
            v.azimuth_deg = rad_to_deg(cams[static_cast<std::size_t>(vi)].azimuth);
            v.elevation_deg = rec.elevation_deg;
            char name[48];
            std::snprintf(name, sizeof(name), "view_%03d", vi);
            v.image = rec.id + "/" + name + ".png";
            v.depth = rec.id + "/" + name + "_depth.bin";
            v.alpha = rec.id + "/" + name + "_alpha.bin";
            write_png((fs::path(out_dir) / v.image).string(), out.image);
            write_depth((fs::path(out_dir) / v.depth).string(), out.depth.depth,
                        cfg.resolution, cfg.resolution);
            write_depth((fs::path(out_dir) / v.alpha).string(), out.depth.alpha,
                        cfg.resolution, cfg.resolution);
            rec.views.push_back(std::move(v));
        }
        m.objects.push_back(std::move(rec));
    }

    std::ofstream jf(fs::path(out_dir) / "manifest.json", std::ios::binary);
    if (!jf) throw data_error("render_dataset: cannot write manifest");
    jf << manifest_to_json(m).dump(2) << "\n";
    return m;
}

} // namespace

DatasetManifest render_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    return render_views(cfg, out_dir);
}

DatasetManifest make_eval_set(DatasetConfig cfg, const std::string& out_dir) {
    cfg.views_per_object = 21;
    cfg.eval_set = true;
    if (cfg.input_views > 21) cfg.input_views = 21;
    return render_views(cfg, out_dir);
}

DatasetManifest load_manifest(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw data_error("load_manifest: cannot open " + manifest_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw data_error(std::string("load_manifest: bad JSON: ") + e.what());
    }
    DatasetManifest m;
    try {
        DatasetConfig& c = m.config;
        c.object_count = j.at("object_count").get<int>();
        c.views_per_object = j.at("views_per_object").get<int>();
        c.input_views = j.at("input_views").get<int>();
        c.elevation_lo_deg = j.at("elevation_range_deg").at(0).get<double>();
        c.elevation_hi_deg = j.at("elevation_range_deg").at(1).get<double>();
        c.resolution = j.at("resolution").get<int>();
        c.radius = j.at("radius").get<double>();
        c.fov_y_deg = j.at("fov_y_deg").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.eval_set = j.at("eval_set").get<bool>();
        for (const auto& jo : j.at("objects")) {
            ObjectRecord rec;
            rec.id = jo.at("id").get<std::string>();
            rec.seed = jo.at("seed").get<std::uint64_t>();
            rec.elevation_deg = jo.at("elevation_deg").get<double>();
            rec.input_view_indices =
                jo.at("input_view_indices").get<std::vector<int>>();
            if (jo.contains("conditioning_view"))
                rec.conditioning_view = jo.at("conditioning_view").get<int>();
            for (const auto& jv : jo.at("views")) {
                ViewRecord v;
                v.azimuth_deg = jv.at("azimuth_deg").get<double>();
                v.elevation_deg = jv.at("elevation_deg").get<double>();
                v.image = jv.at("image").get<std::string>();
                v.depth = jv.at("depth").get<std::string>();
                v.alpha = jv.at("alpha").get<std::string>();
                rec.views.push_back(std::move(v));
            }
            m.objects.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("load_manifest: missing field: ") + e.what());
    }
    m.root_dir = fs::path(manifest_path).parent_path().string();
    return m;
}

ObjectViews load_object_views(const DatasetManifest& m, std::size_t object_index) {
    if (object_index >= m.objects.size())
        throw invalid_parameter("load_object_views: object index out of range");
    const ObjectRecord& rec = m.objects[object_index];
    const double focal = focal_from_fov(deg_to_rad(m.config.fov_y_deg),
                                        m.config.resolution);
    ObjectViews out;
    const auto cams = make_orbit_cameras(static_cast<int>(rec.views.size()),
                                         deg_to_rad(rec.elevation_deg),
                                         m.config.radius, focal,
                                         m.config.resolution);
    for (std::size_t vi = 0; vi < rec.views.size(); ++vi) {
        const ViewRecord& v = rec.views[vi];
        const fs::path root(m.root_dir);
        out.images.push_back(read_png((root / v.image).string()));
        int h = 0, w = 0;
        DepthBuffer db;
        db.depth = read_depth((root / v.depth).string(), &h, &w);
        db.height = h;
        db.width = w;
        db.alpha = read_depth((root / v.alpha).string(), &h, &w);
        out.masks.push_back(coverage_mask(db));
        out.depths.push_back(std::move(db));
        out.cameras.push_back(cams[vi]);
    }
    return out;
}

} // namespace splat
