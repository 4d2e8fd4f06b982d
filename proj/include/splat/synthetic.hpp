#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/camera.hpp"
#include "splat/gaussian.hpp"
#include "splat/image.hpp"

namespace splat {

struct DatasetConfig {
    int object_count = 2;
    int views_per_object = 84;
    int input_views = 16;
    double elevation_lo_deg = -5.0;
    double elevation_hi_deg = 30.0;
    int resolution = 64;
    double radius = 2.0;
    double fov_y_deg = 45.0;
    std::uint64_t seed = 0;
    bool eval_set = false; // 21 views, view 0 is the conditioning input
};

struct ViewRecord {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    std::string image;      // paths relative to the manifest directory
    std::string depth;
    std::string alpha;
};

struct ObjectRecord {
    std::string id;
    std::uint64_t seed = 0;
    double elevation_deg = 0.0;
    std::vector<int> input_view_indices;
    int conditioning_view = -1; // eval sets only
    std::vector<ViewRecord> views;
};

struct DatasetManifest {
    DatasetConfig config;
    std::vector<ObjectRecord> objects;
    std::string root_dir; // directory holding manifest.json
};

/// Procedural object: 3-8 ellipsoidal clusters of 50-400 Gaussians each,
/// distinct base colors, every mean inside the unit sphere.
GaussianScene gen_object(std::uint64_t seed);

/// Renders every object at Q orbit views with the brute-force reference
/// renderer and writes PNG + depth/alpha planes + manifest.json to out_dir.
DatasetManifest render_dataset(const DatasetConfig& cfg, const std::string& out_dir);

/// render_dataset specialization: 21 views, view 0 flagged as conditioning.
DatasetManifest make_eval_set(DatasetConfig cfg, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& manifest_path);

Camera dataset_camera(const DatasetConfig& cfg, double azimuth_deg,
                      double elevation_deg);

/// In-memory ground truth for one object. Masks are alpha > 0.5 coverage.
struct ObjectViews {
    std::vector<ImageBuffer> images;
    std::vector<DepthBuffer> depths;
    std::vector<Mask> masks;
    std::vector<Camera> cameras;
};

ObjectViews load_object_views(const DatasetManifest& m, std::size_t object_index);

} // namespace splat
