// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "a4dg/error.hpp"
#include "a4dg/geometry.hpp"
#include "a4dg/image.hpp"
#include "a4dg/image_io.hpp"
#include "a4dg/ply.hpp"

namespace a4dg {

// Multi-view image sequence with its initial point cloud.
//
// On disk a dataset is a directory holding `manifest.json`:
//
//   {
//     "frame_count": 24,
//     "test_camera": 0,
//     "pointcloud": "points.ply",
//     "cameras": [
//       { "id": 0, "width": 48, "height": 48,
//         "fx": 60, "fy": 60, "cx": 24, "cy": 24,
//         "rotation": [9 numbers, row-major world-to-camera],
//         "translation": [3 numbers],
//         "near": 0.05, "far": 100,
//         "frames": ["cam00/f000.png", ...] }
//     ]
//   }
//
// Paths are relative to the manifest's directory. Frame i of every camera is
// taken at normalized time i / (frame_count - 1).
struct CameraEntry {
    int id = 0;
    Camera camera;
    std::vector<std::string> frames;  // relative paths
};

struct SceneDataset {
    int frame_count = 0;
    int test_camera = 0;
    std::string pointcloud_path;
    std::vector<CameraEntry> cameras;
    // Loaded content; images[c][f] belongs to cameras[c].
    std::vector<std::vector<Image>> images;
    std::vector<Vec3> points;
    std::vector<Vec3> colors;
    std::size_t dropped_points = 0;

    double frame_time(int f) const { return frame_count > 1 ? static_cast<double>(f) / (frame_count - 1) : 0.0; }

    std::size_t camera_index(int id) const {
        for (std::size_t i = 0; i < cameras.size(); ++i)
            if (cameras[i].id == id) return i;
        throw Error("dataset has no camera with id " + std::to_string(id), ExitCode::kData);
    }
    std::size_t test_index() const { return camera_index(test_camera); }

    std::vector<std::size_t> train_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < cameras.size(); ++i)
            if (cameras[i].id != test_camera) out.push_back(i);
        return out;
    }
};

namespace detail {

using nlohmann::json;

inline const json& require(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field \"" + key + "\"");
    return j.at(key);
}

template <typename T>
T require_as(const json& j, const char* key, const std::string& where) {
    const json& v = require(j, key, where);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ParseError(where + ": field \"" + key + "\" has the wrong type");
    }
}

inline Camera camera_from_json(const json& j, const std::string& where) {
    Camera c;
    c.width = require_as<int>(j, "width", where);
    c.height = require_as<int>(j, "height", where);
    c.fx = require_as<double>(j, "fx", where);
    c.fy = require_as<double>(j, "fy", where);
    c.cx = require_as<double>(j, "cx", where);
    c.cy = require_as<double>(j, "cy", where);
    const auto r = require_as<std::vector<double>>(j, "rotation", where);
    const auto t = require_as<std::vector<double>>(j, "translation", where);
    if (r.size() != 9) throw ParseError(where + ": rotation needs 9 numbers");
    if (t.size() != 3) throw ParseError(where + ": translation needs 3 numbers");
    for (int i = 0; i < 3; ++i) {
        c.translation[i] = t[i];
        for (int k = 0; k < 3; ++k) c.rotation(i, k) = r[3 * i + k];
    }
    if (j.contains("near")) c.near_plane = require_as<double>(j, "near", where);
    if (j.contains("far")) c.far_plane = require_as<double>(j, "far", where);
    try {
        c.validate();
    } catch (const Error& e) {
        throw ParseError(where + ": " + e.what());
    }
    return c;
}

inline json camera_to_json(const CameraEntry& e) {
    const Camera& c = e.camera;
    std::vector<double> r(9), t(3);
    for (int i = 0; i < 3; ++i) {
        t[i] = c.translation[i];
        for (int k = 0; k < 3; ++k) r[3 * i + k] = c.rotation(i, k);
    }
    return json{{"id", e.id},      {"width", c.width},        {"height", c.height}, {"fx", c.fx},
                {"fy", c.fy},      {"cx", c.cx},              {"cy", c.cy},         {"rotation", r},
                {"translation", t}, {"near", c.near_plane},   {"far", c.far_plane}, {"frames", e.frames}};
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "manifest.json"; }

// Parses the manifest only; no images or points are read.
inline SceneDataset parse_manifest(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest is not valid JSON: ") + e.what(), e.byte);
    }
    SceneDataset d;
    d.frame_count = detail::require_as<int>(j, "frame_count", "manifest");
    d.test_camera = detail::require_as<int>(j, "test_camera", "manifest");
    d.pointcloud_path = detail::require_as<std::string>(j, "pointcloud", "manifest");
    if (d.frame_count < 1) throw ParseError("manifest: frame_count must be >= 1");
    const json& cams = detail::require(j, "cameras", "manifest");
    if (!cams.is_array() || cams.empty()) throw ParseError("manifest: cameras must be a non-empty array");
    std::set<int> ids;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string where = "camera[" + std::to_string(i) + "]";
        CameraEntry e;
        e.id = detail::require_as<int>(cams[i], "id", where);
        e.camera = detail::camera_from_json(cams[i], where);
        e.frames = detail::require_as<std::vector<std::string>>(cams[i], "frames", where);
        if (static_cast<int>(e.frames.size()) != d.frame_count)
            throw ParseError(where + ": has " + std::to_string(e.frames.size()) + " frames, manifest declares " +
                             std::to_string(d.frame_count));
        if (!ids.insert(e.id).second) throw ParseError(where + ": duplicate camera id " + std::to_string(e.id));
        d.cameras.push_back(std::move(e));
    }
    if (!ids.count(d.test_camera))
        throw ParseError("manifest: test_camera " + std::to_string(d.test_camera) + " is not a camera id");
    return d;
}

inline std::string manifest_json(const SceneDataset& d) {
    using detail::json;
    json cams = json::array();
    for (const CameraEntry& e : d.cameras) cams.push_back(detail::camera_to_json(e));
    json j{{"frame_count", d.frame_count},
           {"test_camera", d.test_camera},
           {"pointcloud", d.pointcloud_path},
           {"cameras", cams}};
    return j.dump(2) + "\n";
}

inline Image load_frame_image(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".a4fi") return read_raw_image(path.string());
    return read_png(path.string());
}

// Reads the manifest, every frame image and the point cloud. With
// `load_images` false only cameras and points are loaded.
inline SceneDataset load_dataset(const std::filesystem::path& dir, bool load_images = true) {
    const std::filesystem::path mpath = manifest_path(dir);
    if (!std::filesystem::exists(mpath)) throw Error("no manifest.json in " + dir.string(), ExitCode::kData);
    SceneDataset d = parse_manifest(read_file_bytes(mpath.string()));
    const PointCloud pc = load_pointcloud((dir / d.pointcloud_path).string());
    d.points = pc.points;
    d.colors = pc.colors;
    d.dropped_points = pc.dropped;
    if (!load_images) return d;
    d.images.resize(d.cameras.size());
    for (std::size_t c = 0; c < d.cameras.size(); ++c) {
        const Camera& cam = d.cameras[c].camera;
        for (const std::string& rel : d.cameras[c].frames) {
            const std::filesystem::path p = dir / rel;
            if (!std::filesystem::exists(p)) throw Error("missing frame image " + p.string(), ExitCode::kData);
            Image img = load_frame_image(p);
            if (img.width != cam.width || img.height != cam.height || img.channels != 3)
                throw Error(p.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                ", camera declares " + std::to_string(cam.width) + "x" + std::to_string(cam.height),
                            ExitCode::kData);
            d.images[c].push_back(std::move(img));
        }
    }
    return d;
}

// Writes manifest, PNG frames and a binary PLY. Frame paths in `d.cameras`
// are used as given.
inline void save_dataset(const SceneDataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t c = 0; c < d.cameras.size(); ++c)
        for (std::size_t f = 0; f < d.cameras[c].frames.size(); ++f) {
            const std::filesystem::path p = dir / d.cameras[c].frames[f];
            std::filesystem::create_directories(p.parent_path());
            if (p.extension() == ".a4fi")
                write_raw_image(p.string(), d.images[c][f]);
            else
                write_png(p.string(), d.images[c][f]);
        }
    write_ply((dir / d.pointcloud_path).string(), d.points, d.colors);
    std::ofstream m(manifest_path(dir));
    if (!m) throw Error("cannot write manifest in " + dir.string(), ExitCode::kData);
    m << manifest_json(d);
}

}  // namespace a4dg
