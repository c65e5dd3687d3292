#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "adnf/audio_cond.hpp"
#include "adnf/image.hpp"
#include "adnf/render.hpp"

namespace adnf {

enum Label : std::uint8_t { background_label = 0, head_label = 1, torso_label = 2 };

struct Dataset {
  std::vector<Image> frames;
  std::vector<LabelImage> masks;
  std::vector<Pose> poses;
  AudioTrack audio;
  SceneGeometry geometry;
  Image background;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t width() const { return geometry.camera.width; }
  std::size_t height() const { return geometry.camera.height; }

  // Throws load_error describing the first violated invariant.
  void validate() const {
    try {
      geometry.validate();
    } catch (const contract_error& e) {
      throw load_error(std::string("dataset geometry: ") + e.what());
    }
    const std::size_t n = frames.size();
    if (n == 0) throw load_error("dataset has no frames");
    if (masks.size() != n) throw load_error(count_mismatch("masks", masks.size()));
    if (poses.size() != n) throw load_error(count_mismatch("poses", poses.size()));
    audio.validate();
    if (audio.frames() != n) throw load_error(count_mismatch("audio feature rows", audio.frames()));
    for (std::size_t i = 0; i < n; ++i) {
      if (frames[i].width != width() || frames[i].height != height())
        throw load_error("frame " + std::to_string(i) + " is " + size_text(frames[i]) + ", camera is " + camera_size());
      if (masks[i].width != width() || masks[i].height != height())
        throw load_error("mask " + std::to_string(i) + " does not match the camera size " + camera_size());
      for (std::uint8_t v : masks[i].data)
        if (v > torso_label)
          throw load_error("mask " + std::to_string(i) + " has label " + std::to_string(v) + " (allowed 0, 1, 2)");
      if (auto problem = poses[i].rotation_problem(); !problem.empty())
        throw load_error("pose " + std::to_string(i) + ": " + problem);
    }
    if (background.width != width() || background.height != height())
      throw load_error("background is " + size_text(background) + ", camera is " + camera_size());
  }

  bool operator==(const Dataset& o) const {
    if (frames != o.frames || masks != o.masks || background != o.background) return false;
    if (!(audio.features == o.audio.features) || audio.frame_rate != o.audio.frame_rate) return false;
    if (poses.size() != o.poses.size()) return false;
    for (std::size_t i = 0; i < poses.size(); ++i)
      if (poses[i].rotation != o.poses[i].rotation || poses[i].translation != o.poses[i].translation) return false;
    const auto& a = geometry;
    const auto& b = o.geometry;
    return a.camera.fx == b.camera.fx && a.camera.fy == b.camera.fy &&
           a.camera.cx == b.camera.cx && a.camera.cy == b.camera.cy && a.camera.width == b.camera.width &&
           a.camera.height == b.camera.height && a.camera.camera_to_world.rotation == b.camera.camera_to_world.rotation &&
           a.camera.camera_to_world.translation == b.camera.camera_to_world.translation && a.box.min == b.box.min &&
           a.box.max == b.box.max && a.near == b.near && a.far == b.far;
  }

 private:
  std::string count_mismatch(const std::string& what, std::size_t got) const {
    return "count mismatch: " + std::to_string(frames.size()) + " frames but " + std::to_string(got) + " " + what;
  }
  static std::string size_text(const Image& i) { return std::to_string(i.width) + "x" + std::to_string(i.height); }
  std::string camera_size() const { return std::to_string(width()) + "x" + std::to_string(height()); }
};

namespace detail {

inline std::string indexed(const char* dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%05zu.png", dir, i);
  return buf;
}

inline nlohmann::json pose_json(const Pose& p) {
  return {{"R", p.rotation}, {"t", p.translation}};
}

inline Pose pose_from_json(const nlohmann::json& j, const std::string& what) {
  Pose p;
  if (!j.is_object() || !j.contains("R") || !j.contains("t") || j["R"].size() != 9 || j["t"].size() != 3)
    throw load_error(what + ": expected {\"R\": [9 numbers], \"t\": [3 numbers]}");
  for (std::size_t i = 0; i < 9; ++i) p.rotation[i] = j["R"][i].get<double>();
  for (std::size_t i = 0; i < 3; ++i) p.translation[i] = j["t"][i].get<double>();
  return p;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw load_error("missing asset '" + path.string() + "'");
  try {
    return nlohmann::json::parse(png::detail::read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw load_error("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "masks");
  nlohmann::json manifest;
  const auto& g = d.geometry;
  manifest["frame_count"] = d.frame_count();
  manifest["camera"] = {{"fx", g.camera.fx},
                        {"fy", g.camera.fy},
                        {"cx", g.camera.cx},
                        {"cy", g.camera.cy},
                        {"width", g.camera.width},
                        {"height", g.camera.height},
                        {"camera_to_world", detail::pose_json(g.camera.camera_to_world)}};
  manifest["scene_box"] = {{"min", g.box.min}, {"max", g.box.max}, {"near", g.near}, {"far", g.far}};
  nlohmann::json frame_files = nlohmann::json::array(), mask_files = nlohmann::json::array();
  for (std::size_t i = 0; i < d.frame_count(); ++i) {
    frame_files.push_back(detail::indexed("frames", i));
    mask_files.push_back(detail::indexed("masks", i));
    png::write_rgb((dir / frame_files.back().get<std::string>()).string(), d.frames[i]);
    png::write_labels((dir / mask_files.back().get<std::string>()).string(), d.masks[i]);
  }
  manifest["frames"] = frame_files;
  manifest["masks"] = mask_files;
  manifest["poses"] = "poses.json";
  manifest["audio"] = "audio.adaf";
  manifest["background"] = "background.png";

  nlohmann::json poses = nlohmann::json::array();
  for (const auto& p : d.poses) poses.push_back(detail::pose_json(p));
  png::detail::write_file((dir / "poses.json").string(), poses.dump(1) + "\n");
  adaf::save((dir / "audio.adaf").string(), d.audio);
  png::write_rgb((dir / "background.png").string(), d.background);
  png::detail::write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  const auto manifest = detail::read_json(dir / "manifest.json");
  try {
    const auto& cam = manifest.at("camera");
    auto& c = d.geometry.camera;
    c.fx = cam.at("fx").get<double>();
    c.fy = cam.at("fy").get<double>();
    c.cx = cam.at("cx").get<double>();
    c.cy = cam.at("cy").get<double>();
    c.width = cam.at("width").get<std::size_t>();
    c.height = cam.at("height").get<std::size_t>();
    c.camera_to_world = detail::pose_from_json(cam.at("camera_to_world"), "camera_to_world");
    const auto& box = manifest.at("scene_box");
    for (std::size_t i = 0; i < 3; ++i) {
      d.geometry.box.min[i] = box.at("min").at(i).get<double>();
      d.geometry.box.max[i] = box.at("max").at(i).get<double>();
    }
    const auto [near, far] = SceneGeometry::default_bounds(d.geometry.box);
    d.geometry.near = box.value("near", near);
    d.geometry.far = box.value("far", far);

    const std::size_t n = manifest.at("frame_count").get<std::size_t>();
    const auto& frame_files = manifest.at("frames");
    const auto& mask_files = manifest.at("masks");
    if (frame_files.size() != n) throw load_error("count mismatch: frame_count " + std::to_string(n) + " but " +
                                                  std::to_string(frame_files.size()) + " frame files listed");
    for (const auto& f : frame_files) {
      const auto path = dir / f.get<std::string>();
      if (!std::filesystem::exists(path)) throw load_error("missing asset '" + path.string() + "'");
      d.frames.push_back(png::read_rgb(path.string()));
    }
    for (const auto& f : mask_files) {
      const auto path = dir / f.get<std::string>();
      if (!std::filesystem::exists(path)) throw load_error("missing asset '" + path.string() + "'");
      d.masks.push_back(png::read_labels(path.string()));
    }
    const auto poses = detail::read_json(dir / manifest.value("poses", std::string("poses.json")));
    if (!poses.is_array()) throw load_error("poses.json must hold an array of poses");
    for (std::size_t i = 0; i < poses.size(); ++i)
      d.poses.push_back(detail::pose_from_json(poses[i], "pose " + std::to_string(i)));
    const auto audio = dir / manifest.value("audio", std::string("audio.adaf"));
    if (!std::filesystem::exists(audio)) throw load_error("missing asset '" + audio.string() + "'");
    d.audio = adaf::load(audio.string());
    const auto bg = dir / manifest.value("background", std::string("background.png"));
    if (!std::filesystem::exists(bg)) throw load_error("missing asset '" + bg.string() + "'");
    d.background = png::read_rgb(bg.string());
  } catch (const nlohmann::json::exception& e) {
    throw load_error("manifest.json: " + std::string(e.what()));
  }
  d.validate();
  return d;
}

}  // namespace adnf
