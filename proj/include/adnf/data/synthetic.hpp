#pragma once

#include <cmath>
#include <numbers>
#include <optional>

#include "adnf/data/dataset.hpp"

namespace adnf {

struct SyntheticConfig {
  std::size_t frames = 100;
  std::size_t width = 64;
  std::size_t height = 64;
  double frame_rate = 25;
  double focal_scale = 1.35;  // focal length in units of image width
  double camera_distance = 2.6;
  double near = 1.5;
  double far = 3.7;
  bool head = true;
  bool torso = true;
  bool animate_signal = true;  // false: s(t) = 0 throughout
  double rotation_scale = 1.0;
  double translation_scale = 1.0;
  double torso_follow = 0.4;  // fraction of the head motion the torso takes on
  std::size_t quadrature = 256;
  // > 0 replaces head and torso by one box-filling medium of this density
  double medium_density = 0;
  Rgb medium_color{0.8, 0.3, 0.2};

  void validate() const {
    require(frames >= 2, "synthetic scene: need at least 2 frames");
    require(width >= 16 && height >= 16, "synthetic scene: resolution must be at least 16x16");
    require(frame_rate > 0, "synthetic scene: frame rate must be positive");
    require(focal_scale > 0 && camera_distance > 0, "synthetic scene: bad camera");
    require(near > 0 && far > near, "synthetic scene: need 0 < near < far");
    require(quadrature >= 2, "synthetic scene: quadrature needs at least 2 steps");
    require(medium_density >= 0, "synthetic scene: negative medium density");
  }
};

// Scene state at one instant.
struct SceneState {
  double signal = 0;
  Pose head{};
  Pose torso{};
};

struct OracleImage {
  Image color;
  std::vector<float> head_alpha;   // head layer rendered alone
  std::vector<float> torso_alpha;  // torso layer rendered alone
  std::vector<float> mouth_alpha;  // mouth blob alone at full signal
};

class SyntheticScene {
 public:
  static constexpr Vec3 head_centre{0, 0.18, 0};
  static constexpr Vec3 head_radii{0.40, 0.48, 0.40};
  static constexpr Vec3 mouth_centre{0, -0.05, 0.36};
  static constexpr Vec3 mouth_radii{0.16, 0.07, 0.09};
  static constexpr Vec3 torso_centre{0, -0.72, -0.1};
  static constexpr Vec3 torso_half{0.75, 0.28, 0.30};
  static constexpr double peak_density = 40;
  static constexpr double mouth_density = 30;

  SyntheticConfig config;
  std::uint64_t seed = 0;
  std::array<double, 2> signal_phase{};
  std::array<double, 6> motion_phase{};
  std::array<double, 4> background_phase{};
  std::array<float, audio_feature_dim> embed_base{}, embed_signal{};
  SceneGeometry geometry;
  Image true_background;
  Dataset dataset;

  double signal(double frame) const { return signal_at(frame, signal_phase); }

  double signal_at(double frame, const std::array<double, 2>& phase) const {
    if (!config.animate_signal) return 0.0;
    constexpr double tau = 2 * std::numbers::pi;
    return 0.5 + 0.25 * std::sin(tau * frame / 17.0 + phase[0]) + 0.25 * std::sin(tau * frame / 29.0 + phase[1]);
  }

  Pose head_pose(double frame) const {
    constexpr double tau = 2 * std::numbers::pi;
    const auto& p = motion_phase;
    const double r = config.rotation_scale, t = config.translation_scale;
    return Pose::from_euler_xyz({0.10 * r * std::sin(tau * frame / 41 + p[0]), 0.22 * r * std::sin(tau * frame / 53 + p[1]),
                                 0.06 * r * std::sin(tau * frame / 37 + p[2])},
                                {0.05 * t * std::sin(tau * frame / 47 + p[3]), 0.03 * t * std::sin(tau * frame / 31 + p[4]),
                                 0.03 * t * std::sin(tau * frame / 59 + p[5])});
  }

  // The torso takes a damped share of the head motion: not rigidly attached,
  // but determined by the head pose.
  Pose torso_pose(const Pose& head) const {
    const auto e = head.euler_xyz();
    const double f = config.torso_follow;
    return Pose::from_euler_xyz({f * e[0], f * e[1], f * e[2]},
                                {f * head.translation[0], f * head.translation[1], f * head.translation[2]});
  }

  SceneState state(double frame) const {
    SceneState s;
    s.signal = signal(frame);
    s.head = head_pose(frame);
    s.torso = torso_pose(s.head);
    return s;
  }

  std::vector<float> feature_row(double s) const {
    std::vector<float> row(audio_feature_dim);
    for (std::size_t j = 0; j < audio_feature_dim; ++j) row[j] = embed_base[j] + static_cast<float>(s) * embed_signal[j];
    return row;
  }

  AudioTrack track_for(const std::vector<double>& signals) const {
    AudioTrack t;
    t.frame_rate = static_cast<float>(config.frame_rate);
    t.features = DenseArray<float>::matrix(signals.size(), audio_feature_dim);
    for (std::size_t i = 0; i < signals.size(); ++i) {
      const auto row = feature_row(signals[i]);
      std::copy(row.begin(), row.end(), t.features.row(i).begin());
    }
    return t;
  }

  // Head layer (skin, eyes, hair and the mouth blob) in canonical coordinates.
  RadianceSample head_layer(const Vec3& x, double s) const {
    if (config.medium_density > 0 || !config.head) return {};
    const double rho = ellipsoid_radius(x, head_centre, head_radii);
    const double rho_m = ellipsoid_radius(x, mouth_centre, mouth_radii);
    const double sh = rho < 1 ? peak_density * (1 - smoothstep(0.85, 1.0, rho)) : 0.0;
    const double sm = mouth_layer_density(rho_m, s);
    if (sh + sm == 0) return {};
    Rgb skin = {0.78, 0.58, 0.46};
    const double shade = 0.85 + 0.15 * ((x[0] - head_centre[0]) / head_radii[0] * 0.3 +
                                        (x[1] - head_centre[1]) / head_radii[1] * 0.6 +
                                        (x[2] - head_centre[2]) / head_radii[2] * 0.74);
    for (auto& c : skin) c *= shade;
    const double hair = smoothstep(0.22, 0.32, x[1] - head_centre[1]);
    skin = mix(skin, {0.28, 0.17, 0.10}, hair);
    for (double side : {-1.0, 1.0}) {
      const Vec3 eye = {head_centre[0] + 0.15 * side, head_centre[1] + 0.10, head_centre[2] + 0.34};
      const double d = distance(x, eye);
      skin = mix(skin, {0.10, 0.08, 0.09}, 1 - smoothstep(0.045, 0.08, d));
    }
    const Rgb teeth = {0.96, 0.93, 0.90};
    return {mix(skin, teeth, sm / (sh + sm)), sh + sm};
  }

  double mouth_layer_density(double rho_m, double s) const {
    return rho_m < 1 ? mouth_density * (0.2 + 0.8 * s) * (1 - smoothstep(0.7, 1.0, rho_m)) : 0.0;
  }

  // Torso layer in torso-local coordinates.
  RadianceSample torso_layer(const Vec3& x) const {
    if (config.medium_density > 0 || !config.torso) return {};
    double q = 0;
    for (int i = 0; i < 3; ++i) q += std::pow(std::abs(x[i] - torso_centre[i]) / torso_half[i], 4);
    const double rho = std::pow(q, 0.25);
    if (rho >= 1) return {};
    Rgb shirt = {0.22, 0.32, 0.62};
    const double stripe = 0.10 * std::sin(9 * x[0]);
    for (auto& c : shirt) c += stripe;
    const double dy = x[1] - torso_centre[1];
    const double collar = smoothstep(0.10, 0.20, dy) * (1 - smoothstep(0.12, 0.2, std::abs(x[0])));
    return {mix(shirt, {0.92, 0.92, 0.94}, collar), peak_density * (1 - smoothstep(0.85, 1.0, rho))};
  }

  double medium_density(const Vec3& x) const {
    if (config.medium_density <= 0) return 0;
    for (int i = 0; i < 3; ++i)
      if (x[i] < geometry.box.min[i] || x[i] > geometry.box.max[i]) return 0;
    return config.medium_density;
  }

  static double smoothstep(double a, double b, double x) {
    const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
    return t * t * (3 - 2 * t);
  }
  static Rgb mix(const Rgb& a, const Rgb& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
  }
  static double distance(const Vec3& a, const Vec3& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
  }
  static double ellipsoid_radius(const Vec3& x, const Vec3& c, const Vec3& r) {
    double q = 0;
    for (int i = 0; i < 3; ++i) q += (x[i] - c[i]) * (x[i] - c[i]) / (r[i] * r[i]);
    return std::sqrt(q);
  }
};

namespace detail {

// Parameter interval where the ray is within `radius` of `centre`.
inline std::pair<double, double> sphere_span(const Ray& ray, const Vec3& centre, double radius) {
  const Vec3 oc = {ray.origin[0] - centre[0], ray.origin[1] - centre[1], ray.origin[2] - centre[2]};
  const double b = oc[0] * ray.direction[0] + oc[1] * ray.direction[1] + oc[2] * ray.direction[2];
  const double c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0) return {1, 0};
  const double r = std::sqrt(disc);
  return {-b - r, -b + r};
}

}  // namespace detail

// Dense fixed-step quadrature of the joint scene (head + torso densities
// summed, colours density-weighted) with step (far - near) / n, samples at
// step midpoints. Per-layer alphas come from each layer marched alone.
inline OracleImage oracle_render(const SyntheticScene& scene, const SceneState& st, const SceneGeometry& geo,
                                 const Image& background, std::size_t n) {
  require(n >= 2, "oracle_render: need at least 2 quadrature steps");
  require(background.width == geo.camera.width && background.height == geo.camera.height,
          "oracle_render: background size mismatch");
  const std::size_t w = geo.camera.width, h = geo.camera.height;
  OracleImage out{Image(w, h), std::vector<float>(w * h), std::vector<float>(w * h), std::vector<float>(w * h)};
  const double step = (geo.far - geo.near) / double(n);
  const Vec3 head_ball = canonical_to_world(SyntheticScene::head_centre, st.head);
  const Vec3 torso_ball = canonical_to_world(SyntheticScene::torso_centre, st.torso);
  const double torso_radius =
      std::sqrt(SyntheticScene::torso_half[0] * SyntheticScene::torso_half[0] +
                SyntheticScene::torso_half[1] * SyntheticScene::torso_half[1] +
                SyntheticScene::torso_half[2] * SyntheticScene::torso_half[2]);
  const bool medium = scene.config.medium_density > 0;
  for (std::size_t py = 0; py < h; ++py)
    for (std::size_t px = 0; px < w; ++px) {
      const Ray ray = generate_ray(geo, px, py);
      const auto hs = detail::sphere_span(ray, head_ball, 0.62);
      const auto ts = detail::sphere_span(ray, torso_ball, torso_radius + 1e-3);
      double tau = 0, tau_h = 0, tau_t = 0, tau_m = 0;
      Rgb acc = {0, 0, 0};
      for (std::size_t i = 0; i < n; ++i) {
        const double t = geo.near + (double(i) + 0.5) * step;
        const bool in_head = t >= hs.first && t <= hs.second, in_torso = t >= ts.first && t <= ts.second;
        if (!medium && !in_head && !in_torso) continue;
        const Vec3 x = ray.at(t);
        RadianceSample a, b;
        double sm = 0;
        if (medium) {
          a = {scene.config.medium_color, scene.medium_density(x)};
        } else {
          if (in_head) {
            const Vec3 xc = world_to_canonical(x, st.head);
            a = scene.head_layer(xc, st.signal);
            if (scene.config.head)
              sm = scene.mouth_layer_density(
                SyntheticScene::ellipsoid_radius(xc, SyntheticScene::mouth_centre, SyntheticScene::mouth_radii), 1.0);
          }
          if (in_torso) b = scene.torso_layer(world_to_canonical(x, st.torso));
        }
        const double sigma = a.density + b.density;
        if (sigma <= 0 && sm <= 0) continue;
        const double T = std::exp(-tau);
        const double alpha = -std::expm1(-sigma * step);
        for (int c = 0; c < 3; ++c) acc[c] += T * alpha * (a.density * a.color[c] + b.density * b.color[c]) / sigma;
        tau += sigma * step;
        tau_h += a.density * step;
        tau_t += b.density * step;
        tau_m += sm * step;
      }
      const double T = std::exp(-tau);
      const std::size_t idx = py * w + px;
      for (int c = 0; c < 3; ++c) out.color.data[idx * 3 + c] = static_cast<float>(acc[c] + T * background.data[idx * 3 + c]);
      out.head_alpha[idx] = static_cast<float>(-std::expm1(-tau_h));
      out.torso_alpha[idx] = static_cast<float>(-std::expm1(-tau_t));
      out.mouth_alpha[idx] = static_cast<float>(-std::expm1(-tau_m));
    }
  return out;
}

inline OracleImage oracle_render(const SyntheticScene& scene, std::size_t frame, std::size_t n) {
  return oracle_render(scene, scene.state(double(frame)), scene.geometry, scene.true_background, n);
}

// Head alpha > 0.5 is labelled head. A pixel is background only while the
// joint foreground alpha stays below background_alpha_max; the soft fringe in
// between goes to whichever layer covers it more.
inline constexpr float background_alpha_max = 0.01f;

inline LabelImage labels_from_alpha(const OracleImage& o) {
  LabelImage l{o.color.width, o.color.height, std::vector<std::uint8_t>(o.color.pixels(), background_label)};
  for (std::size_t i = 0; i < l.data.size(); ++i) {
    const float h = o.head_alpha[i], t = o.torso_alpha[i];
    if (h > 0.5f)
      l.data[i] = head_label;
    else if (1 - (1 - h) * (1 - t) >= background_alpha_max)
      l.data[i] = h >= t ? head_label : torso_label;
  }
  return l;
}

inline Image synthetic_background(std::size_t w, std::size_t h, const std::array<double, 4>& phase) {
  Image bg(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (double(x) + 0.5) / double(w), v = (double(y) + 0.5) / double(h);
      // a soft studio gradient: smooth enough that nearest filling under the
      // always-occluded subject stays close to the truth
      bg.set(x, y,
             {0.32 + 0.06 * u + 0.02 * std::sin(5 * v + phase[0]), 0.42 + 0.04 * std::cos(2 * u + 1.5 * v + phase[1]),
              0.58 + 0.06 * (1 - v) + 0.015 * std::sin(4 * u + phase[2]) * std::cos(2 * v + phase[3])});
    }
  return bg;
}

inline SyntheticScene generate_synthetic_scene(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SyntheticScene scene;
  scene.config = cfg;
  scene.seed = seed;
  Rng rng(seed, 0x5ce);
  constexpr double tau = 2 * std::numbers::pi;
  for (auto& p : scene.signal_phase) p = rng.uniform(0, tau);
  for (auto& p : scene.motion_phase) p = rng.uniform(0, tau);
  for (auto& p : scene.background_phase) p = rng.uniform(0, tau);
  for (auto& e : scene.embed_base) e = static_cast<float>(rng.normal());
  for (auto& e : scene.embed_signal) e = static_cast<float>(rng.normal());

  auto& geo = scene.geometry;
  geo.camera.width = cfg.width;
  geo.camera.height = cfg.height;
  geo.camera.fx = geo.camera.fy = cfg.focal_scale * double(cfg.width);
  geo.camera.cx = 0.5 * double(cfg.width);
  geo.camera.cy = 0.5 * double(cfg.height);
  geo.camera.camera_to_world.translation = {0, 0, cfg.camera_distance};
  geo.near = cfg.near;
  geo.far = cfg.far;
  scene.true_background = quantized(synthetic_background(cfg.width, cfg.height, scene.background_phase));

  Dataset& d = scene.dataset;
  d.geometry = geo;
  d.background = scene.true_background;
  std::vector<double> signals(cfg.frames);
  for (std::size_t f = 0; f < cfg.frames; ++f) {
    const SceneState st = scene.state(double(f));
    signals[f] = st.signal;
    const OracleImage o = oracle_render(scene, st, geo, scene.true_background, cfg.quadrature);
    d.frames.push_back(quantized(o.color));
    d.masks.push_back(labels_from_alpha(o));
    d.poses.push_back(st.head);
  }
  d.audio = scene.track_for(signals);
  d.validate();
  return scene;
}

}  // namespace adnf
