#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "adnf/audio_cond.hpp"
#include "adnf/fields.hpp"
#include "adnf/image.hpp"
#include "adnf/random.hpp"

namespace adnf {

// Pinhole camera looking down -z in its own frame, +y up, image rows growing downwards.
struct Camera {
  double fx = 1, fy = 1, cx = 0.5, cy = 0.5;
  std::size_t width = 1, height = 1;
  Pose camera_to_world{};

  void validate() const {
    require(fx > 0 && fy > 0, "camera: focal lengths must be positive");
    require(width > 0 && height > 0, "camera: empty image size");
    require(cx > 0 && cx < double(width) && cy > 0 && cy < double(height),
            "camera: principal point outside the image");
    camera_to_world.validate();
  }
};

// Camera plus the depth range and bounds rays are marched through.
struct SceneGeometry {
  Camera camera{};
  SceneBox box{};
  double near = 0;
  double far = 0;

  // Defaults derived from the box diagonal.
  static std::pair<double, double> default_bounds(const SceneBox& box) {
    return {0.1 * box.diagonal(), 1.5 * box.diagonal()};
  }
  void validate() const {
    camera.validate();
    require(box.valid(), "scene box: max must exceed min on every axis");
    require(near > 0 && far > near, "ray bounds: need 0 < near < far");
  }
};

struct Ray {
  Vec3 origin{0, 0, 0};
  Vec3 direction{0, 0, -1};
  double near = 0;
  double far = 1;

  Vec3 at(double t) const {
    return {origin[0] + t * direction[0], origin[1] + t * direction[1], origin[2] + t * direction[2]};
  }
};

inline Ray generate_ray(const Camera& cam, std::size_t px, std::size_t py, double near, double far) {
  if (px >= cam.width || py >= cam.height)
    throw range_error("pixel (" + std::to_string(px) + ", " + std::to_string(py) + ") outside " +
                      std::to_string(cam.width) + "x" + std::to_string(cam.height) + " image");
  const Vec3 dc = {(double(px) + 0.5 - cam.cx) / cam.fx, -(double(py) + 0.5 - cam.cy) / cam.fy, -1.0};
  Vec3 d = cam.camera_to_world.rotate(dc);
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  for (auto& v : d) v /= n;
  return {cam.camera_to_world.translation, d, near, far};
}

inline Ray generate_ray(const SceneGeometry& g, std::size_t px, std::size_t py) {
  return generate_ray(g.camera, px, py, g.near, g.far);
}

struct SamplingConfig {
  std::size_t n_coarse = 32;
  std::size_t n_fine = 64;
  bool jitter_inference = false;  // stratified jitter when rendering (training always jitters)
  std::size_t chunk_rays = 256;   // rays per tape; bounds peak memory
};

// One draw per equal-width bin of [near, far]; midpoints when rng is null.
inline std::vector<double> stratified_sample(double near, double far, std::size_t n, Rng* rng) {
  require(n >= 1, "stratified_sample: need at least one sample");
  require(far > near, "stratified_sample: need near < far");
  std::vector<double> t(n);
  const double step = (far - near) / double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng ? rng->uniform() : 0.5;
    t[i] = near + (double(i) + u) * step;
  }
  return t;
}

inline std::vector<double> stratified_sample(const Ray& ray, std::size_t n, Rng* rng) {
  return stratified_sample(ray.near, ray.far, n, rng);
}

// Inverse-transform draws from the piecewise-constant PDF over the coarse bins
// [near, mid_01, mid_12, ..., far], with bin mass proportional to w + 1e-5.
// Draws are i.i.d. uniform with an rng, evenly spaced quantiles without.
inline std::vector<double> fine_depths(std::span<const double> coarse, std::span<const double> weights,
                                       std::size_t n_fine, double near, double far, Rng* rng) {
  require(coarse.size() >= 2, "hierarchical_sample: need at least two coarse depths");
  require(weights.size() == coarse.size(), "hierarchical_sample: one weight per coarse depth");
  const std::size_t n = coarse.size();
  std::vector<double> edges(n + 1);
  edges[0] = near;
  edges[n] = far;
  for (std::size_t i = 1; i < n; ++i) edges[i] = 0.5 * (coarse[i - 1] + coarse[i]);
  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    require(weights[i] >= 0 && std::isfinite(weights[i]), "hierarchical_sample: weights must be finite and >= 0");
    cdf[i + 1] = cdf[i] + weights[i] + 1e-5;
  }
  const double total = cdf[n];
  for (auto& c : cdf) c /= total;
  cdf[n] = 1.0;

  std::vector<double> u(n_fine);
  for (std::size_t j = 0; j < n_fine; ++j) u[j] = rng ? rng->uniform() : (double(j) + 0.5) / double(n_fine);
  std::sort(u.begin(), u.end());
  std::vector<double> out(n_fine);
  std::size_t bin = 0;
  for (std::size_t j = 0; j < n_fine; ++j) {
    while (bin + 1 < n && cdf[bin + 1] <= u[j]) ++bin;
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0 ? std::clamp((u[j] - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    out[j] = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
  }
  return out;
}

// Fine depths merged with the coarse ones, sorted.
inline std::vector<double> hierarchical_sample(std::span<const double> coarse, std::span<const double> weights,
                                               std::size_t n_fine, double near, double far, Rng* rng) {
  std::vector<double> all = fine_depths(coarse, weights, n_fine, near, far, rng);
  all.insert(all.end(), coarse.begin(), coarse.end());
  std::sort(all.begin(), all.end());
  return all;
}

inline std::vector<double> depth_deltas(std::span<const double> depths, double far) {
  std::vector<double> d(depths.size());
  for (std::size_t i = 0; i + 1 < depths.size(); ++i) d[i] = depths[i + 1] - depths[i];
  if (!depths.empty()) d.back() = far - depths.back();
  return d;
}

struct SampleSet {
  std::vector<double> depths;
  std::vector<double> deltas;
  std::vector<RadianceSample> samples;

  static SampleSet along(std::vector<double> depths, double far) {
    SampleSet s;
    s.deltas = depth_deltas(depths, far);
    s.depths = std::move(depths);
    s.samples.resize(s.depths.size());
    return s;
  }

  void validate() const {
    require(depths.size() == deltas.size() && depths.size() == samples.size(),
            "composite: depths, deltas and samples differ in length");
    for (std::size_t i = 1; i < depths.size(); ++i)
      require(depths[i] >= depths[i - 1], "composite: depths are not sorted");
    for (double d : deltas) require(d >= 0, "composite: negative delta");
  }
};

struct CompositeResult {
  Rgb color{0, 0, 0};
  std::vector<double> weights;
  std::vector<double> transmittance;  // T_i before sample i
  double final_transmittance = 1;
  double alpha = 0;  // foreground alpha, sum of weights
};

inline CompositeResult composite(const SampleSet& s, const Rgb& bg) {
  s.validate();
  CompositeResult r;
  const std::size_t n = s.depths.size();
  r.weights.resize(n);
  r.transmittance.resize(n);
  double tau = 0;  // optical depth so far
  for (std::size_t i = 0; i < n; ++i) {
    const double sd = s.samples[i].density * s.deltas[i];
    const double T = std::exp(-tau);
    const double w = T * -std::expm1(-sd);
    r.transmittance[i] = T;
    r.weights[i] = w;
    r.alpha += w;
    for (int c = 0; c < 3; ++c) r.color[c] += w * s.samples[i].color[c];
    tau += sd;
  }
  r.final_transmittance = std::exp(-tau);
  for (int c = 0; c < 3; ++c) r.color[c] += r.final_transmittance * bg[c];
  return r;
}

// Compositing weights [R x S] from densities (R*S values, ray-major) and deltas [R x S].
template <typename T>
DenseArray<T> composite_weights(const DenseArray<T>& density, const DenseArray<T>& deltas,
                                std::vector<double>* final_transmittance = nullptr) {
  const std::size_t rays = deltas.rows(), s = deltas.cols();
  require(density.size() == rays * s, "composite_weights: density count mismatch");
  DenseArray<T> w = DenseArray<T>::matrix(rays, s);
  if (final_transmittance) final_transmittance->assign(rays, 1.0);
  for (std::size_t r = 0; r < rays; ++r) {
    double tau = 0;
    for (std::size_t i = 0; i < s; ++i) {
      const double sd = double(density[r * s + i]) * double(deltas(r, i));
      w(r, i) = static_cast<T>(std::exp(-tau) * -std::expm1(-sd));
      tau += sd;
    }
    if (final_transmittance) (*final_transmittance)[r] = std::exp(-tau);
  }
  return w;
}

// Fused quadrature for R rays of S samples each.
//   density [R*S x 1], color [R*S x 3] (ray-major), deltas [R x S], bg [R x 3]
// Returns pixel colours [R x 3]. Backward:
//   dC/dc_k = w_k
//   dC/dsigma_k = delta_k * (T_{k+1} c_k - (sum_{i>k} w_i c_i + T_S bg))
template <typename T>
Var composite_rays(Tape<T>& tape, Var density, Var color, DenseArray<T> deltas, DenseArray<T> bg) {
  const std::size_t rays = deltas.rows(), s = deltas.cols();
  require(bg.rows() == rays && bg.cols() == 3, "composite_rays: background must be [rays x 3]");
  require(tape.value(density).size() == rays * s && tape.value(color).rows() == rays * s &&
              tape.value(color).cols() == 3,
          "composite_rays: sample arrays do not match deltas");
  auto dl = std::make_shared<const DenseArray<T>>(std::move(deltas));
  auto bgp = std::make_shared<const DenseArray<T>>(std::move(bg));
  return tape.record(
      {density, color},
      [dl, bgp, rays, s](typename Tape<T>::Inputs in) {
        const auto& sig = *in[0];
        const auto& col = *in[1];
        DenseArray<T> out = DenseArray<T>::matrix(rays, 3);
        for (std::size_t r = 0; r < rays; ++r) {
          double acc[3] = {0, 0, 0}, tau = 0;
          for (std::size_t i = 0; i < s; ++i) {
            const std::size_t k = r * s + i;
            const double sd = double(sig[k]) * double((*dl)(r, i));
            const double w = std::exp(-tau) * -std::expm1(-sd);
            for (int c = 0; c < 3; ++c) acc[c] += w * double(col(k, c));
            tau += sd;
          }
          const double tf = std::exp(-tau);
          for (int c = 0; c < 3; ++c) out(r, c) = static_cast<T>(acc[c] + tf * double((*bgp)(r, c)));
        }
        return out;
      },
      [dl, bgp, rays, s](typename Tape<T>::Inputs in, const DenseArray<T>& out, const DenseArray<T>& g,
                         typename Tape<T>::GradInputs gin) {
        const auto& sig = *in[0];
        const auto& col = *in[1];
        std::vector<double> w(s), t_after(s);
        for (std::size_t r = 0; r < rays; ++r) {
          double tau = 0;
          for (std::size_t i = 0; i < s; ++i) {
            const std::size_t k = r * s + i;
            const double sd = double(sig[k]) * double((*dl)(r, i));
            w[i] = std::exp(-tau) * -std::expm1(-sd);
            tau += sd;
            t_after[i] = std::exp(-tau);
          }
          const double gr[3] = {double(g(r, 0)), double(g(r, 1)), double(g(r, 2))};
          // g . (C - prefix_k) is g . (sum_{i>k} w_i c_i + T_S bg)
          double g_rest = gr[0] * double(out(r, 0)) + gr[1] * double(out(r, 1)) + gr[2] * double(out(r, 2));
          for (std::size_t i = 0; i < s; ++i) {
            const std::size_t k = r * s + i;
            const double gc = gr[0] * double(col(k, 0)) + gr[1] * double(col(k, 1)) + gr[2] * double(col(k, 2));
            g_rest -= w[i] * gc;
            if (gin[0]) (*gin[0])[k] += static_cast<T>(double((*dl)(r, i)) * (t_after[i] * gc - g_rest));
            if (gin[1])
              for (int c = 0; c < 3; ++c) (*gin[1])(k, c) += static_cast<T>(w[i] * gr[c]);
          }
        }
      });
}

// ---- field rendering --------------------------------------------------------

template <typename T>
struct FieldModel {
  FieldConfig config;
  ParameterSet<T> params;
};

// Per-frame inputs for one render: head pose and each field's condition code.
template <typename T>
struct FrameCondition {
  Pose pose{};
  std::vector<T> head_code;
  std::vector<T> torso_code;
};

// Condition code of a field for one frame of a track (window + temporal filter).
template <typename T>
std::vector<T> field_code(const FieldModel<T>& model, const AudioTrack& track, std::size_t frame) {
  Tape<T> tape;
  BoundParameters<T> p(tape, model.params, false);
  const std::size_t frames[1] = {frame};
  const Var code = condition_codes(tape, p, model.config.audio_prefix(), model.config.audio, track, frames);
  const auto v = tape.value(code).values();
  return {v.begin(), v.end()};
}

// Code from an explicit 16x29 window (used for every filter tap).
template <typename T>
std::vector<T> field_code(const FieldModel<T>& model, const AudioWindow& window) {
  Tape<T> tape;
  BoundParameters<T> p(tape, model.params, false);
  const Var code = condition_code_from_window(tape, p, model.config.audio_prefix(), model.config.audio, window);
  const auto v = tape.value(code).values();
  return {v.begin(), v.end()};
}

template <typename T>
FrameCondition<T> frame_condition(const FieldModel<T>& head, const FieldModel<T>* torso, const AudioTrack& track,
                                  std::size_t frame, const Pose& pose) {
  FrameCondition<T> c;
  c.pose = pose;
  c.head_code = field_code(head, track, frame);
  if (torso) c.torso_code = field_code(*torso, track, frame);
  return c;
}

// Rays marched by one field network, each tied to a row of the per-frame
// condition arrays (codes, poses).
template <typename T>
struct RayPass {
  std::vector<Ray> rays;
  std::vector<std::int64_t> rows;
  std::vector<Pose> row_poses;  // one per condition row
};

template <typename T>
FieldBatch<T> sample_batch(const FieldConfig& cfg, const RayPass<T>& pass, const std::vector<double>& depths,
                           std::size_t per_ray) {
  const std::size_t rays = pass.rays.size();
  FieldBatch<T> b;
  b.positions = DenseArray<T>::matrix(rays * per_ray, 3);
  b.directions = DenseArray<T>::matrix(rays * per_ray, 3);
  b.condition_row.resize(rays * per_ray);
  for (std::size_t r = 0; r < rays; ++r) {
    const Ray& ray = pass.rays[r];
    const Pose& pose = pass.row_poses[static_cast<std::size_t>(pass.rows[r])];
    const bool canonical = cfg.kind == FieldKind::head;
    const Vec3 d = canonical ? pose.rotate_inverse(ray.direction) : ray.direction;
    for (std::size_t i = 0; i < per_ray; ++i) {
      const std::size_t k = r * per_ray + i;
      const Vec3 xw = ray.at(depths[k]);
      const Vec3 x = canonical ? world_to_canonical(xw, pose) : xw;
      for (int c = 0; c < 3; ++c) {
        b.positions(k, c) = static_cast<T>(x[c]);
        b.directions(k, c) = static_cast<T>(d[c]);
      }
      b.condition_row[k] = pass.rows[r];
    }
  }
  return b;
}

template <typename T>
struct PassOutput {
  Var coarse;               // [R x 3]
  std::optional<Var> fine;  // [R x 3] when n_fine > 0
  std::vector<double> final_transmittance;  // of the last network run
  Var result() const { return fine ? *fine : coarse; }
};

// Coarse then fine march of one field over `pass`, composited over `bg` [R x 3].
// rngs: per-ray streams for jittered sampling, or null for deterministic midpoints.
template <typename T>
PassOutput<T> render_pass(Tape<T>& tape, const BoundParameters<T>& p, const FieldConfig& cfg, const SceneBox& box,
                          const RayPass<T>& pass, Var codes, const DenseArray<T>& bg, const SamplingConfig& sampling,
                          std::vector<Rng>* rngs, Rng* noise_rng = nullptr) {
  const std::size_t rays = pass.rays.size();
  require(pass.rows.size() == rays, "render_pass: one condition row per ray");
  require(!rngs || rngs->size() == rays, "render_pass: one rng per ray");
  require(sampling.n_coarse >= 2 || sampling.n_fine == 0, "render_pass: hierarchical sampling needs >= 2 coarse samples");
  std::optional<Var> poses;
  if (cfg.pose_conditioned()) {
    DenseArray<T> pd = DenseArray<T>::matrix(pass.row_poses.size(), pose_descriptor_size);
    for (std::size_t f = 0; f < pass.row_poses.size(); ++f) {
      const auto d = pose_descriptor<T>(pass.row_poses[f], box);
      std::copy(d.begin(), d.end(), pd.row(f).begin());
    }
    poses = tape.constant(std::move(pd));
  }

  auto run = [&](bool fine, const std::vector<double>& depths, std::size_t per_ray) {
    FieldBatch<T> batch = sample_batch(cfg, pass, depths, per_ray);
    if (noise_rng && cfg.density_noise_std > 0) {
      batch.density_noise = DenseArray<T>::matrix(rays * per_ray, 1);
      for (auto& v : batch.density_noise.values()) v = static_cast<T>(cfg.density_noise_std * noise_rng->normal());
    }
    DenseArray<T> deltas = DenseArray<T>::matrix(rays, per_ray);
    for (std::size_t r = 0; r < rays; ++r) {
      const auto d = depth_deltas(std::span<const double>(depths.data() + r * per_ray, per_ray), pass.rays[r].far);
      for (std::size_t i = 0; i < per_ray; ++i) deltas(r, i) = static_cast<T>(d[i]);
    }
    const FieldOutput out = eval_field(tape, p, cfg.network_prefix(fine), cfg, box, batch, codes, poses);
    std::vector<double> tf;
    DenseArray<T> w = composite_weights(tape.value(out.density), deltas, &tf);
    Var color = composite_rays(tape, out.density, out.color, std::move(deltas), bg);
    return std::tuple{color, std::move(w), std::move(tf)};
  };

  std::vector<double> coarse(rays * sampling.n_coarse);
  for (std::size_t r = 0; r < rays; ++r) {
    const auto t = stratified_sample(pass.rays[r], sampling.n_coarse, rngs ? &(*rngs)[r] : nullptr);
    std::copy(t.begin(), t.end(), coarse.begin() + static_cast<std::ptrdiff_t>(r * sampling.n_coarse));
  }
  auto [coarse_color, coarse_w, coarse_tf] = run(false, coarse, sampling.n_coarse);
  PassOutput<T> result{coarse_color, std::nullopt, std::move(coarse_tf)};
  if (sampling.n_fine == 0) return result;

  const std::size_t per_ray = sampling.n_coarse + sampling.n_fine;
  std::vector<double> merged(rays * per_ray);
  std::vector<double> w(sampling.n_coarse);
  for (std::size_t r = 0; r < rays; ++r) {
    for (std::size_t i = 0; i < sampling.n_coarse; ++i) w[i] = double(coarse_w(r, i));
    const auto t = hierarchical_sample(std::span<const double>(coarse.data() + r * sampling.n_coarse, sampling.n_coarse),
                                       w, sampling.n_fine, pass.rays[r].near, pass.rays[r].far,
                                       rngs ? &(*rngs)[r] : nullptr);
    std::copy(t.begin(), t.end(), merged.begin() + static_cast<std::ptrdiff_t>(r * per_ray));
  }
  auto [fine_color, fine_w, fine_tf] = run(true, merged, per_ray);
  result.fine = fine_color;
  result.final_transmittance = std::move(fine_tf);
  return result;
}

template <typename T>
Var code_rows(Tape<T>& tape, const std::vector<std::vector<T>>& codes) {
  require(!codes.empty(), "code_rows: no codes");
  DenseArray<T> a = DenseArray<T>::matrix(codes.size(), codes.front().size());
  for (std::size_t f = 0; f < codes.size(); ++f) {
    require(codes[f].size() == a.cols(), "code_rows: ragged codes");
    std::copy(codes[f].begin(), codes[f].end(), a.row(f).begin());
  }
  return tape.constant(std::move(a));
}

struct RayColors {
  std::vector<Rgb> color;
  std::vector<double> alpha;  // combined foreground alpha, 1 - T_head * T_torso
};

// Layered inference for rays of one frame: head over the per-ray background,
// then the torso over the head result. ray_ids key the jitter streams.
template <typename T>
RayColors render_rays(const FieldModel<T>& head, const FieldModel<T>* torso, const SceneBox& box,
                      std::span<const Ray> rays, std::span<const std::uint64_t> ray_ids,
                      const FrameCondition<T>& cond, std::span<const Rgb> bg, const SamplingConfig& sampling,
                      std::uint64_t seed) {
  require(rays.size() == bg.size() && rays.size() == ray_ids.size(), "render_rays: one background per ray");
  require(head.config.kind == FieldKind::head, "render_rays: first model must be a head field");
  require(!torso || torso->config.kind == FieldKind::torso, "render_rays: second model must be a torso field");
  cond.pose.validate();
  RayColors out;
  out.color.resize(rays.size());
  out.alpha.resize(rays.size());
  const std::size_t chunk = std::max<std::size_t>(sampling.chunk_rays, 1);
  for (std::size_t begin = 0; begin < rays.size(); begin += chunk) {
    const std::size_t end = std::min(rays.size(), begin + chunk);
    RayPass<T> pass;
    pass.rays.assign(rays.begin() + begin, rays.begin() + end);
    pass.rows.assign(end - begin, 0);
    pass.row_poses = {cond.pose};
    std::vector<Rng> rngs;
    if (sampling.jitter_inference)
      for (std::size_t r = begin; r < end; ++r) rngs.emplace_back(seed, ray_ids[r]);
    auto* rng_ptr = sampling.jitter_inference ? &rngs : nullptr;

    DenseArray<T> layer_bg = DenseArray<T>::matrix(end - begin, 3);
    for (std::size_t r = begin; r < end; ++r)
      for (int c = 0; c < 3; ++c) layer_bg(r - begin, c) = static_cast<T>(bg[r][c]);
    std::vector<double> tf(end - begin, 1.0);
    {
      Tape<T> tape;
      BoundParameters<T> p(tape, head.params, false);
      const auto res = render_pass(tape, p, head.config, box, pass, code_rows(tape, {cond.head_code}), layer_bg,
                                   sampling, rng_ptr);
      layer_bg = tape.value(res.result());
      tf = res.final_transmittance;
    }
    if (torso) {
      if (sampling.jitter_inference) {
        rngs.clear();
        for (std::size_t r = begin; r < end; ++r) rngs.emplace_back(seed ^ 0x7f4a7c15ULL, ray_ids[r]);
      }
      Tape<T> tape;
      BoundParameters<T> p(tape, torso->params, false);
      const auto res = render_pass(tape, p, torso->config, box, pass, code_rows(tape, {cond.torso_code}), layer_bg,
                                   sampling, rng_ptr);
      layer_bg = tape.value(res.result());
      for (std::size_t r = 0; r < tf.size(); ++r) tf[r] *= res.final_transmittance[r];
    }
    for (std::size_t r = begin; r < end; ++r) {
      for (int c = 0; c < 3; ++c) out.color[r][c] = double(layer_bg(r - begin, c));
      out.alpha[r] = 1.0 - tf[r - begin];
    }
  }
  return out;
}

template <typename T>
Rgb render_pixel(const FieldModel<T>& head, const FieldModel<T>* torso, const SceneGeometry& geo, std::size_t px,
                 std::size_t py, const FrameCondition<T>& cond, const Rgb& bg, const SamplingConfig& sampling,
                 std::uint64_t seed) {
  const Ray ray = generate_ray(geo, px, py);
  const std::uint64_t id = py * geo.camera.width + px;
  return render_rays<T>(head, torso, geo.box, std::span(&ray, 1), std::span(&id, 1), cond, std::span(&bg, 1),
                        sampling, seed)
      .color[0];
}

struct RenderedImage {
  Image color;
  std::vector<float> alpha;  // per pixel foreground alpha
};

template <typename T>
RenderedImage render_image(const FieldModel<T>& head, const FieldModel<T>* torso, const SceneGeometry& geo,
                           const FrameCondition<T>& cond, const Image& background, const SamplingConfig& sampling,
                           std::uint64_t seed) {
  const Camera& cam = geo.camera;
  require(background.width == cam.width && background.height == cam.height,
          "render_image: background is " + std::to_string(background.width) + "x" +
              std::to_string(background.height) + ", camera is " + std::to_string(cam.width) + "x" +
              std::to_string(cam.height));
  const std::size_t n = cam.width * cam.height;
  std::vector<Ray> rays(n);
  std::vector<std::uint64_t> ids(n);
  std::vector<Rgb> bg(n);
  for (std::size_t y = 0; y < cam.height; ++y)
    for (std::size_t x = 0; x < cam.width; ++x) {
      const std::size_t i = y * cam.width + x;
      rays[i] = generate_ray(geo, x, y);
      ids[i] = i;
      bg[i] = background.pixel(x, y);
    }
  const auto res = render_rays<T>(head, torso, geo.box, rays, ids, cond, bg, sampling, seed);
  RenderedImage out{Image(cam.width, cam.height), std::vector<float>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) out.color.data[i * 3 + c] = static_cast<float>(res.color[i][c]);
    out.alpha[i] = static_cast<float>(res.alpha[i]);
  }
  return out;
}

// Two-pass march of an arbitrary field callable f(x, d) -> RadianceSample over
// one ray, using the same samplers and quadrature as the learned fields.
template <typename Field>
CompositeResult march(Field&& f, const Ray& ray, const Rgb& bg, const SamplingConfig& sampling, Rng* rng) {
  auto evaluate = [&](std::vector<double> depths) {
    SampleSet s = SampleSet::along(std::move(depths), ray.far);
    for (std::size_t i = 0; i < s.depths.size(); ++i) s.samples[i] = f(ray.at(s.depths[i]), ray.direction);
    return s;
  };
  const SampleSet coarse = evaluate(stratified_sample(ray, sampling.n_coarse, rng));
  const CompositeResult c = composite(coarse, bg);
  if (sampling.n_fine == 0) return c;
  return composite(evaluate(hierarchical_sample(coarse.depths, c.weights, sampling.n_fine, ray.near, ray.far, rng)),
                   bg);
}

}  // namespace adnf
