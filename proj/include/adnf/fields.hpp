#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adnf/audio_cond.hpp"
#include "adnf/encodings.hpp"
#include "adnf/ndops/bound_parameters.hpp"
#include "adnf/ndops/parameters.hpp"
#include "adnf/ndops/tape.hpp"

namespace adnf {

using Vec3 = std::array<double, 3>;
using Rgb = std::array<double, 3>;

// Rigid head pose. Maps canonical coordinates to world: x_w = R x_c + t.
struct Pose {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Vec3 translation{0, 0, 0};

  static Pose identity() { return {}; }

  // R = Rz(z) * Ry(y) * Rx(x): rotate about world x, then y, then z.
  static Pose from_euler_xyz(const Vec3& angles, const Vec3& t) {
    const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
    const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
    const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
    Pose p;
    p.rotation = {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
                  sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
                  -sy,     cy * sx,                cy * cx};
    p.translation = t;
    return p;
  }

  // Inverse of from_euler_xyz for |y| < pi/2.
  Vec3 euler_xyz() const {
    const auto& r = rotation;
    const double y = std::asin(std::clamp(-r[6], -1.0, 1.0));
    const double x = std::atan2(r[7], r[8]);
    const double z = std::atan2(r[3], r[0]);
    return {x, y, z};
  }

  double r(int i, int j) const { return rotation[static_cast<std::size_t>(3 * i + j)]; }

  // Returns an empty string when R is a proper rotation within `tol`.
  std::string rotation_problem(double tol = 1e-5) const {
    for (double v : rotation)
      if (!std::isfinite(v)) return "non-finite rotation entry";
    for (double v : translation)
      if (!std::isfinite(v)) return "non-finite translation entry";
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += r(k, i) * r(k, j);
        if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return "R^T R deviates from identity";
      }
    if (std::abs(determinant() - 1.0) > tol) return "det(R) = " + std::to_string(determinant()) + " (expected +1)";
    return {};
  }

  void validate() const {
    if (auto problem = rotation_problem(); !problem.empty()) throw contract_error("invalid pose: " + problem);
  }

  double determinant() const {
    return r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1)) - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0)) +
           r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
  }

  Vec3 rotate(const Vec3& v) const {
    return {r(0, 0) * v[0] + r(0, 1) * v[1] + r(0, 2) * v[2], r(1, 0) * v[0] + r(1, 1) * v[1] + r(1, 2) * v[2],
            r(2, 0) * v[0] + r(2, 1) * v[1] + r(2, 2) * v[2]};
  }
  Vec3 rotate_inverse(const Vec3& v) const {
    return {r(0, 0) * v[0] + r(1, 0) * v[1] + r(2, 0) * v[2], r(0, 1) * v[0] + r(1, 1) * v[1] + r(2, 1) * v[2],
            r(0, 2) * v[0] + r(1, 2) * v[1] + r(2, 2) * v[2]};
  }
};

inline Vec3 canonical_to_world(const Vec3& x, const Pose& pose) {
  const Vec3 rx = pose.rotate(x);
  return {rx[0] + pose.translation[0], rx[1] + pose.translation[1], rx[2] + pose.translation[2]};
}

// R^T (x - t).
inline Vec3 world_to_canonical(const Vec3& x, const Pose& pose) {
  return pose.rotate_inverse({x[0] - pose.translation[0], x[1] - pose.translation[1], x[2] - pose.translation[2]});
}

inline constexpr std::size_t pose_descriptor_size = 12;

// Flattened R (row-major) then t / box diagonal.
template <typename T>
std::array<T, pose_descriptor_size> pose_descriptor(const Pose& pose, const SceneBox& box) {
  std::array<T, pose_descriptor_size> d{};
  for (std::size_t i = 0; i < 9; ++i) d[i] = static_cast<T>(pose.rotation[i]);
  const double diag = box.diagonal();
  for (std::size_t i = 0; i < 3; ++i) d[9 + i] = static_cast<T>(pose.translation[i] / diag);
  return d;
}

struct RadianceSample {
  Rgb color{0, 0, 0};
  double density = 0;
};

enum class FieldKind { head, torso };

inline const char* to_string(FieldKind k) { return k == FieldKind::head ? "head" : "torso"; }

struct FieldConfig {
  FieldKind kind = FieldKind::head;
  std::size_t width = 128;
  std::size_t depth = 8;
  std::size_t skip_layer = 5;  // this layer's input re-concatenates the encoded position
  EncodingConfig encoding{};
  AudioConfig audio{};
  double density_bias_init = 0.0;
  double density_noise_std = 0.0;  // training-time noise on the density pre-activation

  bool pose_conditioned() const { return kind == FieldKind::torso; }
  std::size_t position_features() const { return encoded_size(3, encoding.position_frequencies, encoding.include_input); }
  std::size_t direction_features() const {
    return encoded_size(3, encoding.direction_frequencies, encoding.include_input);
  }
  std::size_t color_hidden() const { return std::max<std::size_t>(width / 2, 1); }
  std::string prefix() const { return std::string(to_string(kind)) + "/"; }
  std::string network_prefix(bool fine) const { return prefix() + (fine ? "fine/" : "coarse/"); }
  std::string audio_prefix() const { return prefix() + "audio/"; }
};

// One MLP (coarse or fine) of a field under `prefix`.
template <typename T>
void init_field_network(ParameterSet<T>& params, const std::string& prefix, const FieldConfig& cfg, Rng& rng) {
  require(cfg.depth >= 1 && cfg.width >= 1, "field config: depth and width must be positive");
  const std::size_t px = cfg.position_features(), pd = cfg.direction_features(), w = cfg.width;
  const std::size_t first_in = px + cfg.audio.code_dim + (cfg.pose_conditioned() ? pose_descriptor_size : 0);
  params.add(prefix + "l0.wx", glorot_uniform<T>(first_in, w, rng).reshaped({first_in, w}));
  // split the first-layer weight by input block: [enc_x | code | pose]
  DenseArray<T>& full = params.at(prefix + "l0.wx");
  DenseArray<T> wx = DenseArray<T>::matrix(px, w), wa = DenseArray<T>::matrix(cfg.audio.code_dim, w);
  DenseArray<T> wp = DenseArray<T>::matrix(pose_descriptor_size, w);
  for (std::size_t r = 0; r < first_in; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      if (r < px)
        wx(r, c) = full(r, c);
      else if (r < px + cfg.audio.code_dim)
        wa(r - px, c) = full(r, c);
      else
        wp(r - px - cfg.audio.code_dim, c) = full(r, c);
    }
  full = std::move(wx);
  params.add(prefix + "l0.wa", std::move(wa));
  if (cfg.pose_conditioned()) params.add(prefix + "l0.wp", std::move(wp));
  params.add(prefix + "l0.b", DenseArray<T>({w}));
  for (std::size_t l = 1; l < cfg.depth; ++l) {
    const std::size_t in = w + (l == cfg.skip_layer ? px : 0);
    params.add(prefix + "l" + std::to_string(l) + ".w", glorot_uniform<T>(in, w, rng));
    params.add(prefix + "l" + std::to_string(l) + ".b", DenseArray<T>({w}));
  }
  params.add(prefix + "sigma.w", glorot_uniform<T>(w, 1, rng));
  params.add(prefix + "sigma.b", DenseArray<T>({1}, static_cast<T>(cfg.density_bias_init)));
  params.add(prefix + "feature.w", glorot_uniform<T>(w, w, rng));
  params.add(prefix + "feature.b", DenseArray<T>({w}));
  const std::size_t h = cfg.color_hidden();
  DenseArray<T> both = glorot_uniform<T>(w + pd, h, rng);
  DenseArray<T> wf = DenseArray<T>::matrix(w, h), wd = DenseArray<T>::matrix(pd, h);
  for (std::size_t r = 0; r < w + pd; ++r)
    for (std::size_t c = 0; c < h; ++c) (r < w ? wf(r, c) : wd(r - w, c)) = both(r, c);
  params.add(prefix + "color0.wf", std::move(wf));
  params.add(prefix + "color0.wd", std::move(wd));
  params.add(prefix + "color0.b", DenseArray<T>({h}));
  params.add(prefix + "color1.w", glorot_uniform<T>(h, 3, rng));
  params.add(prefix + "color1.b", DenseArray<T>({3}));
}

// Coarse network, fine network and the shared audio conditioning of one field.
template <typename T>
ParameterSet<T> init_field_params(const FieldConfig& cfg, std::uint64_t seed) {
  ParameterSet<T> params;
  Rng rng(seed, cfg.kind == FieldKind::head ? 1 : 2);
  init_field_network(params, cfg.network_prefix(false), cfg, rng);
  init_field_network(params, cfg.network_prefix(true), cfg, rng);
  init_audio_params(params, cfg.audio_prefix(), cfg.audio, rng);
  return params;
}

// Forces density exactly zero in both networks (softplus underflows to 0).
template <typename T>
void make_transparent(ParameterSet<T>& params, const FieldConfig& cfg) {
  for (bool fine : {false, true}) {
    params.at(cfg.network_prefix(fine) + "sigma.w").fill(T(0));
    params.at(cfg.network_prefix(fine) + "sigma.b").fill(T(-1000));
  }
}

// Sample points for one network evaluation. Positions are in the field's own
// frame (canonical for the head field, world for the torso field).
template <typename T>
struct FieldBatch {
  DenseArray<T> positions;                  // [N x 3]
  DenseArray<T> directions;                 // [N x 3], unit
  std::vector<std::int64_t> condition_row;  // per sample: row of the per-frame code / pose arrays
  DenseArray<T> density_noise;              // optional [N x 1]
};

struct FieldOutput {
  Var density;  // [N x 1], softplus
  Var color;    // [N x 3], sigmoid
};

template <typename T>
DenseArray<T> encode_positions(const DenseArray<T>& positions, const SceneBox& box, const EncodingConfig& enc) {
  DenseArray<T> normalized = positions;
  for (std::size_t r = 0; r < normalized.rows(); ++r) {
    auto row = normalized.row(r);
    const auto n = box.normalize<T>(std::span<const T, 3>(row.data(), 3));
    std::copy(n.begin(), n.end(), row.begin());
  }
  return positional_encode_rows(normalized, enc.position_frequencies, enc.include_input);
}

// Batched evaluation of one field network.
//   codes: [F x code_dim] per-frame condition codes
//   poses: [F x 12] per-frame pose descriptors (torso field only)
// Density is computed from (x, code, pose) alone; the view direction only
// enters the colour branch.
template <typename T>
FieldOutput eval_field(Tape<T>& tape, const BoundParameters<T>& p, const std::string& prefix, const FieldConfig& cfg,
                       const SceneBox& box, const FieldBatch<T>& batch, Var codes, std::optional<Var> poses = {}) {
  const std::size_t n = batch.positions.rows();
  require(batch.positions.cols() == 3 && batch.directions.rows() == n && batch.directions.cols() == 3 &&
              batch.condition_row.size() == n,
          "eval_field: inconsistent batch shapes");
  require(batch.positions.all_finite() && batch.directions.all_finite(), "eval_field: non-finite sample input");
  require(tape.value(codes).cols() == cfg.audio.code_dim, "eval_field: condition code width mismatch");
  require(cfg.pose_conditioned() == poses.has_value(), "eval_field: pose descriptor required iff torso field");

  Var enc_x = tape.constant(encode_positions(batch.positions, box, cfg.encoding));
  Var enc_d = tape.constant(
      positional_encode_rows(batch.directions, cfg.encoding.direction_frequencies, cfg.encoding.include_input));

  // First layer on [enc_x | code | pose]: the per-frame blocks are projected
  // once per frame and gathered to samples.
  Var per_frame = tape.matmul(codes, p[prefix + "l0.wa"]);
  if (poses) per_frame = tape.add(per_frame, tape.matmul(*poses, p[prefix + "l0.wp"]));
  Var h = tape.affine(enc_x, p[prefix + "l0.wx"], p[prefix + "l0.b"]);
  h = tape.relu(tape.add(h, tape.gather_rows(per_frame, batch.condition_row)));
  for (std::size_t l = 1; l < cfg.depth; ++l) {
    const std::string n_l = prefix + "l" + std::to_string(l);
    Var in = l == cfg.skip_layer ? tape.concat({h, enc_x}) : h;
    h = tape.relu(tape.affine(in, p[n_l + ".w"], p[n_l + ".b"]));
  }
  Var raw_density = tape.affine(h, p[prefix + "sigma.w"], p[prefix + "sigma.b"]);
  if (!batch.density_noise.empty()) raw_density = tape.add(raw_density, tape.constant(batch.density_noise));
  Var density = tape.softplus(raw_density);

  Var feature = tape.affine(h, p[prefix + "feature.w"], p[prefix + "feature.b"]);
  Var c = tape.add(tape.matmul(feature, p[prefix + "color0.wf"]),
                   tape.affine(enc_d, p[prefix + "color0.wd"], p[prefix + "color0.b"]));
  c = tape.relu(c);
  Var color = tape.sigmoid(tape.affine(c, p[prefix + "color1.w"], p[prefix + "color1.b"]));
  return {density, color};
}

namespace detail {

template <typename T>
RadianceSample eval_single(const ParameterSet<T>& params, const FieldConfig& cfg, const SceneBox& box, const Vec3& x,
                           const Vec3& d, std::span<const T> code, const Pose* pose, bool fine) {
  for (double v : x) require(std::isfinite(v), "field evaluation: non-finite position");
  for (double v : d) require(std::isfinite(v), "field evaluation: non-finite direction");
  for (T v : code) require(std::isfinite(static_cast<double>(v)), "field evaluation: non-finite condition code");
  const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  require(std::abs(norm - 1.0) <= 1e-4, "field evaluation: direction is not unit length");
  require(code.size() == cfg.audio.code_dim, "field evaluation: condition code width mismatch");

  Tape<T> tape;
  BoundParameters<T> p(tape, params, false);
  FieldBatch<T> batch{DenseArray<T>({1, 3}, std::vector<T>{T(x[0]), T(x[1]), T(x[2])}),
                      DenseArray<T>({1, 3}, std::vector<T>{T(d[0]), T(d[1]), T(d[2])}),
                      {0},
                      {}};
  Var codes = tape.constant(DenseArray<T>({1, code.size()}, std::vector<T>(code.begin(), code.end())));
  std::optional<Var> poses;
  if (pose) {
    pose->validate();
    const auto desc = pose_descriptor<T>(*pose, box);
    poses = tape.constant(DenseArray<T>({1, pose_descriptor_size}, std::vector<T>(desc.begin(), desc.end())));
  }
  const auto out = eval_field(tape, p, cfg.network_prefix(fine), cfg, box, batch, codes, poses);
  RadianceSample s;
  s.density = static_cast<double>(tape.value(out.density)[0]);
  for (int i = 0; i < 3; ++i) s.color[static_cast<std::size_t>(i)] = static_cast<double>(tape.value(out.color)[i]);
  return s;
}

}  // namespace detail

// Head field at a canonical-space point.
template <typename T>
RadianceSample eval_head_field(const ParameterSet<T>& params, const FieldConfig& cfg, const SceneBox& box,
                               const Vec3& x_canonical, const Vec3& d, std::span<const T> code, bool fine = true) {
  require(cfg.kind == FieldKind::head, "eval_head_field: config is not a head field");
  return detail::eval_single(params, cfg, box, x_canonical, d, code, nullptr, fine);
}

// Torso field at an untransformed world point, conditioned on the head pose.
template <typename T>
RadianceSample eval_torso_field(const ParameterSet<T>& params, const FieldConfig& cfg, const SceneBox& box,
                                const Vec3& x_world, const Vec3& d, std::span<const T> code, const Pose& pose,
                                bool fine = true) {
  require(cfg.kind == FieldKind::torso, "eval_torso_field: config is not a torso field");
  return detail::eval_single(params, cfg, box, x_world, d, code, &pose, fine);
}

}  // namespace adnf
