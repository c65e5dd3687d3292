#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "adnf/ndops/bound_parameters.hpp"
#include "adnf/ndops/parameters.hpp"
#include "adnf/ndops/tape.hpp"

namespace adnf {

inline constexpr std::size_t audio_feature_dim = 29;
inline constexpr std::size_t audio_window_rows = 16;
// Rows frame-8 .. frame+7 make up a window.
inline constexpr std::ptrdiff_t audio_window_past = 8;

// One 29-d speech feature row per video frame.
struct AudioTrack {
  DenseArray<float> features;  // N x 29
  float frame_rate = 25.0f;

  std::size_t frames() const { return features.rows(); }

  void validate() const {
    if (features.rank() != 2 || features.cols() != audio_feature_dim)
      throw load_error("audio track: expected N x 29 features, got " + shape_string(features.shape()));
    if (features.rows() < 1) throw load_error("audio track: no frames");
    if (!features.all_finite()) throw load_error("audio track: non-finite feature value");
    if (!(frame_rate > 0.0f)) throw load_error("audio track: frame rate must be positive");
  }
};

struct AudioWindow {
  DenseArray<float> rows;  // 16 x 29
};

inline std::array<std::size_t, audio_window_rows> window_frame_indices(std::size_t frames, std::size_t center) {
  std::array<std::size_t, audio_window_rows> idx{};
  const auto last = static_cast<std::ptrdiff_t>(frames) - 1;
  for (std::size_t r = 0; r < audio_window_rows; ++r) {
    const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(center) - audio_window_past + static_cast<std::ptrdiff_t>(r);
    idx[r] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
  }
  return idx;
}

// Window centred on `frame_index`; rows outside the track repeat the edge row.
inline AudioWindow extract_window(const AudioTrack& track, std::size_t frame_index) {
  if (frame_index >= track.frames())
    throw range_error("extract_window: frame " + std::to_string(frame_index) + " outside track of " +
                      std::to_string(track.frames()) + " frames");
  AudioWindow w{DenseArray<float>::matrix(audio_window_rows, audio_feature_dim)};
  const auto idx = window_frame_indices(track.frames(), frame_index);
  for (std::size_t r = 0; r < audio_window_rows; ++r)
    std::copy_n(track.features.row(idx[r]).data(), audio_feature_dim, w.rows.row(r).data());
  return w;
}

struct AudioConfig {
  std::size_t code_dim = 64;
  std::array<std::size_t, 4> channels{32, 32, 64, 64};
  std::size_t filter_radius = 4;  // 2K+1 codes enter the temporal filter
  std::size_t filter_hidden = 16;

  std::size_t filter_span() const { return 2 * filter_radius + 1; }
};

template <typename T>
void init_audio_params(ParameterSet<T>& params, const std::string& prefix, const AudioConfig& cfg, Rng& rng) {
  std::size_t in = audio_feature_dim;
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    params.add(prefix + "enc" + std::to_string(l) + ".w", glorot_uniform<T>(3 * in, cfg.channels[l], rng));
    params.add(prefix + "enc" + std::to_string(l) + ".b", DenseArray<T>({cfg.channels[l]}));
    in = cfg.channels[l];
  }
  params.add(prefix + "enc_out.w", glorot_uniform<T>(in, cfg.code_dim, rng));
  params.add(prefix + "enc_out.b", DenseArray<T>({cfg.code_dim}));
  params.add(prefix + "att0.w", glorot_uniform<T>(3 * cfg.code_dim, cfg.filter_hidden, rng));
  params.add(prefix + "att0.b", DenseArray<T>({cfg.filter_hidden}));
  params.add(prefix + "att1.w", glorot_uniform<T>(3 * cfg.filter_hidden, 1, rng));
  params.add(prefix + "att1.b", DenseArray<T>({1}));
  params.add(prefix + "att_mix.w", glorot_uniform<T>(cfg.filter_span(), cfg.filter_span(), rng));
  params.add(prefix + "att_mix.b", DenseArray<T>({cfg.filter_span()}));
}

namespace detail {

// Kernel-3 1-D convolution over groups of `length` consecutive rows (time
// steps); zero padding of one step on each side.
template <typename T>
Var conv1d_k3(Tape<T>& tape, Var x, std::size_t length, std::size_t stride, Var w, Var b) {
  const std::size_t groups = tape.value(x).rows() / length;
  const std::size_t out_len = (length + stride - 1) / stride;
  std::array<std::vector<std::int64_t>, 3> taps;
  for (auto& t : taps) t.reserve(groups * out_len);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t p = 0; p < out_len; ++p)
      for (std::size_t k = 0; k < 3; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(p * stride + k) - 1;
        taps[k].push_back(src < 0 || src >= static_cast<std::ptrdiff_t>(length)
                              ? -1
                              : static_cast<std::int64_t>(g * length + static_cast<std::size_t>(src)));
      }
  Var cols = tape.concat({tape.gather_rows(x, std::move(taps[0])), tape.gather_rows(x, std::move(taps[1])),
                          tape.gather_rows(x, std::move(taps[2]))});
  return tape.affine(cols, w, b);
}

}  // namespace detail

template <typename T>
void check_audio_params(const Tape<T>& tape, const BoundParameters<T>& p, const std::string& prefix,
                        const AudioConfig& cfg) {
  auto expect = [&](const std::string& name, Shape shape) {
    const auto& actual = tape.value(p[prefix + name]).shape();
    require(actual == shape, "audio parameter '" + prefix + name + "' has shape " + shape_string(actual) +
                                 ", expected " + shape_string(shape));
  };
  std::size_t in = audio_feature_dim;
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    expect("enc" + std::to_string(l) + ".w", {3 * in, cfg.channels[l]});
    expect("enc" + std::to_string(l) + ".b", {cfg.channels[l]});
    in = cfg.channels[l];
  }
  expect("enc_out.w", {in, cfg.code_dim});
  expect("enc_out.b", {cfg.code_dim});
}

// [B*16 x 29] stacked windows -> [B x code_dim] latent codes.
// Four stride-2 convolutions collapse 16 steps to one, then a linear map.
template <typename T>
Var encode_windows(Tape<T>& tape, const BoundParameters<T>& p, const std::string& prefix, const AudioConfig& cfg,
                   Var windows) {
  require(tape.value(windows).cols() == audio_feature_dim && tape.value(windows).rows() % audio_window_rows == 0,
          "encode_windows: expected [B*16 x 29] input");
  check_audio_params(tape, p, prefix, cfg);
  Var h = windows;
  std::size_t length = audio_window_rows;
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    const std::string n = prefix + "enc" + std::to_string(l);
    h = tape.relu(detail::conv1d_k3(tape, h, length, 2, p[n + ".w"], p[n + ".b"]));
    length /= 2;
  }
  return tape.affine(h, p[prefix + "enc_out.w"], p[prefix + "enc_out.b"]);
}

struct FilterOutput {
  Var code;     // [F x code_dim]
  Var weights;  // [F x 2K+1], rows sum to one
};

// Self-attention style smoothing over 2K+1 neighbouring codes per target:
// codes [F*(2K+1) x D] -> convex combination per target.
template <typename T>
FilterOutput temporal_filter(Tape<T>& tape, const BoundParameters<T>& p, const std::string& prefix,
                             const AudioConfig& cfg, Var codes) {
  const std::size_t span = cfg.filter_span();
  require(tape.value(codes).rows() % span == 0 && tape.value(codes).rows() > 0,
          "temporal_filter: expected a multiple of " + std::to_string(span) + " codes, got " +
              std::to_string(tape.value(codes).rows()));
  require(tape.value(codes).cols() == cfg.code_dim, "temporal_filter: code width mismatch");
  const std::size_t targets = tape.value(codes).rows() / span;
  Var h = tape.relu(detail::conv1d_k3(tape, codes, span, 1, p[prefix + "att0.w"], p[prefix + "att0.b"]));
  Var logits = detail::conv1d_k3(tape, h, span, 1, p[prefix + "att1.w"], p[prefix + "att1.b"]);
  logits = tape.reshape(logits, {targets, span});
  logits = tape.affine(logits, p[prefix + "att_mix.w"], p[prefix + "att_mix.b"]);
  Var weights = tape.softmax(logits);
  Var weighted = tape.mul_col(codes, tape.reshape(weights, {targets * span, 1}));
  return {tape.segment_sum(weighted, span), weights};
}

// Frames whose codes feed the filter for `frame`, clamped to the track.
inline std::vector<std::size_t> filter_neighbours(std::size_t frames, std::size_t frame, std::size_t radius) {
  std::vector<std::size_t> out;
  const auto last = static_cast<std::ptrdiff_t>(frames) - 1;
  for (std::ptrdiff_t o = -static_cast<std::ptrdiff_t>(radius); o <= static_cast<std::ptrdiff_t>(radius); ++o)
    out.push_back(static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(frame) + o, 0, last)));
  return out;
}

// Full conditioning path for a list of frames of a track: [F x code_dim].
template <typename T>
Var condition_codes(Tape<T>& tape, const BoundParameters<T>& p, const std::string& prefix, const AudioConfig& cfg,
                    const AudioTrack& track, std::span<const std::size_t> frames) {
  const std::size_t span = cfg.filter_span();
  DenseArray<T> windows = DenseArray<T>::matrix(frames.size() * span * audio_window_rows, audio_feature_dim);
  std::size_t row = 0;
  for (std::size_t f : frames) {
    if (f >= track.frames()) throw range_error("condition_codes: frame " + std::to_string(f) + " outside track");
    for (std::size_t n : filter_neighbours(track.frames(), f, cfg.filter_radius))
      for (std::size_t src : window_frame_indices(track.frames(), n)) {
        auto feat = track.features.row(src);
        for (std::size_t j = 0; j < audio_feature_dim; ++j) windows(row, j) = static_cast<T>(feat[j]);
        ++row;
      }
  }
  Var codes = encode_windows(tape, p, prefix, cfg, tape.constant(std::move(windows)));
  return temporal_filter(tape, p, prefix, cfg, codes).code;
}

// Code for an explicit window supplied without temporal context: the same
// window fills every filter slot, so the filter output equals its code.
template <typename T>
Var condition_code_from_window(Tape<T>& tape, const BoundParameters<T>& p, const std::string& prefix,
                               const AudioConfig& cfg, const AudioWindow& window) {
  require(window.rows.rows() == audio_window_rows && window.rows.cols() == audio_feature_dim,
          "condition_code_from_window: window must be 16 x 29");
  const std::size_t span = cfg.filter_span();
  DenseArray<T> windows = DenseArray<T>::matrix(span * audio_window_rows, audio_feature_dim);
  for (std::size_t s = 0; s < span; ++s)
    for (std::size_t r = 0; r < audio_window_rows; ++r)
      for (std::size_t j = 0; j < audio_feature_dim; ++j)
        windows(s * audio_window_rows + r, j) = static_cast<T>(window.rows(r, j));
  Var codes = encode_windows(tape, p, prefix, cfg, tape.constant(std::move(windows)));
  return temporal_filter(tape, p, prefix, cfg, codes).code;
}

// ---- single-item conveniences ------------------------------------------------

template <typename T>
std::vector<T> encode_window(const AudioWindow& window, const ParameterSet<T>& params, const std::string& prefix,
                             const AudioConfig& cfg) {
  require(window.rows.rows() == audio_window_rows && window.rows.cols() == audio_feature_dim,
          "encode_window: window must be 16 x 29");
  Tape<T> tape;
  BoundParameters<T> p(tape, params, false);
  Var code = encode_windows(tape, p, prefix, cfg, tape.constant(window.rows.template cast<T>()));
  const auto v = tape.value(code).values();
  return {v.begin(), v.end()};
}

template <typename T>
std::vector<T> temporal_filter(std::span<const std::vector<T>> codes, const ParameterSet<T>& params,
                               const std::string& prefix, const AudioConfig& cfg, std::vector<T>* weights = nullptr) {
  require(codes.size() == cfg.filter_span(), "temporal_filter: expected " + std::to_string(cfg.filter_span()) +
                                                 " codes, got " + std::to_string(codes.size()));
  DenseArray<T> stacked = DenseArray<T>::matrix(codes.size(), cfg.code_dim);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require(codes[i].size() == cfg.code_dim, "temporal_filter: code width mismatch");
    std::copy(codes[i].begin(), codes[i].end(), stacked.row(i).begin());
  }
  Tape<T> tape;
  BoundParameters<T> p(tape, params, false);
  auto out = temporal_filter(tape, p, prefix, cfg, tape.constant(std::move(stacked)));
  if (weights) {
    const auto w = tape.value(out.weights).values();
    weights->assign(w.begin(), w.end());
  }
  const auto v = tape.value(out.code).values();
  return {v.begin(), v.end()};
}

// ---- ADAF feature files -------------------------------------------------------
// "ADAF" | version u32 | N u64 | dim u32 (=29) | frame_rate f32 | N*29 f32, little-endian.

namespace adaf {

inline constexpr std::uint32_t version = 1;

inline void write(std::ostream& out, const AudioTrack& track) {
  track.validate();
  out.write("ADAF", 4);
  checkpoint::detail::put<std::uint32_t>(out, version);
  checkpoint::detail::put<std::uint64_t>(out, track.frames());
  checkpoint::detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(audio_feature_dim));
  checkpoint::detail::put<float>(out, track.frame_rate);
  for (float v : track.features.values()) checkpoint::detail::put<float>(out, v);
}

inline AudioTrack read(std::istream& in) {
  char head[4];
  if (!in.read(head, 4) || std::string(head, 4) != "ADAF") throw load_error("audio features: bad magic bytes");
  using checkpoint::detail::get;
  const auto ver = get<std::uint32_t>(in, "version");
  if (ver != version) throw load_error("audio features: unsupported version " + std::to_string(ver));
  const auto n = get<std::uint64_t>(in, "frame count");
  const auto dim = get<std::uint32_t>(in, "feature dim");
  if (dim != audio_feature_dim) throw load_error("audio features: feature dim " + std::to_string(dim) + " != 29");
  if (n == 0 || n > (1ull << 32)) throw load_error("audio features: implausible frame count");
  AudioTrack track;
  track.frame_rate = get<float>(in, "frame rate");
  std::vector<float> data(n * audio_feature_dim);
  for (auto& v : data) v = get<float>(in, "features");
  track.features = DenseArray<float>({static_cast<std::size_t>(n), audio_feature_dim}, std::move(data));
  track.validate();
  return track;
}

inline void save(const std::string& path, const AudioTrack& track) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw load_error("audio features: cannot write '" + path + "'");
  write(out, track);
}

inline AudioTrack load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw load_error("audio features: cannot open '" + path + "'");
  return read(in);
}

}  // namespace adaf

}  // namespace adnf
