#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "adnf/ndops/tape.hpp"

namespace adnf {

struct EncodingConfig {
  int position_frequencies = 10;
  int direction_frequencies = 4;
  bool include_input = true;
};

inline std::size_t encoded_size(std::size_t dim, int frequencies, bool include_input) {
  return dim * ((include_input ? 1u : 0u) + 2u * static_cast<std::size_t>(frequencies));
}

// Per component: [p] (optional), then sin(2^k pi p), cos(2^k pi p) for k = 0..L-1.
template <typename T>
void positional_encode(std::span<const T> p, int frequencies, bool include_input, std::span<T> out) {
  require(frequencies >= 0, "positional_encode: negative frequency count");
  require(out.size() == encoded_size(p.size(), frequencies, include_input), "positional_encode: output size");
  std::size_t o = 0;
  for (T x : p) {
    if (include_input) out[o++] = x;
    if (frequencies == 0) continue;
    // base angle in double, higher octaves by the double-angle identities
    double s = std::sin(std::numbers::pi * static_cast<double>(x));
    double c = std::cos(std::numbers::pi * static_cast<double>(x));
    for (int k = 0; k < frequencies; ++k) {
      out[o++] = static_cast<T>(s);
      out[o++] = static_cast<T>(c);
      const double s2 = 2.0 * s * c;
      c = (c - s) * (c + s);
      s = s2;
    }
  }
}

template <typename T>
std::vector<T> positional_encode(std::span<const T> p, int frequencies, bool include_input) {
  std::vector<T> out(encoded_size(p.size(), frequencies, include_input));
  positional_encode<T>(p, frequencies, include_input, out);
  return out;
}

// Row-wise encoding of an [N x D] array.
template <typename T>
DenseArray<T> positional_encode_rows(const DenseArray<T>& points, int frequencies, bool include_input) {
  const std::size_t d = points.cols();
  const std::size_t width = encoded_size(d, frequencies, include_input);
  DenseArray<T> out = DenseArray<T>::matrix(points.rows(), width);
  for (std::size_t r = 0; r < points.rows(); ++r)
    positional_encode<T>(points.row(r), frequencies, include_input, out.row(r));
  return out;
}

// Same encoding recorded with tape primitives, for gradients wrt the points.
template <typename T>
Var positional_encode(Tape<T>& tape, Var points, int frequencies, bool include_input) {
  const std::size_t d = tape.value(points).cols();
  std::vector<Var> parts;
  for (std::size_t j = 0; j < d; ++j) {
    Var component = tape.slice(points, j, j + 1);
    if (include_input) parts.push_back(component);
    for (int k = 0; k < frequencies; ++k) {
      Var angle = tape.scale(component, static_cast<T>(std::ldexp(std::numbers::pi, k)));
      parts.push_back(tape.sin(angle));
      parts.push_back(tape.cos(angle));
    }
  }
  return tape.concat(std::move(parts));
}

// Axis-aligned scene bounds; positions are mapped affinely onto [-1, 1]^3.
struct SceneBox {
  std::array<double, 3> min{-1, -1, -1};
  std::array<double, 3> max{1, 1, 1};

  double diagonal() const {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += (max[i] - min[i]) * (max[i] - min[i]);
    return std::sqrt(s);
  }

  bool valid() const {
    for (int i = 0; i < 3; ++i)
      if (!(max[i] > min[i])) return false;
    return true;
  }

  // Out-of-box points are clamped onto the box surface.
  template <typename T>
  std::array<T, 3> normalize(std::span<const T, 3> x) const {
    std::array<T, 3> out;
    for (int i = 0; i < 3; ++i) {
      const double u = 2.0 * (static_cast<double>(x[i]) - min[i]) / (max[i] - min[i]) - 1.0;
      out[i] = static_cast<T>(std::clamp(u, -1.0, 1.0));
    }
    return out;
  }
};

}  // namespace adnf
