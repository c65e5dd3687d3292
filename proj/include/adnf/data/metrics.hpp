#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "adnf/data/dataset.hpp"
#include "adnf/image.hpp"

namespace adnf {

inline double compute_mse(const Image& a, const Image& b) {
  require(a.same_size(b), "image metrics: dimension mismatch");
  require(!a.data.empty(), "image metrics: empty image");
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return s / double(a.data.size());
}

inline double compute_psnr(const Image& a, const Image& b) {
  const double mse = compute_mse(a, b);
  if (mse < 1e-10) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

inline std::vector<double> luma(const Image& img) {
  std::vector<double> y(img.pixels());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
  return y;
}

// Mean SSIM of the luma channels over all full 11x11 Gaussian windows (sigma 1.5).
// Images smaller than the window use a window clipped to the image.
inline double compute_ssim(const Image& a, const Image& b) {
  require(a.same_size(b), "image metrics: dimension mismatch");
  require(a.pixels() > 0, "image metrics: empty image");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t w = a.width, h = a.height;
  const int radius_x = static_cast<int>(std::min<std::size_t>(5, (w - 1) / 2));
  const int radius_y = static_cast<int>(std::min<std::size_t>(5, (h - 1) / 2));
  std::vector<double> kx(2 * radius_x + 1), ky(2 * radius_y + 1);
  auto fill = [](std::vector<double>& k, int r) {
    double s = 0;
    for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-double(i * i) / (2 * 1.5 * 1.5));
    for (auto& v : k) v /= s;
  };
  fill(kx, radius_x);
  fill(ky, radius_y);
  const auto ya = luma(a), yb = luma(b);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t cy = radius_y; cy + radius_y < h; ++cy)
    for (std::size_t cx = radius_x; cx + radius_x < w; ++cx) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -radius_y; dy <= radius_y; ++dy)
        for (int dx = -radius_x; dx <= radius_x; ++dx) {
          const double g = ky[dy + radius_y] * kx[dx + radius_x];
          const std::size_t i = (cy + dy) * w + (cx + dx);
          ma += g * ya[i];
          mb += g * yb[i];
          saa += g * ya[i] * ya[i];
          sbb += g * yb[i] * yb[i];
          sab += g * ya[i] * yb[i];
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / double(count);
}

// Per-pixel median over frames where the pixel is background (lower median,
// so values stay on the input levels); never-background pixels copy the
// nearest background pixel found by breadth-first search over 4-neighbours.
inline Image build_background(const std::vector<Image>& frames, const std::vector<LabelImage>& masks) {
  require(!frames.empty(), "build_background: no frames");
  require(frames.size() == masks.size(), "build_background: frame and mask counts differ");
  const std::size_t w = frames[0].width, h = frames[0].height;
  for (std::size_t i = 0; i < frames.size(); ++i)
    require(frames[i].width == w && frames[i].height == h && masks[i].width == w && masks[i].height == h,
            "build_background: frames and masks must share one size");
  Image out(w, h);
  std::vector<char> known(w * h, 0);
  std::vector<float> values;
  for (std::size_t p = 0; p < w * h; ++p)
    for (int c = 0; c < 3; ++c) {
      values.clear();
      for (std::size_t f = 0; f < frames.size(); ++f)
        if (masks[f].data[p] == background_label) values.push_back(frames[f].data[p * 3 + c]);
      if (values.empty()) continue;
      const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
      std::nth_element(values.begin(), mid, values.end());
      out.data[p * 3 + c] = *mid;
      known[p] = 1;
    }
  std::deque<std::size_t> queue;
  for (std::size_t p = 0; p < w * h; ++p)
    if (known[p]) queue.push_back(p);
  if (queue.empty()) return out;  // nothing was ever background
  while (!queue.empty()) {
    const std::size_t p = queue.front();
    queue.pop_front();
    const std::size_t x = p % w, y = p / w;
    const std::size_t nbr[4] = {x > 0 ? p - 1 : p, x + 1 < w ? p + 1 : p, y > 0 ? p - w : p, y + 1 < h ? p + w : p};
    for (std::size_t q : nbr)
      if (!known[q]) {
        known[q] = 1;
        for (int c = 0; c < 3; ++c) out.data[q * 3 + c] = out.data[p * 3 + c];
        queue.push_back(q);
      }
  }
  return out;
}

}  // namespace adnf
