#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adnf/encodings.hpp"
#include "adnf/ndops/grad_check.hpp"

using namespace adnf;

TEST(PositionalEncode, ZeroInputTwoFrequencies) {
  const std::vector<double> p = {0.0};
  const auto out = positional_encode<double>(p, 2, false);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out, (std::vector<double>{0, 1, 0, 1}));
}

TEST(PositionalEncode, HalfAtBaseFrequency) {
  const std::vector<double> p = {0.5};
  const auto out = positional_encode<double>(p, 1, false);
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], 0.0, 1e-15);
}

TEST(PositionalEncode, MatchesIndependentReference) {
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> p = {float(u(rng)), float(u(rng)), float(u(rng))};
    const auto out = positional_encode<float>(p, 6, true);
    // reference: component-major, raw value first, long double trig
    std::vector<long double> ref;
    for (float x : p) {
      ref.push_back(x);
      for (int k = 0; k < 6; ++k) {
        const long double a = std::pow(2.0L, k) * 3.14159265358979323846264338327950288L * (long double)x;
        ref.push_back(std::sin(a));
        ref.push_back(std::cos(a));
      }
    }
    ASSERT_EQ(out.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], double(ref[i]), 1e-6) << i;
  }
}

TEST(PositionalEncode, LengthFormulaAndRange) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t dim = 1; dim <= 5; ++dim)
    for (int L = 0; L <= 8; ++L)
      for (bool include : {false, true}) {
        std::vector<double> p(dim);
        for (auto& v : p) v = u(rng);
        const auto out = positional_encode<double>(p, L, include);
        EXPECT_EQ(out.size(), dim * ((include ? 1 : 0) + 2 * L));
        if (!include)
          for (double v : out) {
            EXPECT_LE(v, 1.0);
            EXPECT_GE(v, -1.0);
          }
      }
}

TEST(PositionalEncode, TapeVersionAgreesAndPassesGradCheck) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  DenseArray<double> pts = DenseArray<double>::matrix(4, 3);
  for (auto& v : pts.values()) v = u(rng);

  Tape<double> tape;
  Var x = tape.leaf(pts);
  Var enc = positional_encode(tape, x, 4, true);
  const auto rows = positional_encode_rows(pts, 4, true);
  ASSERT_EQ(tape.value(enc).shape(), rows.shape());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(tape.value(enc)[i], rows[i], 1e-14);

  // weighted sum so the squares do not collapse to a constant
  auto g = [](Tape<double>& t, std::span<const Var> l) {
    Var e = positional_encode(t, l[0], 4, true);
    DenseArray<double> w(t.value(e).shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * double(i)) + 1.5;
    return t.sum(t.mul(e, t.constant(w)));
  };
  EXPECT_LT(grad_check<double>(g, {{"points", pts}}, 1e-6).max_relative_error, 1e-6);
}

TEST(SceneBox, NormalizesAndClamps) {
  SceneBox box{{-2, 0, 1}, {2, 4, 3}};
  EXPECT_NEAR(box.diagonal(), std::sqrt(16.0 + 16.0 + 4.0), 1e-12);
  const std::array<double, 3> centre = {0, 2, 2};
  const auto n = box.normalize<double>(std::span<const double, 3>(centre));
  EXPECT_DOUBLE_EQ(n[0], 0.0);
  EXPECT_DOUBLE_EQ(n[1], 0.0);
  EXPECT_DOUBLE_EQ(n[2], 0.0);
  const std::array<double, 3> outside = {10, -1, 2.5};
  const auto c = box.normalize<double>(std::span<const double, 3>(outside));
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_DOUBLE_EQ(c[1], -1.0);
  EXPECT_DOUBLE_EQ(c[2], 0.5);
}
