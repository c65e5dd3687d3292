#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "adnf/ndops/adam.hpp"
#include "adnf/ndops/grad_check.hpp"
#include "adnf/ndops/parameters.hpp"
#include "adnf/ndops/tape.hpp"

using namespace adnf;

namespace {

template <typename T>
DenseArray<T> random_array(Shape shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  DenseArray<T> a(std::move(shape));
  for (auto& v : a.values()) v = static_cast<T>(u(rng));
  return a;
}

}  // namespace

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  Var x = tape.leaf(DenseArray<double>::scalar(3.0), "x");
  auto grads = tape.backward(tape.mul(x, x));
  EXPECT_DOUBLE_EQ(grads[0][0], 6.0);
}

TEST(Backward, SumIsLinear) {
  Tape<double> tape;
  Var x = tape.leaf(DenseArray<double>::scalar(1.5));
  Var y = tape.leaf(DenseArray<double>::scalar(-4.0));
  auto grads = tape.backward(tape.add(x, y));
  EXPECT_DOUBLE_EQ(grads[0][0], 1.0);
  EXPECT_DOUBLE_EQ(grads[1][0], 1.0);
}

TEST(Backward, UnreachedLeafGetsZeros) {
  Tape<double> tape;
  Var x = tape.leaf(DenseArray<double>::scalar(2.0));
  Var unused = tape.leaf(DenseArray<double>({2, 3}, 7.0));
  auto grads = tape.backward(tape.scale(x, 5.0));
  EXPECT_DOUBLE_EQ(grads[0][0], 5.0);
  ASSERT_EQ(grads[1].shape(), tape.value(unused).shape());
  for (double g : grads[1].values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarOutputIsContractViolation) {
  Tape<double> tape;
  Var x = tape.leaf(DenseArray<double>({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(tape.relu(x)), contract_error);
}

TEST(Backward, ShapeMismatchRejectedAtRecordTime) {
  Tape<float> tape;
  Var a = tape.leaf(DenseArray<float>({2, 3}));
  Var b = tape.leaf(DenseArray<float>({2, 2}));
  EXPECT_THROW(tape.matmul(a, b), contract_error);
  EXPECT_THROW(tape.add(a, b), contract_error);
}

// Straight-line two-layer perceptron, independent of the tape, used as the
// finite-difference oracle: loss = sum(relu(x W1 + b1) W2 + b2)^2 / n.
namespace {
float perceptron_loss(const DenseArray<float>& x, const DenseArray<float>& w1, const DenseArray<float>& b1,
                      const DenseArray<float>& w2, const DenseArray<float>& b2) {
  const std::size_t n = x.rows(), d = x.cols(), h = w1.cols(), o = w2.cols();
  double loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> hidden(h);
    for (std::size_t j = 0; j < h; ++j) {
      double acc = b1[j];
      for (std::size_t k = 0; k < d; ++k) acc += double(x(r, k)) * w1(k, j);
      hidden[j] = acc > 0 ? acc : 0;
    }
    for (std::size_t j = 0; j < o; ++j) {
      double acc = b2[j];
      for (std::size_t k = 0; k < h; ++k) acc += hidden[k] * w2(k, j);
      loss += acc * acc;
    }
  }
  return static_cast<float>(loss / double(n));
}
}  // namespace

TEST(Backward, PerceptronMatchesCentralDifferences) {
  std::mt19937 rng(11);
  const auto x = random_array<float>({8, 5}, rng);
  NamedArrays<float> params = {{"w1", random_array<float>({5, 12}, rng, -0.5, 0.5)},
                               {"b1", random_array<float>({12}, rng, -0.1, 0.1)},
                               {"w2", random_array<float>({12, 3}, rng, -0.5, 0.5)},
                               {"b2", random_array<float>({3}, rng, -0.1, 0.1)}};
  Tape<float> tape;
  std::vector<Var> leaves;
  for (auto& [n, v] : params) leaves.push_back(tape.leaf(v, n));
  Var xv = tape.constant(x);
  Var hidden = tape.relu(tape.affine(xv, leaves[0], leaves[1]));
  Var out = tape.affine(hidden, leaves[2], leaves[3]);
  Var loss = tape.mean(tape.mul(out, out));
  // mean over n*o entries; rescale to per-row sum to match the oracle
  loss = tape.scale(loss, 3.0f);
  EXPECT_NEAR(tape.value(loss).item(), perceptron_loss(x, params[0].second, params[1].second, params[2].second,
                                                       params[3].second),
              1e-5);
  const auto grads = tape.backward(loss);

  const float h = 1e-3f;
  for (std::size_t p = 0; p < params.size(); ++p) {
    double diff2 = 0, ref2 = 0;
    for (std::size_t k = 0; k < params[p].second.size(); ++k) {
      auto eval = [&](float delta) {
        auto moved = params;
        moved[p].second[k] += delta;
        return double(perceptron_loss(x, moved[0].second, moved[1].second, moved[2].second, moved[3].second));
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      diff2 += (grads[p][k] - numeric) * (grads[p][k] - numeric);
      ref2 += numeric * numeric;
    }
    EXPECT_LT(std::sqrt(diff2 / ref2), 1e-3) << params[p].first;
  }
}

// Every differentiable primitive against central differences in 64-bit.
TEST(Backward, PrimitivesPassGradCheckIn64Bit) {
  std::mt19937 rng(3);
  using Build = std::function<Var(Tape<double>&, std::span<const Var>)>;
  struct Case {
    const char* name;
    NamedArrays<double> point;
    Build build;
  };
  auto A = [&](Shape s, double lo = -1, double hi = 1) { return random_array<double>(std::move(s), rng, lo, hi); };
  // weighted sum so every output element gets a distinct cotangent
  auto weigh = [w = A({64}, 0.5, 1.5)](Tape<double>& t, Var v) {
    const auto& val = t.value(v);
    DenseArray<double> weights(val.shape());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = w[i % 64] * (1.0 + 0.01 * double(i));
    return t.sum(t.mul(v, t.constant(weights)));
  };
  std::vector<Case> cases = {
      {"matmul", {{"a", A({3, 4})}, {"b", A({4, 2})}}, [&](auto& t, auto l) { return weigh(t, t.matmul(l[0], l[1])); }},
      {"affine",
       {{"x", A({3, 4})}, {"w", A({4, 5})}, {"b", A({5})}},
       [&](auto& t, auto l) { return weigh(t, t.affine(l[0], l[1], l[2])); }},
      {"add", {{"a", A({2, 3})}, {"b", A({2, 3})}}, [&](auto& t, auto l) { return weigh(t, t.add(l[0], l[1])); }},
      {"sub", {{"a", A({2, 3})}, {"b", A({2, 3})}}, [&](auto& t, auto l) { return weigh(t, t.sub(l[0], l[1])); }},
      {"add_row", {{"a", A({4, 3})}, {"b", A({3})}}, [&](auto& t, auto l) { return weigh(t, t.add_row(l[0], l[1])); }},
      {"mul", {{"a", A({2, 3})}, {"b", A({2, 3})}}, [&](auto& t, auto l) { return weigh(t, t.mul(l[0], l[1])); }},
      {"mul_col",
       {{"a", A({4, 3})}, {"c", A({4, 1})}},
       [&](auto& t, auto l) { return weigh(t, t.mul_col(l[0], l[1])); }},
      {"relu", {{"a", A({3, 5}, 0.1, 1.0)}}, [&](auto& t, auto l) { return weigh(t, t.relu(t.scale(l[0], -1.0))); }},
      {"relu+", {{"a", A({3, 5}, 0.1, 1.0)}}, [&](auto& t, auto l) { return weigh(t, t.relu(l[0])); }},
      {"softplus", {{"a", A({3, 5}, -4, 4)}}, [&](auto& t, auto l) { return weigh(t, t.softplus(l[0])); }},
      {"sigmoid", {{"a", A({3, 5}, -4, 4)}}, [&](auto& t, auto l) { return weigh(t, t.sigmoid(l[0])); }},
      {"exp", {{"a", A({3, 5})}}, [&](auto& t, auto l) { return weigh(t, t.exp(l[0])); }},
      {"sin", {{"a", A({3, 5}, -3, 3)}}, [&](auto& t, auto l) { return weigh(t, t.sin(l[0])); }},
      {"cos", {{"a", A({3, 5}, -3, 3)}}, [&](auto& t, auto l) { return weigh(t, t.cos(l[0])); }},
      {"concat",
       {{"a", A({3, 2})}, {"b", A({3, 4})}},
       [&](auto& t, auto l) { return weigh(t, t.concat({l[0], l[1], l[0]})); }},
      {"slice", {{"a", A({3, 6})}}, [&](auto& t, auto l) { return weigh(t, t.slice(l[0], 1, 4)); }},
      {"mean", {{"a", A({3, 6})}}, [&](auto& t, auto l) { return t.mean(t.mul(l[0], l[0])); }},
      {"softmax", {{"a", A({4, 5}, -2, 2)}}, [&](auto& t, auto l) { return weigh(t, t.softmax(l[0])); }},
      {"reshape", {{"a", A({4, 6})}}, [&](auto& t, auto l) { return weigh(t, t.reshape(l[0], {8, 3})); }},
      {"gather_rows",
       {{"a", A({4, 3})}},
       [&](auto& t, auto l) { return weigh(t, t.gather_rows(l[0], {2, 0, -1, 2, 3})); }},
      {"segment_sum", {{"a", A({6, 3})}}, [&](auto& t, auto l) { return weigh(t, t.segment_sum(l[0], 3)); }},
  };
  for (auto& c : cases) {
    const auto report = grad_check<double>(c.build, c.point, 1e-6);
    EXPECT_LT(report.max_relative_error, 1e-6) << c.name;
  }
}

TEST(Tape, ReplayIsBitIdentical) {
  std::mt19937 rng(5);
  Tape<float> tape;
  Var w = tape.leaf(random_array<float>({6, 6}, rng));
  Var x = tape.constant(random_array<float>({10, 6}, rng));
  Var y = tape.softplus(tape.matmul(tape.sin(x), w));
  Var out = tape.sum(tape.softmax(y));
  const auto recorded = tape.value(y);
  const float recorded_out = tape.value(out).item();
  tape.replay();
  EXPECT_EQ(tape.value(y), recorded);
  EXPECT_EQ(tape.value(out).item(), recorded_out);
}

TEST(GradCheck, QuadraticBowlIsExactIn64Bit) {
  std::mt19937 rng(9);
  NamedArrays<double> point = {{"x", random_array<double>({10}, rng, -3, 3)}};
  auto bowl = [](Tape<double>& t, std::span<const Var> l) {
    DenseArray<double> c({10});
    for (std::size_t i = 0; i < 10; ++i) c[i] = 0.5 + double(i);
    Var shifted = t.sub(l[0], t.constant(DenseArray<double>({10}, 0.25)));
    return t.sum(t.mul(t.constant(c), t.mul(shifted, shifted)));
  };
  const auto report = grad_check<double>(bowl, point, 1e-4);
  EXPECT_LT(report.max_relative_error, 1e-7);
  EXPECT_TRUE(report.passed(1e-7));
}

TEST(GradCheck, CoupledQuadraticLeavesNoResidualPerturbation) {
  // (sum x)^2 couples every coordinate, so a leftover offset from a previous
  // difference would bias later ones by O(h)
  NamedArrays<double> point = {{"x", DenseArray<double>({4}, std::vector<double>{1, -2, 0.5, 3})}};
  auto f = [](Tape<double>& t, std::span<const Var> l) {
    Var s = t.sum(l[0]);
    return t.mul(s, s);
  };
  EXPECT_LT(grad_check<double>(f, point, 1e-2).max_relative_error, 1e-10);
}

TEST(GradCheck, FlagsDiscontinuity) {
  // step(x) + x at x = 0: analytic derivative 1, central difference ~ 1/(2h).
  auto step_plus_identity = [](Tape<double>& t, std::span<const Var> l) {
    Var step = t.record(
        {l[0]},
        [](Tape<double>::Inputs in) {
          DenseArray<double> out = *in[0];
          for (auto& v : out.values()) v = v >= 0 ? 1.0 : 0.0;
          return out;
        },
        [](auto, const auto&, const auto&, auto) {});
    return t.sum(t.add(step, l[0]));
  };
  NamedArrays<double> point = {{"x", DenseArray<double>({1}, 0.0)}};
  const auto report = grad_check<double>(step_plus_identity, point, 1e-3);
  EXPECT_FALSE(report.passed(1e-3));
  EXPECT_EQ(report.worst().name, "x");
}

TEST(GradCheck, NonFiniteForwardNamesParameter) {
  auto log_like = [](Tape<double>& t, std::span<const Var> l) {
    // exp(1/x) overflows when x is nudged toward 0 from above
    Var inv = t.record(
        {l[0]},
        [](Tape<double>::Inputs in) {
          DenseArray<double> out = *in[0];
          for (auto& v : out.values()) v = 1.0 / v;
          return out;
        },
        [](Tape<double>::Inputs in, const auto&, const auto& g, Tape<double>::GradInputs gin) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] -= g[i] / ((*in[0])[i] * (*in[0])[i]);
        });
    return t.sum(t.exp(inv));
  };
  NamedArrays<double> point = {{"scale", DenseArray<double>({1}, 1.0 / 700.0)}};
  try {
    grad_check<double>(log_like, point, 1e-4);
    FAIL() << "expected numeric_error";
  } catch (const numeric_error& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(GradCheck, RejectsNonPositiveStep) {
  NamedArrays<double> point = {{"x", DenseArray<double>({1}, 1.0)}};
  auto f = [](Tape<double>& t, std::span<const Var> l) { return t.sum(l[0]); };
  EXPECT_THROW(grad_check<double>(f, point, 0.0), contract_error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet<double> params;
  params.add("w", DenseArray<double>({4}, 2.0));
  auto state = AdamState<double>::for_params(params, AdamHyper{.learning_rate = 0.0005});
  std::vector<DenseArray<double>> grads = {DenseArray<double>({4}, 1.0)};
  adam_step<double>(params, grads, state);
  EXPECT_EQ(state.step_count, 1u);
  for (double v : params.at("w").values()) EXPECT_NEAR(v, 2.0 - 0.0005, 1e-10);
}

TEST(Adam, ZeroGradientFromRestLeavesParametersBitIdentical) {
  ParameterSet<float> params;
  params.add("w", DenseArray<float>({3, 3}, 0.37f));
  const auto before = params;
  auto state = AdamState<float>::for_params(params);
  std::vector<DenseArray<float>> grads = {DenseArray<float>({3, 3}, 0.0f)};
  for (int i = 0; i < 5; ++i) adam_step<float>(params, grads, state);
  EXPECT_EQ(params, before);
  for (float m : state.first_moment[0].values()) EXPECT_EQ(m, 0.0f);
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  ParameterSet<double> params;
  params.add("w", DenseArray<double>({2}, 1.0));
  auto state = AdamState<double>::for_params(params);
  adam_step<double>(params, std::vector<DenseArray<double>>{DenseArray<double>({2}, 1.0)}, state);
  const double m0 = state.first_moment[0][0], v0 = state.second_moment[0][0];
  adam_step<double>(params, std::vector<DenseArray<double>>{DenseArray<double>({2}, 0.0)}, state);
  EXPECT_LT(state.first_moment[0][0], m0);
  EXPECT_LT(state.second_moment[0][0], v0);
  EXPECT_GT(state.first_moment[0][0], 0.0);
}

TEST(Adam, ShrinksQuadratic) {
  ParameterSet<double> params;
  params.add("x", DenseArray<double>::scalar(1.0));
  auto state = AdamState<double>::for_params(params, AdamHyper{.learning_rate = 0.0005});
  for (int i = 0; i < 100; ++i) {
    std::vector<DenseArray<double>> g = {DenseArray<double>::scalar(2.0 * params.at("x")[0])};
    adam_step<double>(params, g, state);
  }
  EXPECT_LT(std::abs(params.at("x")[0]), 1.0);
  EXPECT_EQ(state.step_count, 100u);
}

TEST(Adam, ShapeMismatchIsContractViolation) {
  ParameterSet<float> params;
  params.add("w", DenseArray<float>({3}));
  auto state = AdamState<float>::for_params(params);
  std::vector<DenseArray<float>> grads = {DenseArray<float>({4})};
  EXPECT_THROW(adam_step<float>(params, grads, state), contract_error);
}

TEST(Adam, OptionalExponentialDecay) {
  AdamHyper h;
  EXPECT_DOUBLE_EQ(h.rate_at(1000000), 5e-4);
  h.exponential_decay = true;
  h.decay_steps = 100;
  EXPECT_NEAR(h.rate_at(100), 5e-5, 1e-15);
}

TEST(Checkpoint, RoundTripsFloatParameters) {
  std::mt19937 rng(1);
  ParameterSet<float> params;
  params.add("head/coarse/l0.w", random_array<float>({7, 5}, rng));
  params.add("head/coarse/l0.b", random_array<float>({5}, rng));
  params.add("torso/fine/sigma.b", DenseArray<float>({1}, -20.0f));
  std::stringstream buffer;
  checkpoint::write(buffer, params);
  const std::string bytes = buffer.str();
  EXPECT_EQ(bytes.substr(0, 4), "ADNF");
  EXPECT_EQ(checkpoint::read<float>(buffer), params);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(checkpoint::read<float>(bad), load_error);

  ParameterSet<float> params;
  params.add("w", DenseArray<float>({4}, 1.0f));
  std::stringstream buffer;
  checkpoint::write(buffer, params);
  std::string bytes = buffer.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(checkpoint::read<float>(truncated), load_error);
}
