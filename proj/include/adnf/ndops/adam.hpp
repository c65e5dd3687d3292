#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "adnf/ndops/parameters.hpp"

namespace adnf {

struct AdamHyper {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Optional exponential schedule lr * decay_rate^(step / decay_steps); off by default.
  bool exponential_decay = false;
  double decay_rate = 0.1;
  double decay_steps = 250000;

  double rate_at(std::uint64_t step) const {
    if (!exponential_decay) return learning_rate;
    return learning_rate * std::pow(decay_rate, static_cast<double>(step) / decay_steps);
  }
};

template <typename T>
struct AdamState {
  std::vector<DenseArray<T>> first_moment;
  std::vector<DenseArray<T>> second_moment;
  std::uint64_t step_count = 0;
  AdamHyper hyper;

  static AdamState for_params(const ParameterSet<T>& params, AdamHyper hyper = {}) {
    AdamState state;
    state.hyper = hyper;
    for (const auto& [_, p] : params) {
      state.first_moment.emplace_back(p.shape(), T(0));
      state.second_moment.emplace_back(p.shape(), T(0));
    }
    return state;
  }
};

// One bias-corrected Adam update, in place. grads[i] pairs with params.value(i).
template <typename T>
void adam_step(ParameterSet<T>& params, std::span<const DenseArray<T>> grads, AdamState<T>& state) {
  require(grads.size() == params.size() && state.first_moment.size() == params.size() &&
              state.second_moment.size() == params.size(),
          "adam_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params.value(i).shape();
    require(grads[i].shape() == shape && state.first_moment[i].shape() == shape &&
                state.second_moment[i].shape() == shape,
            "adam_step: shape mismatch for '" + params.name(i) + "'");
  }

  const auto& h = state.hyper;
  const std::uint64_t t = ++state.step_count;
  const T lr = static_cast<T>(h.rate_at(t - 1));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2), eps = static_cast<T>(h.epsilon);
  const T corr1 = T(1) - static_cast<T>(std::pow(h.beta1, static_cast<double>(t)));
  const T corr2 = T(1) - static_cast<T>(std::pow(h.beta2, static_cast<double>(t)));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto x = params.value(i).values();
    auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T m_hat = m[k] / corr1;
      const T v_hat = v[k] / corr2;
      x[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace adnf
