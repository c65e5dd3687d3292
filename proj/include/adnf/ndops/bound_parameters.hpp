#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "adnf/ndops/parameters.hpp"
#include "adnf/ndops/tape.hpp"
#include "adnf/random.hpp"

namespace adnf {

// A ParameterSet placed on a tape. Trainable sets become leaves (in set order,
// so Tape::backward's first size() gradients line up with the set); frozen
// sets become constants and receive no gradient.
template <typename T>
class BoundParameters {
 public:
  BoundParameters() = default;
  BoundParameters(Tape<T>& tape, const ParameterSet<T>& params, bool trainable = true) {
    for (const auto& [name, value] : params) vars_.emplace(name, trainable ? tape.leaf(value, name) : tape.constant(value));
  }

  Var operator[](std::string_view name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw contract_error("parameter '" + std::string(name) + "' is not bound");
    return it->second;
  }

  // Binds (or rebinds) a name to an existing Var, e.g. a grad_check leaf.
  void bind(std::string name, Var v) { vars_[std::move(name)] = v; }

  bool contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }

 private:
  std::map<std::string, Var, std::less<>> vars_;
};

// Uniform Glorot initialisation for a [fan_in x fan_out] weight.
template <typename T>
DenseArray<T> glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseArray<T> w = DenseArray<T>::matrix(fan_in, fan_out);
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  return w;
}

}  // namespace adnf
