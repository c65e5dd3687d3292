#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adnf/ndops/dense_array.hpp"

namespace adnf {

// Named, ordered collection of trainable arrays. Insertion order is the
// canonical order for gradients, optimizer moments and checkpoints.
template <typename T>
class ParameterSet {
 public:
  using Array = DenseArray<T>;

  void add(std::string name, Array value) {
    require(!contains(name), "ParameterSet: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  Array& at(std::string_view name) { return entries_[position(name)].second; }
  const Array& at(std::string_view name) const { return entries_[position(name)].second; }

  std::size_t position(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw contract_error("ParameterSet: no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Array& value(std::size_t i) { return entries_[i].second; }
  const Array& value(std::size_t i) const { return entries_[i].second; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, a] : entries_) n += a.size();
    return n;
  }

  // Copies every entry of `other` whose name starts with `prefix` into this set.
  void merge(const ParameterSet& other, std::string_view prefix = {}) {
    for (const auto& [n, a] : other.entries_)
      if (n.starts_with(prefix)) add(n, a);
  }

  ParameterSet subset(std::string_view prefix) const {
    ParameterSet out;
    out.merge(*this, prefix);
    return out;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [n, a] : entries_) out.add(n, a.template cast<U>());
    return out;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Array>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Checkpoint file layout (all integers little-endian):
//   "ADNF" | version u32 | count u64 |
//   count x ( name_len u32 | name bytes | rank u64 | dims u64... | f32 values )
namespace checkpoint {

inline constexpr char magic[4] = {'A', 'D', 'N', 'F'};
inline constexpr std::uint32_t version = 1;

namespace detail {

template <typename U>
void put(std::ostream& out, U v) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw load_error("checkpoint: truncated while reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

}  // namespace detail

template <typename T>
void write(std::ostream& out, const ParameterSet<T>& params) {
  out.write(magic, 4);
  detail::put<std::uint32_t>(out, version);
  detail::put<std::uint64_t>(out, params.size());
  for (const auto& [name, array] : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint64_t>(out, array.rank());
    for (auto d : array.shape()) detail::put<std::uint64_t>(out, d);
    for (T v : array.values()) detail::put<float>(out, static_cast<float>(v));
  }
}

template <typename T>
ParameterSet<T> read(std::istream& in) {
  char head[4];
  if (!in.read(head, 4) || !std::equal(head, head + 4, magic)) throw load_error("checkpoint: bad magic bytes");
  const auto ver = detail::get<std::uint32_t>(in, "version");
  if (ver != version) throw load_error("checkpoint: unsupported version " + std::to_string(ver));
  const auto count = detail::get<std::uint64_t>(in, "parameter count");
  ParameterSet<T> params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint32_t>(in, "name length");
    if (len > 4096) throw load_error("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw load_error("checkpoint: truncated name");
    const auto rank = detail::get<std::uint64_t>(in, "rank of " + name);
    if (rank > 8) throw load_error("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(in, "shape of " + name);
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) v = static_cast<T>(detail::get<float>(in, "values of " + name));
    params.add(std::move(name), DenseArray<T>(std::move(shape), std::move(data)));
  }
  return params;
}

template <typename T>
void save(const std::string& path, const ParameterSet<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw load_error("checkpoint: cannot open '" + path + "' for writing");
  write(out, params);
  if (!out) throw load_error("checkpoint: write failed for '" + path + "'");
}

template <typename T>
ParameterSet<T> load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw load_error("checkpoint: cannot open '" + path + "'");
  return read<T>(in);
}

}  // namespace checkpoint

}  // namespace adnf
