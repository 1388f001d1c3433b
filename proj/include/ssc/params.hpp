#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/binary_io.hpp"
#include "ssc/errors.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Named parameter tensors, each with a gradient slot of identical shape.
// Iteration order is insertion order, which also fixes checkpoint layout.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter " + name);
    index_[name] = entries_.size();
    Shape s = value.shape();
    entries_.push_back(Entry{name, std::move(value), Tensor<T>(std::move(s), T(0))});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& grad(const std::string& name) { return entry(name).grad; }

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter " + name);
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter " + name);
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Binds store parameters onto a tape once per name and folds the tape
// gradients back into the store after backward().
template <typename T>
class Binder {
 public:
  Binder(ag::Tape<T>& tape, ParamStore<T>& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable) {}

  ag::Var<T> operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    auto v = tape_.external_leaf(store_.value(name), trainable_);
    vars_.emplace(name, v);
    return v;
  }

  ag::Tape<T>& tape() { return tape_; }

  // Adds scale * dL/dparam into the store's gradient slots.
  void accumulate_grads(T scale = T(1)) {
    if (!trainable_) return;
    for (auto& [name, v] : vars_) {
      const auto& g = tape_.grad(v.id);
      if (g.empty()) continue;
      auto& dst = store_.grad(name);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
    }
  }

 private:
  ag::Tape<T>& tape_;
  ParamStore<T>& store_;
  bool trainable_;
  std::map<std::string, ag::Var<T>> vars_;
};

// He-normal initialisation for a conv weight with the given fan-in.
template <typename T, typename Rng>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : t) v = static_cast<T>(dist(rng));
  return t;
}

// Checkpoint container: "SSCK", u32 version, then per parameter
// (u32 name length, name bytes, u32 rank, u32 dims..., f32 payload) until EOF.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store) {
  io::write_atomic(path, [&](std::ostream& os) {
    os.write("SSCK", 4);
    io::put_u32(os, kCheckpointVersion);
    for (const auto& e : store.entries()) {
      io::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      io::put_u32(os, static_cast<std::uint32_t>(e.value.rank()));
      for (int d : e.value.shape()) io::put_u32(os, static_cast<std::uint32_t>(d));
      for (T v : e.value) io::put_f32(os, static_cast<float>(v));
    }
  });
}

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "SSCK", path.string());
  const auto version = io::read_u32(is, path.string());
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  ParamStore<T> store;
  std::uint32_t name_len = 0;
  while (io::get_u32(is, name_len)) {
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError(path.string() + ": truncated record name");
    const auto rank = io::read_u32(is, path.string());
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(io::read_u32(is, path.string())));
    Tensor<T> t(shape);  // rank 0 holds one scalar
    for (auto& v : t) v = static_cast<T>(io::read_f32(is, path.string() + " record " + name));
    store.add(name, std::move(t));
  }
  return store;
}

}  // namespace ssc
