#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedload/error.hpp"

namespace fedload {

enum class CellType : std::uint8_t { lstm = 0, gru = 1 };

inline std::string_view to_string(CellType c) {
  return c == CellType::lstm ? "lstm" : "gru";
}

inline CellType parse_cell(std::string_view s) {
  if (s == "lstm" || s == "LSTM") return CellType::lstm;
  if (s == "gru" || s == "GRU") return CellType::gru;
  throw ConfigError("unknown cell type '" + std::string(s) + "'");
}

struct ModelArch {
  CellType cell = CellType::lstm;
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 64;
  std::size_t lookback = 8;
  std::size_t horizon = 4;

  std::size_t concat_dim() const { return hidden_dim + input_dim; }
  std::size_t gate_count() const { return cell == CellType::lstm ? 4 : 3; }

  void validate() const {
    if (input_dim != 1) throw ConfigError("arch: input_dim must be 1 (univariate)");
    if (hidden_dim < 1) throw ConfigError("arch: hidden_dim must be >= 1");
    if (lookback < 1) throw ConfigError("arch: lookback must be >= 1");
    if (horizon < 1) throw ConfigError("arch: horizon must be >= 1");
  }

  friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

template <typename T>
struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<T> values;

  std::size_t size() const { return values.size(); }
};

// Gate names per cell; the full tensor set adds "W_<gate>", "b_<gate>" and
// the head "W_out", "b_out".
inline std::vector<std::string> gate_names(CellType cell) {
  if (cell == CellType::lstm) return {"f", "i", "g", "o"};
  return {"z", "r", "h"};
}

// Trainable tensors of one forecaster, kept in canonical order (byte-wise
// ascending by name), which is also the flatten and wire order.
template <typename T>
class Params {
 public:
  Params() = default;

  // Name and dims of every tensor for `arch`, canonical order, no storage.
  static std::vector<std::pair<std::string, std::vector<std::uint32_t>>> shapes(
      const ModelArch& arch) {
    arch.validate();
    const auto hid = static_cast<std::uint32_t>(arch.hidden_dim);
    const auto cat = static_cast<std::uint32_t>(arch.concat_dim());
    const auto hor = static_cast<std::uint32_t>(arch.horizon);
    std::vector<std::pair<std::string, std::vector<std::uint32_t>>> out;
    for (const auto& g : gate_names(arch.cell)) {
      out.push_back({"W_" + g, {hid, cat}});
      out.push_back({"b_" + g, {hid}});
    }
    out.push_back({"W_out", {hor, hid}});
    out.push_back({"b_out", {hor}});
    std::sort(out.begin(), out.end());
    return out;
  }

  static Params zeros(const ModelArch& arch) {
    Params p;
    for (auto& [name, dims] : shapes(arch)) {
      std::size_t n = 1;
      for (auto d : dims) n *= d;
      p.tensors_.push_back({name, dims, std::vector<T>(n, T{0})});
    }
    return p;
  }

  // Builds from arbitrary tensors; order is normalized.
  static Params from_tensors(std::vector<Tensor<T>> tensors) {
    Params p;
    p.tensors_ = std::move(tensors);
    p.canonicalize();
    return p;
  }

  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }

  const Tensor<T>* find(std::string_view name) const {
    for (const auto& t : tensors_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  const Tensor<T>& at(std::string_view name) const {
    const Tensor<T>* t = find(name);
    if (!t) throw DataError("params: no tensor named '" + std::string(name) + "'");
    return *t;
  }

  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  std::vector<T> flatten() const {
    std::vector<T> out;
    out.reserve(parameter_count());
    for (const auto& t : tensors_) out.insert(out.end(), t.values.begin(), t.values.end());
    return out;
  }

  void assign_flat(std::span<const T> flat) {
    if (flat.size() != parameter_count()) {
      throw DataError("params: flat size mismatch");
    }
    std::size_t off = 0;
    for (auto& t : tensors_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.values.begin());
      off += t.size();
    }
  }

  template <typename U>
  Params<U> cast() const {
    std::vector<Tensor<U>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) {
      Tensor<U> u{t.name, t.dims, std::vector<U>(t.values.size())};
      std::transform(t.values.begin(), t.values.end(), u.values.begin(),
                     [](T v) { return static_cast<U>(v); });
      out.push_back(std::move(u));
    }
    return Params<U>::from_tensors(std::move(out));
  }

  template <typename U>
  bool same_shape(const Params<U>& other) const {
    const auto& o = other.tensors();
    if (o.size() != tensors_.size()) return false;
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (o[i].name != tensors_[i].name || o[i].dims != tensors_[i].dims) return false;
    }
    return true;
  }

  bool matches(const ModelArch& arch) const {
    const auto want = shapes(arch);
    if (want.size() != tensors_.size()) return false;
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (want[i].first != tensors_[i].name || want[i].second != tensors_[i].dims) return false;
    }
    return true;
  }

  friend bool operator==(const Params& a, const Params& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
      if (a.tensors_[i].values != b.tensors_[i].values) return false;
    }
    return true;
  }

 private:
  void canonicalize() {
    std::sort(tensors_.begin(), tensors_.end(),
              [](const Tensor<T>& a, const Tensor<T>& b) { return a.name < b.name; });
  }

  std::vector<Tensor<T>> tensors_;
};

// The unit exchanged between server and clients.
using ModelParams = Params<float>;
// Gradients and working copies are kept in double precision.
using Gradient = Params<double>;

}  // namespace fedload
