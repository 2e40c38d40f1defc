#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmv/diffcore/tensor.hpp"

namespace mmv::model {

inline constexpr double kInitStd = 0.02;

enum class Init : std::uint8_t { kNormal, kZeros, kOnes };

/// Named parameters in creation order. Order is part of the checkpoint
/// format and of the optimizer state layout.
template <typename T>
class ParamStore {
 public:
  diff::Tensor<T>& create(const std::string& name, Shape shape, Init init, std::mt19937_64& rng);
  /// Adopts an existing tensor (checkpoint loading, precision conversion).
  diff::Tensor<T>& adopt(const std::string& name, diff::Tensor<T> tensor);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws ConfigError naming the missing parameter.
  const diff::Tensor<T>& get(const std::string& name) const;
  diff::Tensor<T>& get(const std::string& name);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<diff::Tensor<T>>& tensors() const { return tensors_; }
  std::size_t size() const { return names_.size(); }
  /// Total scalar count.
  std::size_t numel() const;

  /// Marks every parameter whose name starts with `prefix`.
  void set_trainable(std::string_view prefix, bool trainable);
  std::vector<diff::Tensor<T>> trainable() const;
  void zero_grad();

  /// Deep copy with values converted to U; trainability is preserved.
  template <typename U>
  ParamStore<U> convert() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const auto src = tensors_[i].data();
      auto t = diff::Tensor<U>::from(tensors_[i].shape(), std::vector<U>(src.begin(), src.end()),
                                     tensors_[i].requires_grad());
      out.adopt(names_[i], t);
    }
    return out;
  }

  /// Deep copy of values (no shared nodes).
  ParamStore clone() const { return convert<T>(); }

 private:
  std::vector<std::string> names_;
  std::vector<diff::Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace mmv::model
