#include "mmv/model/params.hpp"

namespace mmv::model {

template <typename T>
diff::Tensor<T>& ParamStore<T>::create(const std::string& name, Shape shape, Init init, std::mt19937_64& rng) {
  std::vector<T> values(shape_numel(shape));
  switch (init) {
    case Init::kNormal: {
      std::normal_distribution<double> nd(0.0, kInitStd);
      for (auto& v : values) v = static_cast<T>(nd(rng));
      break;
    }
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), T(1));
      break;
  }
  return adopt(name, diff::Tensor<T>::from(std::move(shape), std::move(values), true));
}

template <typename T>
diff::Tensor<T>& ParamStore<T>::adopt(const std::string& name, diff::Tensor<T> tensor) {
  if (contains(name)) throw ConfigError("parameter " + name + " defined twice");
  index_[name] = names_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(tensor));
  return tensors_.back();
}

template <typename T>
const diff::Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter " + name);
  return tensors_[it->second];
}

template <typename T>
diff::Tensor<T>& ParamStore<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter " + name);
  return tensors_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
void ParamStore<T>::set_trainable(std::string_view prefix, bool trainable) {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (std::string_view(names_[i]).starts_with(prefix)) tensors_[i].node()->requires_grad = trainable;
}

template <typename T>
std::vector<diff::Tensor<T>> ParamStore<T>::trainable() const {
  std::vector<diff::Tensor<T>> out;
  for (const auto& t : tensors_)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace mmv::model
