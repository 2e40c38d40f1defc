#include "mmv/model/transformer.hpp"

#include "mmv/diffcore/ops.hpp"

namespace mmv::model {

template <typename T>
void add_block_params(ParamStore<T>& s, const std::string& prefix, std::size_t width, std::size_t hidden,
                      std::mt19937_64& rng) {
  s.create(prefix + ".ln1.g", {width}, Init::kOnes, rng);
  s.create(prefix + ".ln1.b", {width}, Init::kZeros, rng);
  for (const char* proj : {"q", "k", "v", "o"}) {
    s.create(prefix + "." + proj + ".w", {width, width}, Init::kNormal, rng);
    s.create(prefix + "." + proj + ".b", {width}, Init::kZeros, rng);
  }
  s.create(prefix + ".ln2.g", {width}, Init::kOnes, rng);
  s.create(prefix + ".ln2.b", {width}, Init::kZeros, rng);
  s.create(prefix + ".fc1.w", {width, hidden}, Init::kNormal, rng);
  s.create(prefix + ".fc1.b", {hidden}, Init::kZeros, rng);
  s.create(prefix + ".fc2.w", {hidden, width}, Init::kNormal, rng);
  s.create(prefix + ".fc2.b", {width}, Init::kZeros, rng);
}

template <typename T>
diff::Tensor<T> transformer_block(const diff::Tensor<T>& x, const ParamStore<T>& p, const std::string& prefix,
                                  std::size_t groups, std::size_t seq, std::size_t heads,
                                  std::span<const std::uint8_t> key_mask) {
  using namespace diff;
  const std::size_t width = x.rank() == 2 ? x.dim(1) : 0;
  if (heads == 0 || width % heads != 0)
    throw ConfigError(prefix + ": width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  auto lin = [&](const Tensor<T>& in, const std::string& name) {
    return linear(in, p.get(prefix + "." + name + ".w"), p.get(prefix + "." + name + ".b"));
  };
  const kernels::AttentionDims dims{groups, seq, heads, width / heads};

  const Tensor<T> n1 = layer_norm(x, p.get(prefix + ".ln1.g"), p.get(prefix + ".ln1.b"));
  const Tensor<T> att = attention(lin(n1, "q"), lin(n1, "k"), lin(n1, "v"), dims, key_mask);
  const Tensor<T> y = add(lin(att, "o"), x);

  const Tensor<T> n2 = layer_norm(y, p.get(prefix + ".ln2.g"), p.get(prefix + ".ln2.b"));
  return add(lin(gelu(lin(n2, "fc1")), "fc2"), y);
}

#define MMV_INSTANTIATE(T)                                                                                    \
  template void add_block_params(ParamStore<T>&, const std::string&, std::size_t, std::size_t,                \
                                 std::mt19937_64&);                                                           \
  template diff::Tensor<T> transformer_block(const diff::Tensor<T>&, const ParamStore<T>&, const std::string&, \
                                             std::size_t, std::size_t, std::size_t, std::span<const std::uint8_t>);

MMV_INSTANTIATE(float)
MMV_INSTANTIATE(double)

}  // namespace mmv::model
