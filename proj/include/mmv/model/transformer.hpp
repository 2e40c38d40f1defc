#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mmv/diffcore/kernels.hpp"
#include "mmv/diffcore/tensor.hpp"
#include "mmv/model/params.hpp"

namespace mmv::model {

/// Creates `<prefix>.ln1.{g,b}`, `<prefix>.{q,k,v,o}.{w,b}`, `<prefix>.ln2.{g,b}`
/// and `<prefix>.fc{1,2}.{w,b}` for a pre-norm block of the given width.
template <typename T>
void add_block_params(ParamStore<T>& store, const std::string& prefix, std::size_t width, std::size_t hidden,
                      std::mt19937_64& rng);

/// Scalar count of one block.
constexpr std::size_t block_param_count(std::size_t width, std::size_t hidden) {
  return 4 * (width * width + width) + 4 * width + (width * hidden + hidden) + (hidden * width + width);
}

/// y = MSA(LN(x)) + x, out = MLP(LN(y)) + y with a GELU MLP.
/// x: [groups*seq, width]; keys with a zero mask entry get zero weight.
template <typename T>
diff::Tensor<T> transformer_block(const diff::Tensor<T>& x, const ParamStore<T>& params, const std::string& prefix,
                                  std::size_t groups, std::size_t seq, std::size_t heads,
                                  std::span<const std::uint8_t> key_mask = {});

}  // namespace mmv::model
