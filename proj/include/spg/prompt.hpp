#pragma once

#include <span>
#include <vector>

#include "spg/rng.hpp"
#include "spg/tensor.hpp"

namespace spg {

enum class PromptInit { template_proxy, gaussian };

/// The learnable soft-prompt context: L rows of d-dimensional vectors.
struct PromptContext {
  Tensor values;  // L x d
  PromptInit init_mode = PromptInit::template_proxy;

  std::size_t context_length() const { return values.rows(); }
  std::size_t embed_dim() const { return values.cols(); }
};

/// Gaussian prompt initialization (std 0.02), shared by every learnable
/// design that does not start from the fixed template context.
inline PromptContext gaussian_prompt(std::size_t length, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "prompt-init"));
  PromptContext p;
  p.values = Tensor({length, dim}, rng.normal_vec(length * dim, 0.0, 0.02));
  p.init_mode = PromptInit::gaussian;
  return p;
}

/// Equal-weight average of prompt matrices.
inline PromptContext mix_prompts(std::span<const PromptContext> prompts) {
  if (prompts.empty()) throw DimensionError("mix_prompts requires at least one prompt");
  Tensor acc = prompts[0].values;
  for (std::size_t i = 1; i < prompts.size(); ++i) {
    if (!prompts[i].values.same_shape(acc)) {
      throw DimensionError("mix_prompts: shape mismatch across prompts");
    }
    for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += prompts[i].values[j];
  }
  const double inv = 1.0 / static_cast<double>(prompts.size());
  for (auto& x : acc.data()) x *= inv;
  PromptContext out;
  out.values = std::move(acc);
  out.init_mode = prompts[0].init_mode;
  return out;
}

}  // namespace spg
