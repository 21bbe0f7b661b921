#pragma once

#include <cstring>
#include <memory>
#include <span>
#include <vector>

#include "spg/linalg.hpp"
#include "spg/rng.hpp"
#include "spg/world.hpp"

namespace spg {

enum class NoisePolicy { fixed_zero, sampled, averaged };

struct ClassifierConfig {
  double temperature = 0.01;
  NoisePolicy noise = NoisePolicy::fixed_zero;
  std::uint64_t noise_seed = 0;
  std::size_t averaged_draws = 1;

  void validate() const {
    if (temperature <= 0.0) throw ConfigError("classifier: temperature must be > 0");
    if (noise == NoisePolicy::averaged && averaged_draws < 1) {
      throw ConfigError("classifier: averaged policy needs at least one draw");
    }
  }
};

struct Prediction {
  std::vector<double> probabilities;
  std::size_t predicted_class = 0;
  Tensor prompt_used;  // the (first) prompt the prediction was computed with
};

/// Anything that can produce a prompt for a given image embedding: a fixed
/// context, a conditional adapter, or the trained generator (which also
/// consumes a noise vector).
class PromptSource {
public:
  virtual ~PromptSource() = default;
  virtual Tensor prompt_values_for(const Tensor& embedding,
                                   const std::vector<double>& noise) const = 0;
  virtual std::size_t noise_dim() const { return 0; }
};

class FixedPromptSource : public PromptSource {
public:
  explicit FixedPromptSource(Tensor values) : values_(std::move(values)) {}
  explicit FixedPromptSource(const PromptContext& prompt) : values_(prompt.values) {}

  Tensor prompt_values_for(const Tensor&, const std::vector<double>&) const override {
    return values_;
  }

private:
  Tensor values_;
};

namespace detail {

inline std::uint64_t hash_tensor_bits(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : t.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::vector<double> noise_for_draw(const PromptSource& source,
                                          const ClassifierConfig& cfg, const Tensor& embedding,
                                          std::size_t draw) {
  const std::size_t zd = source.noise_dim();
  if (zd == 0 || cfg.noise == NoisePolicy::fixed_zero) {
    return std::vector<double>(zd, 0.0);
  }
  Rng rng(derive_seed(cfg.noise_seed, "inference-noise", hash_tensor_bits(embedding), draw));
  return rng.normal_vec(zd);
}

}  // namespace detail

/// Eq.-style prediction: class embeddings from the prompt source, cosine
/// similarities against the image embedding, softmax at temperature tau.
inline Prediction classify(const FrozenTextEncoder& encoder, const Tensor& token_table,
                           const PromptSource& source, const EmbeddedSample& sample,
                           const ClassifierConfig& cfg) {
  cfg.validate();
  const double norm = sample.embedding.l2_norm();
  if (std::abs(norm - 1.0) > 1e-6) {
    throw DegenerateInputError("classify: sample embedding is not unit norm");
  }
  const std::size_t k = token_table.rows();
  const std::size_t draws = cfg.noise == NoisePolicy::averaged ? cfg.averaged_draws : 1;

  Prediction pred;
  pred.probabilities.assign(k, 0.0);
  for (std::size_t draw = 0; draw < draws; ++draw) {
    const auto z = detail::noise_for_draw(source, cfg, sample.embedding, draw);
    Tensor prompt = source.prompt_values_for(sample.embedding, z);
    if (draw == 0) pred.prompt_used = prompt;
    Tensor w = encode_all_classes_plain(encoder, token_table, prompt);
    std::vector<double> logits(k);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) s += w.at(c, j) * sample.embedding[j];
      logits[c] = s / cfg.temperature;
    }
    const auto p = softmax_stable(logits.data(), k);
    for (std::size_t c = 0; c < k; ++c) pred.probabilities[c] += p[c];
  }
  double total = 0.0;
  for (double p : pred.probabilities) total += p;
  for (auto& p : pred.probabilities) p /= total;
  pred.predicted_class = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (pred.probabilities[c] > pred.probabilities[pred.predicted_class]) {
      pred.predicted_class = c;
    }
  }
  return pred;
}

inline Prediction classify(const FrozenWorld& world, const PromptSource& source,
                           const EmbeddedSample& sample, const ClassifierConfig& cfg) {
  return classify(world.encoder, world.token_table, source, sample, cfg);
}

/// Manual-prompt prediction; the zero-shot floor every report records.
inline Prediction zero_shot_classify(const FrozenWorld& world, const EmbeddedSample& sample,
                                     const ClassifierConfig& cfg = {}) {
  FixedPromptSource source(manual_prompt(world));
  return classify(world, source, sample, cfg);
}

inline double accuracy(const FrozenWorld& world, const PromptSource& source,
                       std::span<const EmbeddedSample> samples, const ClassifierConfig& cfg) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (classify(world, source, s, cfg).predicted_class == s.class_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline double accuracy_indexed(const FrozenWorld& world, const PromptSource& source,
                               std::size_t domain, std::span<const std::size_t> indices,
                               const ClassifierConfig& cfg) {
  if (indices.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : indices) {
    const auto& s = world.domains[domain][i];
    if (classify(world, source, s, cfg).predicted_class == s.class_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

}  // namespace spg
