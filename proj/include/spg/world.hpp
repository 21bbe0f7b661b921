#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spg/errors.hpp"
#include "spg/mlp.hpp"
#include "spg/prompt.hpp"
#include "spg/rng.hpp"
#include "spg/tape.hpp"
#include "spg/tensor.hpp"

namespace spg {

enum class ShiftKind { rotation, bias, rotation_bias };

inline std::string to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::rotation: return "rotation";
    case ShiftKind::bias: return "bias";
    default: return "rotation+bias";
  }
}

/// Describes a synthetic benchmark: class geometry on the unit sphere, one
/// shift transform per domain, Gaussian sample noise and a frozen text
/// encoder. Everything is a pure function of the seed.
struct BenchmarkSpec {
  std::size_t num_domains = 4;
  std::size_t num_source_domains = 3;
  std::size_t num_classes = 5;
  std::size_t embed_dim = 16;
  std::size_t samples_per_domain = 500;
  std::size_t context_length = 4;
  std::size_t encoder_hidden = 64;
  double class_separation = 1.0;  // minimum pairwise angle between class means, radians
  double noise_std = 0.15;
  double shift_strength = 0.5;
  ShiftKind shift_kind = ShiftKind::rotation;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_classes < 2) throw ConfigError("benchmark: num_classes must be >= 2");
    if (embed_dim < 4) throw ConfigError("benchmark: embed_dim must be >= 4");
    if (samples_per_domain < num_classes) {
      throw ConfigError("benchmark: samples_per_domain must be >= num_classes");
    }
    if (noise_std < 0.0) throw ConfigError("benchmark: noise_std must be >= 0");
    if (num_domains < 2) throw ConfigError("benchmark: num_domains must be >= 2");
    if (num_source_domains == 0 || num_source_domains >= num_domains) {
      throw ConfigError("benchmark: need 1 <= num_source_domains < num_domains");
    }
    if (context_length == 0) throw ConfigError("benchmark: context_length must be >= 1");
    if (shift_strength < 0.0) throw ConfigError("benchmark: shift_strength must be >= 0");
    if (class_separation <= 0.0 || class_separation > 3.14159265358979323846) {
      throw ConfigError("benchmark: class_separation must be in (0, pi]");
    }
  }
};

/// An image stand-in: a unit embedding with its class and domain.
struct EmbeddedSample {
  Tensor embedding;  // rank-1, unit norm
  std::size_t class_label = 0;
  std::size_t domain_id = 0;
};

/// Ground-truth shift applied by one domain (empty tensors when unused).
struct DomainTransform {
  Tensor rotation;  // d x d orthogonal, or empty
  Tensor bias;      // rank-1 d, or empty
};

/// Frozen map from a flattened [(L+1) x d] token sequence to a unit vector.
/// The weights never train; gradients flow only to the prompt input.
struct FrozenTextEncoder {
  Mlp net;  // tanh hidden, linear out
  std::size_t context_length = 0;
  std::size_t embed_dim = 0;
};

struct FrozenWorld {
  BenchmarkSpec spec;
  Tensor class_means;  // K x d unit rows (pre-shift geometry)
  Tensor token_table;  // K x d frozen class tokens
  FrozenTextEncoder encoder;
  std::vector<DomainTransform> transforms;           // one per domain
  std::vector<std::vector<EmbeddedSample>> domains;  // samples per domain
  PromptContext manual;                              // fixed template stand-in

  std::size_t num_domains() const { return domains.size(); }
  std::size_t num_classes() const { return token_table.rows(); }
  std::size_t embed_dim() const { return spec.embed_dim; }
  std::size_t context_length() const { return spec.context_length; }
};

/// The fixed handcrafted-template stand-in; identical for a given world.
inline PromptContext manual_prompt(const FrozenWorld& world) {
  PromptContext p = world.manual;
  p.init_mode = PromptInit::template_proxy;
  return p;
}

namespace detail {

/// Orthogonalizes I + strength * G column-by-column (modified Gram-Schmidt,
/// positive diagonal). strength 0 gives the identity; large strength
/// approaches a uniformly random rotation.
inline Tensor random_orthogonal(std::size_t d, double strength, Rng& rng) {
  Tensor a({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      a.at(i, j) = (i == j ? 1.0 : 0.0) + strength * rng.normal();
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += a.at(i, j) * a.at(i, prev);
      for (std::size_t i = 0; i < d; ++i) a.at(i, j) -= proj * a.at(i, prev);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += a.at(i, j) * a.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("random_orthogonal: degenerate column");
    double sign = a.at(j, j) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < d; ++i) a.at(i, j) *= sign / norm;
  }
  return a;
}

inline std::vector<double> apply_transform(const DomainTransform& t,
                                           const std::vector<double>& x) {
  std::vector<double> y = x;
  if (t.rotation.numel() > 0) {
    const std::size_t d = x.size();
    std::vector<double> r(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) r[i] += t.rotation.at(i, j) * x[j];
    }
    y = std::move(r);
  }
  if (t.bias.numel() > 0) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += t.bias[i];
  }
  return y;
}

/// Draws K unit vectors with pairwise angle >= separation, restarting on
/// failure a bounded number of times.
inline Tensor place_class_means(std::size_t k, std::size_t d, double separation, Rng& rng) {
  const double max_cos = std::cos(separation);
  for (int restart = 0; restart < 64; ++restart) {
    std::vector<std::vector<double>> means;
    means.reserve(k);
    bool ok = true;
    for (std::size_t c = 0; c < k && ok; ++c) {
      bool placed = false;
      for (int attempt = 0; attempt < 512; ++attempt) {
        auto cand = rng.unit_vector(d);
        bool far_enough = true;
        for (const auto& m : means) {
          if (dot(cand, m) > max_cos) {
            far_enough = false;
            break;
          }
        }
        if (far_enough) {
          means.push_back(std::move(cand));
          placed = true;
          break;
        }
      }
      ok = placed;
    }
    if (ok) {
      Tensor out({k, d});
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < d; ++j) out.at(c, j) = means[c][j];
      }
      return out;
    }
  }
  throw InfeasibleSpecError("cannot place " + std::to_string(k) + " class means in " +
                            std::to_string(d) + " dims at separation " +
                            std::to_string(separation));
}

inline DomainTransform draw_transform(const BenchmarkSpec& spec, Rng& rng) {
  DomainTransform t;
  if (spec.shift_kind == ShiftKind::rotation || spec.shift_kind == ShiftKind::rotation_bias) {
    t.rotation = random_orthogonal(spec.embed_dim, spec.shift_strength, rng);
  }
  if (spec.shift_kind == ShiftKind::bias || spec.shift_kind == ShiftKind::rotation_bias) {
    auto dir = rng.unit_vector(spec.embed_dim);
    for (auto& x : dir) x *= spec.shift_strength;
    t.bias = Tensor::vector(std::move(dir));
  }
  return t;
}

inline std::vector<EmbeddedSample> draw_domain_samples(const BenchmarkSpec& spec,
                                                       const Tensor& class_means,
                                                       const DomainTransform& transform,
                                                       std::size_t domain_id, Rng& rng) {
  std::vector<EmbeddedSample> samples;
  samples.reserve(spec.samples_per_domain);
  for (std::size_t j = 0; j < spec.samples_per_domain; ++j) {
    const std::size_t label = j % spec.num_classes;
    std::vector<double> mean(spec.embed_dim);
    for (std::size_t i = 0; i < spec.embed_dim; ++i) mean[i] = class_means.at(label, i);
    std::vector<double> x = apply_transform(transform, mean);
    for (auto& v : x) v += spec.noise_std * rng.normal();
    double norm = 0.0;
    for (double v : x) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("sample collapsed to zero norm");
    for (auto& v : x) v /= norm;
    samples.push_back(EmbeddedSample{Tensor::vector(std::move(x)), label, domain_id});
  }
  return samples;
}

// Initialization scales for the frozen pieces. Chosen so that hidden
// pre-activations sit in tanh's curved region for trained prompt magnitudes.
constexpr double kTokenStd = 1.0;
constexpr double kEncoderW1Std = 0.2;
constexpr double kEncoderW2Std = 0.125;
constexpr double kEncoderB1Std = 0.2;
constexpr double kManualPromptStd = 0.25;

}  // namespace detail

inline FrozenWorld generate_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  FrozenWorld world;
  world.spec = spec;

  Rng geometry_rng(derive_seed(spec.seed, "world-geometry"));
  world.class_means = detail::place_class_means(spec.num_classes, spec.embed_dim,
                                                spec.class_separation, geometry_rng);
  world.token_table =
      Tensor({spec.num_classes, spec.embed_dim},
             geometry_rng.normal_vec(spec.num_classes * spec.embed_dim, 0.0, detail::kTokenStd));

  Rng encoder_rng(derive_seed(spec.seed, "world-encoder"));
  const std::size_t enc_in = (spec.context_length + 1) * spec.embed_dim;
  world.encoder.net =
      Mlp::create(enc_in, spec.encoder_hidden, spec.embed_dim, Activation::tanh, encoder_rng,
                  detail::kEncoderW1Std, detail::kEncoderW2Std, detail::kEncoderB1Std);
  world.encoder.context_length = spec.context_length;
  world.encoder.embed_dim = spec.embed_dim;

  Rng manual_rng(derive_seed(spec.seed, "world-manual-prompt"));
  world.manual.values =
      Tensor({spec.context_length, spec.embed_dim},
             manual_rng.normal_vec(spec.context_length * spec.embed_dim, 0.0,
                                   detail::kManualPromptStd));
  world.manual.init_mode = PromptInit::template_proxy;

  world.transforms.reserve(spec.num_domains);
  world.domains.reserve(spec.num_domains);
  for (std::size_t d = 0; d < spec.num_domains; ++d) {
    Rng domain_rng(derive_seed(spec.seed, "world-domain", d));
    world.transforms.push_back(detail::draw_transform(spec, domain_rng));
    world.domains.push_back(
        detail::draw_domain_samples(spec, world.class_means, world.transforms.back(), d,
                                    domain_rng));
  }
  return world;
}

/// New world sharing this one's class geometry, token table, encoder and
/// manual prompt, with freshly drawn domains at the given shift strength.
/// This is how downstream "datasets" for cross-dataset transfer are made.
inline FrozenWorld respawn_domains(const FrozenWorld& base, std::size_t num_domains,
                                   std::size_t num_source_domains, double shift_strength,
                                   std::uint64_t seed) {
  BenchmarkSpec spec = base.spec;
  spec.num_domains = num_domains;
  spec.num_source_domains = num_source_domains;
  spec.shift_strength = shift_strength;
  spec.seed = seed;
  spec.validate();

  FrozenWorld world;
  world.spec = spec;
  world.class_means = base.class_means;
  world.token_table = base.token_table;
  world.encoder = base.encoder;
  world.manual = base.manual;
  for (std::size_t d = 0; d < spec.num_domains; ++d) {
    Rng domain_rng(derive_seed(spec.seed, "world-domain", d));
    world.transforms.push_back(detail::draw_transform(spec, domain_rng));
    world.domains.push_back(
        detail::draw_domain_samples(spec, world.class_means, world.transforms.back(), d,
                                    domain_rng));
  }
  return world;
}

/// Per-domain train/validation index split, stratified by class.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline std::vector<Split> split_train_val(const FrozenWorld& world, double val_fraction,
                                          std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0) {
    throw ConfigError("split_train_val: val_fraction must be in (0, 1)");
  }
  std::vector<Split> splits(world.num_domains());
  for (std::size_t d = 0; d < world.num_domains(); ++d) {
    std::vector<std::vector<std::size_t>> by_class(world.num_classes());
    for (std::size_t i = 0; i < world.domains[d].size(); ++i) {
      by_class[world.domains[d][i].class_label].push_back(i);
    }
    Rng rng(derive_seed(seed, "split", d));
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto& members = by_class[c];
      if (members.size() < 2) {
        throw DegenerateInputError("split_train_val: class " + std::to_string(c) +
                                   " in domain " + std::to_string(d) + " has fewer than 2 samples");
      }
      rng.shuffle(members);
      std::size_t n_val = static_cast<std::size_t>(
          std::llround(val_fraction * static_cast<double>(members.size())));
      n_val = std::max<std::size_t>(1, std::min(n_val, members.size() - 1));
      for (std::size_t i = 0; i < members.size(); ++i) {
        (i < n_val ? splits[d].val : splits[d].train).push_back(members[i]);
      }
    }
    std::sort(splits[d].train.begin(), splits[d].train.end());
    std::sort(splits[d].val.begin(), splits[d].val.end());
  }
  return splits;
}

/// Class embeddings w_i = normalize(g([prompt; c_i])) for every class at
/// once, without gradients. Returns K x d unit rows.
inline Tensor encode_all_classes_plain(const FrozenTextEncoder& encoder,
                                       const Tensor& token_table, const Tensor& prompt_values) {
  const std::size_t k = token_table.rows();
  const std::size_t ld = prompt_values.numel();
  if (prompt_values.rank() != 2 || prompt_values.rows() != encoder.context_length ||
      prompt_values.cols() != encoder.embed_dim) {
    throw DimensionError("encode: prompt shape " + prompt_values.shape_string() +
                         " does not match encoder context");
  }
  Tensor input({k, ld + token_table.cols()});
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < ld; ++j) input.at(c, j) = prompt_values[j];
    for (std::size_t j = 0; j < token_table.cols(); ++j) {
      input.at(c, ld + j) = token_table.at(c, j);
    }
  }
  Tensor out = encoder.net.forward_plain(input);
  l2_normalize_rows_inplace(out);
  return out;
}

/// Tape version of encode_all_classes: gradient flows into the prompt var
/// only; encoder weights and the token table enter as constants.
inline Tape::Var encode_all_classes(Tape& tape, const FrozenTextEncoder& encoder,
                                    Tape::Var prompt, const Tensor& token_table) {
  const Tensor& pv = tape.value(prompt);
  if (pv.rank() != 2 || pv.rows() != encoder.context_length ||
      pv.cols() != encoder.embed_dim) {
    throw DimensionError("encode: prompt shape " + pv.shape_string() +
                         " does not match encoder context");
  }
  const std::size_t k = token_table.rows();
  Tape::Var flat = tape.reshape(prompt, {1, pv.numel()});
  Tape::Var tiled = tape.tile_rows(flat, k);
  Tape::Var tokens = tape.constant(token_table);
  Tape::Var input = tape.concat({tiled, tokens}, 1);
  Mlp::Vars enc = encoder.net.register_frozen(tape);
  Tape::Var raw = encoder.net.forward(tape, enc, input);
  return tape.l2_normalize_rows(raw);
}

/// Single-class text embedding w = normalize(g([prompt; c_class])).
inline Tensor encode_text(const FrozenTextEncoder& encoder, const Tensor& token_table,
                          const Tensor& prompt_values, std::size_t class_id) {
  if (class_id >= token_table.rows()) {
    throw DimensionError("encode_text: class id out of range");
  }
  Tensor all = encode_all_classes_plain(encoder, token_table, prompt_values);
  std::vector<double> row(all.cols());
  for (std::size_t j = 0; j < all.cols(); ++j) row[j] = all.at(class_id, j);
  return Tensor::vector(std::move(row));
}

}  // namespace spg
