#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spg/classifier.hpp"
#include "spg/optim.hpp"
#include "spg/world.hpp"

namespace spg {

inline PromptContext init_prompt(PromptInit mode, const FrozenWorld& world, std::uint64_t seed) {
  if (mode == PromptInit::template_proxy) return manual_prompt(world);
  return gaussian_prompt(world.context_length(), world.embed_dim(), seed);
}

struct Stage1Config {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double lr = 2e-2;
  PromptInit init = PromptInit::template_proxy;
  double val_fraction = 0.2;
  double temperature = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("stage1: batch_size must be >= 1");
    if (lr <= 0.0) throw ConfigError("stage1: lr must be > 0");
    if (temperature <= 0.0) throw ConfigError("stage1: temperature must be > 0");
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
      throw ConfigError("stage1: val_fraction must be in (0, 1)");
    }
  }
};

struct TrainTrace {
  double initial_val_ce = 0.0;
  double best_val_ce = 0.0;
  std::size_t selected_epoch = 0;
  std::size_t epochs_run = 0;
  double final_train_ce = 0.0;  // train CE of the selected prompt
  double train_accuracy = 0.0;  // selected prompt, within-domain train split
  double val_accuracy = 0.0;    // selected prompt, within-domain val split
};

/// Stage-I output for one source domain: the prompt trained to optimality on
/// that domain's data, frozen afterwards.
struct DomainPromptLabel {
  std::size_t domain_id = 0;
  PromptContext prompt;
  TrainTrace trace;
};

/// A (domain, sample index) reference into a world.
struct SampleRef {
  std::size_t domain = 0;
  std::size_t index = 0;
};

namespace detail {

inline std::pair<Tensor, std::vector<std::size_t>> gather_batch(
    const FrozenWorld& world, std::span<const SampleRef> refs) {
  const std::size_t d = world.embed_dim();
  Tensor embeddings({refs.size(), d});
  std::vector<std::size_t> labels(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& s = world.domains[refs[i].domain][refs[i].index];
    for (std::size_t j = 0; j < d; ++j) embeddings.at(i, j) = s.embedding[j];
    labels[i] = s.class_label;
  }
  return {std::move(embeddings), std::move(labels)};
}

/// Mean CE and accuracy of a fixed prompt over the referenced samples.
inline std::pair<double, double> fixed_prompt_metrics(const FrozenWorld& world,
                                                      const Tensor& prompt_values,
                                                      std::span<const SampleRef> refs,
                                                      double tau) {
  const Tensor w = encode_all_classes_plain(world.encoder, world.token_table, prompt_values);
  const std::size_t k = w.rows();
  double ce = 0.0;
  std::size_t hits = 0;
  std::vector<double> logits(k);
  for (const auto& ref : refs) {
    const auto& s = world.domains[ref.domain][ref.index];
    for (std::size_t c = 0; c < k; ++c) {
      double dot_cs = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) dot_cs += w.at(c, j) * s.embedding[j];
      logits[c] = dot_cs / tau;
    }
    ce += log_sum_exp(logits.data(), k) - logits[s.class_label];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c] > logits[arg]) arg = c;
    }
    if (arg == s.class_label) ++hits;
  }
  const double n = static_cast<double>(refs.size());
  return {ce / n, static_cast<double>(hits) / n};
}

inline std::vector<SampleRef> domain_refs(std::size_t domain,
                                          std::span<const std::size_t> indices) {
  std::vector<SampleRef> refs;
  refs.reserve(indices.size());
  for (std::size_t i : indices) refs.push_back({domain, i});
  return refs;
}

}  // namespace detail

/// Builds the Stage-I objective on a tape: cross-entropy of the cosine
/// classifier at temperature tau, differentiating through the frozen encoder
/// into the prompt.
inline Tape::Var stage1_loss(Tape& tape, const FrozenWorld& world, Tape::Var prompt,
                             const Tensor& batch_embeddings,
                             const std::vector<std::size_t>& labels, double tau) {
  Tape::Var w = encode_all_classes(tape, world.encoder, prompt, world.token_table);
  Tape::Var f = tape.constant(batch_embeddings);
  Tape::Var logits = tape.scale(1.0 / tau, tape.matmul_nt(f, w));
  return tape.cross_entropy_mean(logits, labels);
}

namespace detail {

/// Shared Stage-I loop: SGD on the prompt only, best-validation-CE epoch
/// selection (epoch 0 is the initialization).
inline std::pair<PromptContext, TrainTrace> train_prompt_on(
    const FrozenWorld& world, std::vector<SampleRef> train_refs,
    std::vector<SampleRef> val_refs, const Stage1Config& cfg, const std::string& context) {
  cfg.validate();
  if (train_refs.empty()) throw TrainingError(context + ": empty training set");

  PromptContext prompt = init_prompt(cfg.init, world, derive_seed(cfg.seed, "stage1-init"));
  prompt.values.set_requires_grad(true);
  ParamGroup group{"prompt", {&prompt.values}, std::nullopt};

  auto [init_ce, init_acc] = fixed_prompt_metrics(world, prompt.values, val_refs,
                                                  cfg.temperature);
  Tensor best_values = prompt.values;
  TrainTrace trace;
  trace.initial_val_ce = init_ce;
  trace.best_val_ce = init_ce;
  trace.selected_epoch = 0;

  Rng order_rng(derive_seed(cfg.seed, "stage1-order"));
  try {
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      order_rng.shuffle(train_refs);
      for (std::size_t start = 0; start < train_refs.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(start + cfg.batch_size, train_refs.size());
        auto [embeddings, labels] = gather_batch(
            world, std::span<const SampleRef>(train_refs).subspan(start, stop - start));
        Tape tape;
        Tape::Var pv = tape.leaf(prompt.values);
        Tape::Var loss = stage1_loss(tape, world, pv, embeddings, labels, cfg.temperature);
        prompt.values.zero_grad();
        tape.backward(loss);
        sgd_step(group, cfg.lr);
      }
      const auto [val_ce, val_acc] = fixed_prompt_metrics(world, prompt.values, val_refs,
                                                          cfg.temperature);
      if (val_ce < trace.best_val_ce) {
        trace.best_val_ce = val_ce;
        trace.selected_epoch = epoch;
        best_values = prompt.values;
      }
    }
  } catch (const NumericError& e) {
    throw TrainingError(context + " diverged: " + e.what());
  }

  trace.epochs_run = cfg.epochs;
  prompt.values = best_values;
  prompt.values.set_requires_grad(false);
  auto [train_ce, train_acc] = fixed_prompt_metrics(world, prompt.values, train_refs,
                                                    cfg.temperature);
  auto [val_ce, val_acc] = fixed_prompt_metrics(world, prompt.values, val_refs,
                                                cfg.temperature);
  trace.final_train_ce = train_ce;
  trace.train_accuracy = train_acc;
  trace.val_accuracy = val_acc;
  return {std::move(prompt), trace};
}

}  // namespace detail

/// Learns the domain prompt label for one source domain (its split is
/// derived from cfg.seed so every design sees the same partition).
inline DomainPromptLabel train_domain_prompt_label(const FrozenWorld& world,
                                                   std::size_t domain_id,
                                                   const Stage1Config& cfg) {
  if (domain_id >= world.num_domains()) {
    throw ConfigError("train_domain_prompt_label: domain id out of range");
  }
  const auto splits = split_train_val(world, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  auto [prompt, trace] = detail::train_prompt_on(
      world, detail::domain_refs(domain_id, splits[domain_id].train),
      detail::domain_refs(domain_id, splits[domain_id].val), cfg,
      "stage1 domain " + std::to_string(domain_id));
  return DomainPromptLabel{domain_id, std::move(prompt), trace};
}

/// One prompt over the pooled source-domain training data.
inline std::pair<PromptContext, TrainTrace> train_all_domain_prompt(
    const FrozenWorld& world, std::span<const std::size_t> source_domains,
    const Stage1Config& cfg) {
  if (source_domains.empty()) throw ConfigError("train_all_domain_prompt: no source domains");
  const auto splits = split_train_val(world, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  std::vector<SampleRef> train_refs, val_refs;
  for (std::size_t d : source_domains) {
    for (std::size_t i : splits[d].train) train_refs.push_back({d, i});
    for (std::size_t i : splits[d].val) val_refs.push_back({d, i});
  }
  return detail::train_prompt_on(world, std::move(train_refs), std::move(val_refs), cfg,
                                 "stage1 pooled");
}

/// Equal-weight mix of trained domain prompt labels.
inline PromptContext mix_domain_prompt(std::span<const DomainPromptLabel> labels) {
  std::vector<PromptContext> prompts;
  prompts.reserve(labels.size());
  for (const auto& l : labels) prompts.push_back(l.prompt);
  return mix_prompts(prompts);
}

enum class AdapterMode { residual, concat };

/// Image-conditional prompt baseline: a small MLP maps f(x) to either a
/// d-dim residual added to every context row, or a full L x d context.
struct ConditionalAdapter : public PromptSource {
  AdapterMode mode = AdapterMode::residual;
  PromptContext base;  // the v of residual mode; unused rows in concat mode
  Mlp phi;
  TrainTrace trace;

  Tensor prompt_values_for(const Tensor& embedding,
                           const std::vector<double>&) const override {
    Tensor input({1, embedding.numel()}, embedding.data());
    Tensor out = phi.forward_plain(input);
    const std::size_t l = base.values.rows(), d = base.values.cols();
    if (mode == AdapterMode::residual) {
      Tensor context = base.values;
      for (std::size_t r = 0; r < l; ++r) {
        for (std::size_t j = 0; j < d; ++j) context.at(r, j) += out[j];
      }
      return context;
    }
    return Tensor({l, d}, out.data());
  }
};

struct ConditionalConfig {
  std::size_t epochs = 120;
  std::size_t batch_size = 32;
  double lr = 2e-2;
  std::size_t hidden = 32;
  double val_fraction = 0.2;
  double temperature = 0.01;
  std::uint64_t seed = 0;
};

/// Trains the conditional baseline jointly (prompt + adapter) on pooled
/// source data. The adapter's output layer starts at zero, so the first
/// forward equals the fixed-prompt forward.
inline ConditionalAdapter train_conditional_prompt(const FrozenWorld& world, AdapterMode mode,
                                                   std::span<const std::size_t> source_domains,
                                                   const ConditionalConfig& cfg) {
  if (source_domains.empty()) throw ConfigError("train_conditional_prompt: no source domains");
  const std::size_t l = world.context_length(), d = world.embed_dim();
  const std::size_t out_dim = mode == AdapterMode::residual ? d : l * d;

  ConditionalAdapter adapter;
  adapter.mode = mode;
  adapter.base = manual_prompt(world);
  Rng phi_rng(derive_seed(cfg.seed, "adapter-init"));
  adapter.phi = Mlp::create(d, cfg.hidden, out_dim, Activation::tanh, phi_rng,
                            1.0 / std::sqrt(static_cast<double>(d)), 0.0, 0.0,
                            /*zero_output_layer=*/true);

  const auto splits = split_train_val(world, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  std::vector<SampleRef> train_refs, val_refs;
  for (std::size_t dom : source_domains) {
    for (std::size_t i : splits[dom].train) train_refs.push_back({dom, i});
    for (std::size_t i : splits[dom].val) val_refs.push_back({dom, i});
  }
  if (train_refs.empty()) throw TrainingError("conditional adapter: empty training set");

  adapter.base.values.set_requires_grad(mode == AdapterMode::residual);
  adapter.phi.set_requires_grad(true);
  std::vector<Tensor*> params = adapter.phi.all_params();
  if (mode == AdapterMode::residual) params.push_back(&adapter.base.values);
  ParamGroup group{"conditional", params, std::nullopt};

  const auto metrics_over = [&](const std::vector<SampleRef>& refs) {
    double ce = 0.0;
    std::size_t hits = 0;
    ClassifierConfig ccfg;
    ccfg.temperature = cfg.temperature;
    for (const auto& ref : refs) {
      const auto& s = world.domains[ref.domain][ref.index];
      const Prediction p = classify(world, adapter, s, ccfg);
      ce += -std::log(std::max(p.probabilities[s.class_label], 1e-300));
      if (p.predicted_class == s.class_label) ++hits;
    }
    const double n = static_cast<double>(refs.size());
    return std::pair<double, double>{ce / n, static_cast<double>(hits) / n};
  };
  const auto val_metrics = [&]() { return metrics_over(val_refs); };

  auto [best_ce, best_acc] = val_metrics();
  Tensor best_base = adapter.base.values;
  Mlp best_phi = adapter.phi;
  adapter.trace.initial_val_ce = best_ce;
  adapter.trace.best_val_ce = best_ce;
  adapter.trace.selected_epoch = 0;

  Rng order_rng(derive_seed(cfg.seed, "adapter-order"));
  try {
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      order_rng.shuffle(train_refs);
      for (std::size_t start = 0; start < train_refs.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(start + cfg.batch_size, train_refs.size());
        Tape tape;
        Mlp::Vars phi_vars = adapter.phi.register_on(tape, true);
        Tape::Var base_var = mode == AdapterMode::residual
                                 ? tape.leaf(adapter.base.values)
                                 : tape.constant(adapter.base.values);
        Tape::Var total = tape.constant(Tensor::scalar(0.0));
        for (std::size_t bi = start; bi < stop; ++bi) {
          const auto& s = world.domains[train_refs[bi].domain][train_refs[bi].index];
          Tape::Var f_row = tape.constant(Tensor({1, d}, s.embedding.data()));
          Tape::Var phi_out = adapter.phi.forward(tape, phi_vars, f_row);
          Tape::Var context = mode == AdapterMode::residual
                                  ? tape.add(base_var, tape.tile_rows(phi_out, l))
                                  : tape.reshape(phi_out, {l, d});
          Tape::Var w = encode_all_classes(tape, world.encoder, context, world.token_table);
          Tape::Var logits =
              tape.scale(1.0 / cfg.temperature,
                         tape.matmul_nt(tape.constant(Tensor({1, d}, s.embedding.data())), w));
          Tape::Var loss =
              tape.softmax_cross_entropy(tape.reshape(logits, {world.num_classes()}),
                                         s.class_label);
          total = tape.add(total, loss);
        }
        Tape::Var mean_loss = tape.scale(1.0 / static_cast<double>(stop - start), total);
        for (Tensor* p : params) p->zero_grad();
        tape.backward(mean_loss);
        sgd_step(group, cfg.lr);
      }
      const auto [ce, acc] = val_metrics();
      if (ce < adapter.trace.best_val_ce) {
        adapter.trace.best_val_ce = ce;
        adapter.trace.selected_epoch = epoch;
        best_base = adapter.base.values;
        best_phi = adapter.phi;
      }
    }
  } catch (const NumericError& e) {
    throw TrainingError(std::string("conditional adapter diverged: ") + e.what());
  }

  adapter.base.values = best_base;
  adapter.phi = best_phi;
  adapter.base.values.set_requires_grad(false);
  adapter.phi.set_requires_grad(false);
  adapter.trace.epochs_run = cfg.epochs;
  const auto [val_ce, val_acc] = val_metrics();
  const auto [train_ce, train_acc] = metrics_over(train_refs);
  adapter.trace.val_accuracy = val_acc;
  adapter.trace.final_train_ce = train_ce;
  adapter.trace.train_accuracy = train_acc;
  return adapter;
}

}  // namespace spg
