#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spg/classifier.hpp"
#include "spg/optim.hpp"
#include "spg/stage1.hpp"
#include "spg/world.hpp"

namespace spg {

/// Prompt generator: [z; f(x)] -> hidden (tanh) -> L*d, reshaped to L x d.
struct Generator : public PromptSource {
  Mlp net;
  std::size_t z_dim = 8;
  std::size_t context_length = 0;
  std::size_t embed_dim = 0;

  static Generator create(std::size_t z_dim, std::size_t context_length, std::size_t embed_dim,
                          std::size_t hidden, std::uint64_t seed) {
    Generator g;
    g.z_dim = z_dim;
    g.context_length = context_length;
    g.embed_dim = embed_dim;
    Rng rng(derive_seed(seed, "generator-init"));
    const std::size_t in = z_dim + embed_dim;
    g.net = Mlp::create(in, hidden, context_length * embed_dim, Activation::tanh, rng,
                        1.0 / std::sqrt(static_cast<double>(in)),
                        1.0 / std::sqrt(static_cast<double>(hidden)));
    return g;
  }

  Tensor prompt_values_for(const Tensor& embedding,
                           const std::vector<double>& noise) const override {
    if (embedding.numel() != embed_dim) {
      throw DimensionError("generator: embedding dim mismatch");
    }
    std::vector<double> z = noise;
    if (z.empty()) z.assign(z_dim, 0.0);
    if (z.size() != z_dim) throw DimensionError("generator: noise dim mismatch");
    Tensor input({1, z_dim + embed_dim});
    for (std::size_t i = 0; i < z_dim; ++i) input[i] = z[i];
    for (std::size_t i = 0; i < embed_dim; ++i) input[z_dim + i] = embedding[i];
    Tensor out = net.forward_plain(input);
    return Tensor({context_length, embed_dim}, out.data());
  }

  std::size_t noise_dim() const override { return z_dim; }
};

/// Generator forward as a spec'd operation: one (z, f(x)) pair to a prompt.
inline PromptContext generator_forward(const Generator& g, const std::vector<double>& z,
                                       const Tensor& f_x) {
  PromptContext p;
  p.values = g.prompt_values_for(f_x, z);
  p.init_mode = PromptInit::gaussian;
  return p;
}

/// Least-squares critic: [flatten(prompt); f(x)] -> hidden (relu) -> scalar,
/// no sigmoid. Conditioning on f(x) can be disabled for the ablation.
struct Discriminator {
  Mlp net;
  bool conditioned = true;
  std::size_t context_length = 0;
  std::size_t embed_dim = 0;

  static Discriminator create(std::size_t context_length, std::size_t embed_dim,
                              std::size_t hidden, bool conditioned, std::uint64_t seed) {
    Discriminator d;
    d.conditioned = conditioned;
    d.context_length = context_length;
    d.embed_dim = embed_dim;
    Rng rng(derive_seed(seed, "discriminator-init"));
    const std::size_t in = context_length * embed_dim + (conditioned ? embed_dim : 0);
    d.net = Mlp::create(in, hidden, 1, Activation::relu, rng,
                        1.0 / std::sqrt(static_cast<double>(in)),
                        1.0 / std::sqrt(static_cast<double>(hidden)));
    return d;
  }

  std::size_t input_dim() const {
    return context_length * embed_dim + (conditioned ? embed_dim : 0);
  }

  /// One (prompt, image) realness score without gradients.
  double score(const Tensor& prompt_values, const Tensor& f_x) const {
    Tensor input({1, input_dim()});
    const std::size_t ld = context_length * embed_dim;
    if (prompt_values.numel() != ld) throw DimensionError("discriminator: prompt shape mismatch");
    for (std::size_t i = 0; i < ld; ++i) input[i] = prompt_values[i];
    if (conditioned) {
      if (f_x.numel() != embed_dim) throw DimensionError("discriminator: embedding mismatch");
      for (std::size_t i = 0; i < embed_dim; ++i) input[ld + i] = f_x[i];
    }
    return net.forward_plain(input)[0];
  }
};

inline double discriminator_forward(const Discriminator& d, const PromptContext& prompt,
                                    const Tensor& f_x) {
  return d.score(prompt.values, f_x);
}

/// Appendix-style norm ceilings; defaults are the midpoints of the reported
/// ranges (the "special" class is each network's output layer).
struct ClipCaps {
  double disc_general = 0.275;
  double disc_special = 5.0;
  double gen_weights = 0.0275;
  double gen_biases = 2.75e-7;
  double gen_special_bias = 2.75;
};

inline std::vector<ParamGroup> discriminator_groups(Discriminator& d, const ClipCaps& caps) {
  return {ParamGroup{"disc_general", {&d.net.w1, &d.net.b1}, caps.disc_general},
          ParamGroup{"disc_special", {&d.net.w2, &d.net.b2}, caps.disc_special}};
}

inline std::vector<ParamGroup> generator_groups(Generator& g, const ClipCaps& caps) {
  return {ParamGroup{"gen_weights", {&g.net.w1, &g.net.w2}, caps.gen_weights},
          ParamGroup{"gen_biases", {&g.net.b1}, caps.gen_biases},
          ParamGroup{"gen_special_bias", {&g.net.b2}, caps.gen_special_bias}};
}

struct CganConfig {
  double lr = 2e-3;
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  double real_target = 1.0;
  double fake_target = 0.0;
  std::size_t z_dim = 8;
  std::size_t hidden = 64;
  bool condition_on_image = true;
  ClipCaps caps;
  double warmup_lr = 1e-5;
  std::size_t warmup_epochs = 4;
  double min_lr = 0.0;
  std::size_t checkpoint_every = 1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double sample_fraction = 1.0;
  double val_fraction = 0.2;
  double temperature = 0.01;
  std::uint64_t seed = 0;

  ScheduleSpec schedule() const {
    return ScheduleSpec{lr, warmup_lr, warmup_epochs, epochs, min_lr};
  }

  void validate() const {
    if (epochs == 0) throw ConfigError("cgan: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("cgan: batch_size must be >= 1");
    if (real_target == fake_target) throw ConfigError("cgan: real and fake targets must differ");
    if (sample_fraction <= 0.0 || sample_fraction > 1.0) {
      throw ConfigError("cgan: sample_fraction must be in (0, 1]");
    }
    if (checkpoint_every == 0) throw ConfigError("cgan: checkpoint_every must be >= 1");
    schedule().validate();
  }
};

struct TrainLogRow {
  std::size_t iter = 0;
  double l_real = 0.0;
  double l_fake = 0.0;
  double l_disc = 0.0;
  double l_gen = 0.0;
  double lr = 0.0;
  // Post-clip joint gradient norms, recorded at the step that produced them.
  double disc_general_norm = 0.0;
  double disc_special_norm = 0.0;
  double gen_weights_norm = 0.0;
  double gen_biases_norm = 0.0;
  double gen_special_norm = 0.0;
  std::optional<double> val_acc;  // set on the last iteration of each epoch
};

struct CheckpointMeta {
  std::size_t epoch = 0;
  double val_acc = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::vector<CheckpointMeta> checkpoints;
  std::size_t selected_checkpoint = 0;  // index into checkpoints
};

struct CganResult {
  Generator generator;
  TrainLog log;
  std::size_t selected_epoch = 0;
  double selected_val_acc = 0.0;
};

namespace detail {

inline Tensor stack_disc_inputs(const Discriminator& d,
                                std::span<const Tensor> prompt_values,
                                std::span<const Tensor> embeddings) {
  const std::size_t b = prompt_values.size();
  const std::size_t ld = d.context_length * d.embed_dim;
  Tensor x({b, d.input_dim()});
  for (std::size_t i = 0; i < b; ++i) {
    if (prompt_values[i].numel() != ld) {
      throw DimensionError("discriminator batch: prompt shape mismatch");
    }
    for (std::size_t j = 0; j < ld; ++j) x.at(i, j) = prompt_values[i][j];
    if (d.conditioned) {
      for (std::size_t j = 0; j < d.embed_dim; ++j) {
        x.at(i, ld + j) = embeddings[i][j];
      }
    }
  }
  return x;
}

inline Tensor stack_gen_inputs(const Generator& g, const Tensor& z_batch,
                               std::span<const Tensor> embeddings) {
  const std::size_t b = embeddings.size();
  Tensor x({b, g.z_dim + g.embed_dim});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < g.z_dim; ++j) x.at(i, j) = z_batch.at(i, j);
    for (std::size_t j = 0; j < g.embed_dim; ++j) x.at(i, g.z_dim + j) = embeddings[i][j];
  }
  return x;
}

}  // namespace detail

struct DiscStepOutcome {
  double l_real = 0.0;
  double l_fake = 0.0;
  double general_norm = 0.0;  // post-clip
  double special_norm = 0.0;
};

/// One least-squares discriminator update. Real prompts must be each
/// sample's own domain label; fake prompts are detached generator outputs.
/// The generator is untouched (bit-level).
inline DiscStepOutcome discriminator_step(Discriminator& disc,
                                          std::span<const Tensor> real_prompts,
                                          std::span<const Tensor> real_embeddings,
                                          std::span<const Tensor> fake_prompts,
                                          std::span<const Tensor> fake_embeddings,
                                          double real_target, double fake_target,
                                          AdamW& opt) {
  Tape tape;
  Mlp::Vars dv = disc.net.register_on(tape, true);
  Tape::Var real_in =
      tape.constant(detail::stack_disc_inputs(disc, real_prompts, real_embeddings));
  Tape::Var fake_in =
      tape.constant(detail::stack_disc_inputs(disc, fake_prompts, fake_embeddings));
  Tape::Var real_scores = disc.net.forward(tape, dv, real_in);
  Tape::Var fake_scores = disc.net.forward(tape, dv, fake_in);
  Tape::Var l_real = tape.mse_loss(
      real_scores, tape.constant(Tensor::full({real_prompts.size(), 1}, real_target)));
  Tape::Var l_fake = tape.mse_loss(
      fake_scores, tape.constant(Tensor::full({fake_prompts.size(), 1}, fake_target)));
  Tape::Var l_disc = tape.add(l_real, l_fake);
  opt.zero_grad();
  tape.backward(l_disc);
  const auto norms = opt.step();
  opt.zero_grad();
  return DiscStepOutcome{tape.value(l_real)[0], tape.value(l_fake)[0], norms[0], norms[1]};
}

struct GenStepOutcome {
  double l_gen = 0.0;
  double weights_norm = 0.0;  // post-clip
  double biases_norm = 0.0;
  double special_norm = 0.0;
};

/// One generator update through the frozen discriminator: gradients flow
/// through D's weights (registered as constants) into G only.
inline GenStepOutcome generator_step(Generator& gen, const Discriminator& disc,
                                     const Tensor& z_batch,
                                     std::span<const Tensor> embeddings, double real_target,
                                     AdamW& opt) {
  Tape tape;
  Mlp::Vars gv = gen.net.register_on(tape, true);
  Tape::Var gen_in = tape.constant(detail::stack_gen_inputs(gen, z_batch, embeddings));
  Tape::Var prompts = gen.net.forward(tape, gv, gen_in);  // B x (L*d)
  Tape::Var disc_in = prompts;
  if (disc.conditioned) {
    const std::size_t b = embeddings.size();
    Tensor fx({b, gen.embed_dim});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < gen.embed_dim; ++j) fx.at(i, j) = embeddings[i][j];
    }
    disc_in = tape.concat({prompts, tape.constant(fx)}, 1);
  }
  Mlp::Vars dv = disc.net.register_frozen(tape);
  Tape::Var scores = disc.net.forward(tape, dv, disc_in);
  Tape::Var l_gen = tape.mse_loss(
      scores, tape.constant(Tensor::full({embeddings.size(), 1}, real_target)));
  opt.zero_grad();
  tape.backward(l_gen);
  const auto norms = opt.step();
  opt.zero_grad();
  return GenStepOutcome{tape.value(l_gen)[0], norms[0], norms[1], norms[2]};
}

namespace detail {

/// Deterministic per-domain subsample of the pooled train split; fraction 1
/// keeps everything. Sampling of iteration batches happens over this pool.
inline std::vector<SampleRef> cgan_train_pool(const FrozenWorld& world,
                                              std::span<const Split> splits,
                                              std::span<const std::size_t> sources,
                                              double fraction, std::uint64_t seed) {
  std::vector<SampleRef> pool;
  for (std::size_t dom : sources) {
    std::vector<std::size_t> indices(splits[dom].train.begin(), splits[dom].train.end());
    Rng rng(derive_seed(seed, "cgan-fraction", dom));
    rng.shuffle(indices);
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(fraction * static_cast<double>(indices.size()))));
    for (std::size_t i = 0; i < std::min(keep, indices.size()); ++i) {
      pool.push_back({dom, indices[i]});
    }
  }
  return pool;
}

}  // namespace detail

/// Stage II: adversarial pre-training of the prompt generator against the
/// frozen domain prompt labels, with cosine-warmup AdamW and per-group
/// clipping. Selection is the epoch checkpoint with the highest pooled
/// source-validation accuracy (earliest on ties).
inline CganResult train_cgan(const FrozenWorld& world,
                             std::span<const DomainPromptLabel> labels,
                             std::span<const std::size_t> source_domains,
                             const CganConfig& cfg) {
  cfg.validate();
  if (labels.empty()) throw TrainingError("train_cgan: no domain prompt labels");
  std::map<std::size_t, const Tensor*> label_by_domain;
  for (const auto& l : labels) label_by_domain[l.domain_id] = &l.prompt.values;
  for (std::size_t dom : source_domains) {
    if (!label_by_domain.count(dom)) {
      throw TrainingError("train_cgan: source domain " + std::to_string(dom) +
                          " has no prompt label");
    }
  }

  const auto splits = split_train_val(world, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  const auto pool = detail::cgan_train_pool(world, splits, source_domains,
                                            cfg.sample_fraction, cfg.seed);
  if (pool.empty()) throw TrainingError("train_cgan: empty training pool");
  std::vector<SampleRef> val_refs;
  for (std::size_t dom : source_domains) {
    for (std::size_t i : splits[dom].val) val_refs.push_back({dom, i});
  }

  Generator gen = Generator::create(cfg.z_dim, world.context_length(), world.embed_dim(),
                                    cfg.hidden, derive_seed(cfg.seed, "cgan-g"));
  Discriminator disc =
      Discriminator::create(world.context_length(), world.embed_dim(), cfg.hidden,
                            cfg.condition_on_image, derive_seed(cfg.seed, "cgan-d"));
  gen.net.set_requires_grad(true);
  disc.net.set_requires_grad(true);

  AdamW opt_d(discriminator_groups(disc, cfg.caps), cfg.lr, cfg.weight_decay, cfg.beta1,
              cfg.beta2, cfg.adam_eps);
  AdamW opt_g(generator_groups(gen, cfg.caps), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
              cfg.adam_eps);

  const ScheduleSpec sched = cfg.schedule();
  const std::size_t iters_per_epoch = std::max<std::size_t>(1, pool.size() / cfg.batch_size);
  Rng sample_rng(derive_seed(cfg.seed, "cgan-sampling"));
  Rng noise_rng(derive_seed(cfg.seed, "cgan-noise"));

  ClassifierConfig val_cfg;
  val_cfg.temperature = cfg.temperature;

  const auto draw_batch = [&](std::vector<const Tensor*>& prompts,
                              std::vector<Tensor>& embeddings, bool with_prompts) {
    prompts.clear();
    embeddings.clear();
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const SampleRef ref = pool[sample_rng.index(pool.size())];
      const auto& s = world.domains[ref.domain][ref.index];
      embeddings.push_back(s.embedding);
      if (with_prompts) prompts.push_back(label_by_domain.at(ref.domain));
    }
  };

  TrainLog log;
  Tensor best_w1, best_b1, best_w2, best_b2;
  double best_acc = -1.0;
  std::size_t best_epoch = 0;
  std::size_t iter = 0;

  std::vector<const Tensor*> real_prompt_ptrs;
  std::vector<Tensor> real_fx, fake_fx, gen_fx;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_warmup_lr(sched, epoch);
    opt_d.set_lr(lr);
    opt_g.set_lr(lr);
    for (std::size_t it = 0; it < iters_per_epoch; ++it, ++iter) {
      try {
        draw_batch(real_prompt_ptrs, real_fx, true);
        std::vector<Tensor> real_prompts;
        real_prompts.reserve(real_prompt_ptrs.size());
        for (const Tensor* p : real_prompt_ptrs) real_prompts.push_back(*p);

        std::vector<const Tensor*> unused;
        draw_batch(unused, fake_fx, false);
        std::vector<Tensor> fake_prompts;
        fake_prompts.reserve(fake_fx.size());
        for (const auto& fx : fake_fx) {
          fake_prompts.push_back(
              gen.prompt_values_for(fx, noise_rng.normal_vec(cfg.z_dim)));
        }

        const DiscStepOutcome d_out = discriminator_step(
            disc, real_prompts, real_fx, fake_prompts, fake_fx, cfg.real_target,
            cfg.fake_target, opt_d);

        draw_batch(unused, gen_fx, false);
        Tensor z_batch({cfg.batch_size, std::max<std::size_t>(cfg.z_dim, 1)});
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
          for (std::size_t j = 0; j < cfg.z_dim; ++j) z_batch.at(i, j) = noise_rng.normal();
        }
        const GenStepOutcome g_out =
            generator_step(gen, disc, z_batch, gen_fx, cfg.real_target, opt_g);

        TrainLogRow row;
        row.iter = iter;
        row.l_real = d_out.l_real;
        row.l_fake = d_out.l_fake;
        row.l_disc = d_out.l_real + d_out.l_fake;
        row.l_gen = g_out.l_gen;
        row.lr = lr;
        row.disc_general_norm = d_out.general_norm;
        row.disc_special_norm = d_out.special_norm;
        row.gen_weights_norm = g_out.weights_norm;
        row.gen_biases_norm = g_out.biases_norm;
        row.gen_special_norm = g_out.special_norm;
        log.rows.push_back(row);
      } catch (const NumericError& e) {
        throw TrainingError("train_cgan: non-finite loss at iteration " +
                            std::to_string(iter) + ": " + e.what());
      }
    }

    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
      double hits = 0.0;
      for (const auto& ref : val_refs) {
        const auto& s = world.domains[ref.domain][ref.index];
        if (classify(world, gen, s, val_cfg).predicted_class == s.class_label) hits += 1.0;
      }
      const double acc = val_refs.empty() ? 0.0 : hits / static_cast<double>(val_refs.size());
      log.checkpoints.push_back(CheckpointMeta{epoch + 1, acc});
      if (!log.rows.empty()) log.rows.back().val_acc = acc;
      if (acc > best_acc) {
        best_acc = acc;
        best_epoch = epoch + 1;
        best_w1 = gen.net.w1;
        best_b1 = gen.net.b1;
        best_w2 = gen.net.w2;
        best_b2 = gen.net.b2;
        log.selected_checkpoint = log.checkpoints.size() - 1;
      }
    }
  }

  gen.net.w1 = best_w1;
  gen.net.b1 = best_b1;
  gen.net.w2 = best_w2;
  gen.net.b2 = best_b2;
  gen.net.set_requires_grad(false);
  disc.net.set_requires_grad(false);
  return CganResult{std::move(gen), std::move(log), best_epoch, best_acc};
}

/// "MLP" component swap: the generator architecture without noise, trained
/// by direct regression onto each sample's domain prompt label (no
/// adversary), same optimizer, schedule and generator clip rules.
inline CganResult train_prompt_regressor(const FrozenWorld& world,
                                         std::span<const DomainPromptLabel> labels,
                                         std::span<const std::size_t> source_domains,
                                         const CganConfig& cfg) {
  cfg.validate();
  std::map<std::size_t, const Tensor*> label_by_domain;
  for (const auto& l : labels) label_by_domain[l.domain_id] = &l.prompt.values;
  for (std::size_t dom : source_domains) {
    if (!label_by_domain.count(dom)) {
      throw TrainingError("train_prompt_regressor: source domain " + std::to_string(dom) +
                          " has no prompt label");
    }
  }
  const auto splits = split_train_val(world, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  const auto pool = detail::cgan_train_pool(world, splits, source_domains,
                                            cfg.sample_fraction, cfg.seed);
  if (pool.empty()) throw TrainingError("train_prompt_regressor: empty training pool");
  std::vector<SampleRef> val_refs;
  for (std::size_t dom : source_domains) {
    for (std::size_t i : splits[dom].val) val_refs.push_back({dom, i});
  }

  Generator gen = Generator::create(0, world.context_length(), world.embed_dim(), cfg.hidden,
                                    derive_seed(cfg.seed, "mlp-swap"));
  gen.net.set_requires_grad(true);
  AdamW opt_g(generator_groups(gen, cfg.caps), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
              cfg.adam_eps);

  const ScheduleSpec sched = cfg.schedule();
  const std::size_t iters_per_epoch = std::max<std::size_t>(1, pool.size() / cfg.batch_size);
  Rng sample_rng(derive_seed(cfg.seed, "mlp-sampling"));
  ClassifierConfig val_cfg;
  val_cfg.temperature = cfg.temperature;

  TrainLog log;
  Tensor best_w1, best_b1, best_w2, best_b2;
  double best_acc = -1.0;
  std::size_t best_epoch = 0;
  std::size_t iter = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_warmup_lr(sched, epoch);
    opt_g.set_lr(lr);
    for (std::size_t it = 0; it < iters_per_epoch; ++it, ++iter) {
      try {
        std::vector<Tensor> fx;
        Tensor targets({cfg.batch_size, world.context_length() * world.embed_dim()});
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
          const SampleRef ref = pool[sample_rng.index(pool.size())];
          const auto& s = world.domains[ref.domain][ref.index];
          fx.push_back(s.embedding);
          const Tensor& label = *label_by_domain.at(ref.domain);
          for (std::size_t j = 0; j < label.numel(); ++j) targets.at(i, j) = label[j];
        }
        Tape tape;
        Mlp::Vars gv = gen.net.register_on(tape, true);
        Tensor z_batch({cfg.batch_size, 1});  // z_dim 0: embeddings only
        Tape::Var input = tape.constant(detail::stack_gen_inputs(gen, z_batch, fx));
        Tape::Var out = gen.net.forward(tape, gv, input);
        Tape::Var loss = tape.mse_loss(out, tape.constant(targets));
        opt_g.zero_grad();
        tape.backward(loss);
        const auto norms = opt_g.step();
        opt_g.zero_grad();

        TrainLogRow row;
        row.iter = iter;
        row.l_gen = tape.value(loss)[0];
        row.lr = lr;
        row.gen_weights_norm = norms[0];
        row.gen_biases_norm = norms[1];
        row.gen_special_norm = norms[2];
        log.rows.push_back(row);
      } catch (const NumericError& e) {
        throw TrainingError("train_prompt_regressor: non-finite loss at iteration " +
                            std::to_string(iter) + ": " + e.what());
      }
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
      double hits = 0.0;
      for (const auto& ref : val_refs) {
        const auto& s = world.domains[ref.domain][ref.index];
        if (classify(world, gen, s, val_cfg).predicted_class == s.class_label) hits += 1.0;
      }
      const double acc = val_refs.empty() ? 0.0 : hits / static_cast<double>(val_refs.size());
      log.checkpoints.push_back(CheckpointMeta{epoch + 1, acc});
      if (!log.rows.empty()) log.rows.back().val_acc = acc;
      if (acc > best_acc) {
        best_acc = acc;
        best_epoch = epoch + 1;
        best_w1 = gen.net.w1;
        best_b1 = gen.net.b1;
        best_w2 = gen.net.w2;
        best_b2 = gen.net.b2;
        log.selected_checkpoint = log.checkpoints.size() - 1;
      }
    }
  }
  gen.net.w1 = best_w1;
  gen.net.b1 = best_b1;
  gen.net.w2 = best_w2;
  gen.net.b2 = best_b2;
  gen.net.set_requires_grad(false);
  return CganResult{std::move(gen), std::move(log), best_epoch, best_acc};
}

}  // namespace spg
