#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "spg/classifier.hpp"
#include "spg/grad_check.hpp"
#include "spg/world.hpp"

using namespace spg;

namespace {
BenchmarkSpec small_spec() {
  BenchmarkSpec spec;
  spec.num_domains = 3;
  spec.num_source_domains = 2;
  spec.num_classes = 4;
  spec.embed_dim = 8;
  spec.samples_per_domain = 60;
  spec.context_length = 3;
  spec.encoder_hidden = 24;
  spec.seed = 42;
  return spec;
}
}  // namespace

TEST_CASE("benchmark generation") {
  SECTION("sample counts and class balance") {
    BenchmarkSpec spec;
    spec.num_domains = 4;
    spec.num_source_domains = 3;
    spec.num_classes = 5;
    spec.embed_dim = 16;
    spec.samples_per_domain = 500;
    spec.seed = 9;
    const FrozenWorld world = generate_benchmark(spec);
    REQUIRE(world.num_domains() == 4);
    std::size_t total = 0;
    for (std::size_t d = 0; d < 4; ++d) {
      total += world.domains[d].size();
      std::vector<std::size_t> counts(5, 0);
      for (const auto& s : world.domains[d]) ++counts[s.class_label];
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(std::abs(static_cast<long>(counts[c]) - 100L) <= 1);
      }
    }
    CHECK(total == 2000);
  }
  SECTION("embeddings are unit norm and labels in range") {
    const FrozenWorld world = generate_benchmark(small_spec());
    for (const auto& domain : world.domains) {
      for (const auto& s : domain) {
        CHECK(std::abs(s.embedding.l2_norm() - 1.0) < 1e-9);
        CHECK(s.class_label < world.num_classes());
      }
    }
  }
  SECTION("identical seeds give byte-identical samples") {
    const FrozenWorld a = generate_benchmark(small_spec());
    const FrozenWorld b = generate_benchmark(small_spec());
    for (std::size_t d = 0; d < a.num_domains(); ++d) {
      for (std::size_t i = 0; i < a.domains[d].size(); ++i) {
        CHECK(bitwise_equal(a.domains[d][i].embedding, b.domains[d][i].embedding));
      }
    }
    CHECK(bitwise_equal(a.encoder.net.w1, b.encoder.net.w1));
    CHECK(bitwise_equal(a.manual.values, b.manual.values));
  }
  SECTION("noiseless single-domain samples collapse to class means") {
    BenchmarkSpec spec = small_spec();
    spec.noise_std = 0.0;
    spec.num_domains = 2;
    spec.num_source_domains = 1;
    const FrozenWorld world = generate_benchmark(spec);
    for (const auto& s : world.domains[0]) {
      const auto& twin = world.domains[0][s.class_label];  // first sample of each class
      CHECK(bitwise_equal(s.embedding, twin.embedding));
    }
  }
  SECTION("class means respect the separation") {
    const FrozenWorld world = generate_benchmark(small_spec());
    const double max_cos = std::cos(world.spec.class_separation);
    for (std::size_t i = 0; i < world.num_classes(); ++i) {
      for (std::size_t j = i + 1; j < world.num_classes(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < world.spec.embed_dim; ++k) {
          s += world.class_means.at(i, k) * world.class_means.at(j, k);
        }
        CHECK(s <= max_cos + 1e-12);
      }
    }
  }
  SECTION("infeasible separation errors") {
    BenchmarkSpec spec = small_spec();
    spec.num_classes = 40;
    spec.samples_per_domain = 80;
    spec.embed_dim = 4;
    spec.class_separation = 3.0;
    CHECK_THROWS_AS(generate_benchmark(spec), InfeasibleSpecError);
  }
  SECTION("rotation preserves pairwise cosine of class means") {
    BenchmarkSpec spec = small_spec();
    spec.shift_kind = ShiftKind::rotation;
    const FrozenWorld world = generate_benchmark(spec);
    const auto& q = world.transforms[0].rotation;
    REQUIRE(q.numel() > 0);
    const std::size_t d = spec.embed_dim;
    const std::size_t k = spec.num_classes;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        double before = 0.0, after = 0.0;
        std::vector<double> qi(d, 0.0), qj(d, 0.0);
        for (std::size_t r = 0; r < d; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            qi[r] += q.at(r, c) * world.class_means.at(i, c);
            qj[r] += q.at(r, c) * world.class_means.at(j, c);
          }
        }
        for (std::size_t r = 0; r < d; ++r) {
          before += world.class_means.at(i, r) * world.class_means.at(j, r);
          after += qi[r] * qj[r];
        }
        CHECK(std::abs(before - after) < 1e-9);
      }
    }
  }
  SECTION("same-class cosine exceeds cross-class cosine within a domain") {
    const FrozenWorld world = generate_benchmark(small_spec());
    double same = 0.0, cross = 0.0;
    std::size_t n_same = 0, n_cross = 0;
    const auto& samples = world.domains[0];
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (std::size_t j = i + 1; j < samples.size(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < world.spec.embed_dim; ++k) {
          s += samples[i].embedding[k] * samples[j].embedding[k];
        }
        if (samples[i].class_label == samples[j].class_label) {
          same += s;
          ++n_same;
        } else {
          cross += s;
          ++n_cross;
        }
      }
    }
    CHECK(same / static_cast<double>(n_same) > cross / static_cast<double>(n_cross));
  }
}

TEST_CASE("train/val split") {
  const FrozenWorld world = generate_benchmark(small_spec());
  SECTION("counts, disjointness, union") {
    const auto splits = split_train_val(world, 0.2, 7);
    for (std::size_t d = 0; d < world.num_domains(); ++d) {
      const std::size_t n = world.domains[d].size();
      CHECK(splits[d].train.size() + splits[d].val.size() == n);
      const double expected_val = 0.2 * static_cast<double>(n);
      CHECK(std::abs(static_cast<double>(splits[d].val.size()) - expected_val) <=
            static_cast<double>(world.num_classes()));
      std::set<std::size_t> train(splits[d].train.begin(), splits[d].train.end());
      for (std::size_t i : splits[d].val) CHECK(train.count(i) == 0);
    }
  }
  SECTION("stratified by class") {
    const auto splits = split_train_val(world, 0.25, 3);
    std::vector<std::size_t> val_counts(world.num_classes(), 0);
    for (std::size_t i : splits[0].val) {
      ++val_counts[world.domains[0][i].class_label];
    }
    for (std::size_t c = 1; c < world.num_classes(); ++c) {
      CHECK(std::abs(static_cast<long>(val_counts[c]) - static_cast<long>(val_counts[0])) <= 1);
    }
  }
  SECTION("same seed reproduces the split") {
    const auto a = split_train_val(world, 0.2, 11);
    const auto b = split_train_val(world, 0.2, 11);
    CHECK(a[1].train == b[1].train);
    CHECK(a[1].val == b[1].val);
  }
  SECTION("invalid fraction") {
    CHECK_THROWS_AS(split_train_val(world, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_train_val(world, 1.0, 1), ConfigError);
  }
}

TEST_CASE("frozen text encoder") {
  const FrozenWorld world = generate_benchmark(small_spec());
  const PromptContext prompt = manual_prompt(world);
  SECTION("deterministic and unit norm") {
    const Tensor w1 = encode_all_classes_plain(world.encoder, world.token_table, prompt.values);
    const Tensor w2 = encode_all_classes_plain(world.encoder, world.token_table, prompt.values);
    CHECK(bitwise_equal(w1, w2));
    for (std::size_t c = 0; c < w1.rows(); ++c) {
      double norm = 0.0;
      for (std::size_t j = 0; j < w1.cols(); ++j) norm += w1.at(c, j) * w1.at(c, j);
      CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
    }
  }
  SECTION("single-class encode matches the batched row") {
    const Tensor all = encode_all_classes_plain(world.encoder, world.token_table, prompt.values);
    const Tensor one = encode_text(world.encoder, world.token_table, prompt.values, 2);
    for (std::size_t j = 0; j < one.numel(); ++j) CHECK(one[j] == all.at(2, j));
  }
  SECTION("local Lipschitz probe: small prompt changes move w continuously") {
    Rng rng(23);
    const Tensor base = encode_all_classes_plain(world.encoder, world.token_table, prompt.values);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor perturbed = prompt.values;
      const double delta = 1e-4;
      std::vector<double> dir = rng.unit_vector(perturbed.numel());
      for (std::size_t i = 0; i < perturbed.numel(); ++i) perturbed[i] += delta * dir[i];
      const Tensor moved =
          encode_all_classes_plain(world.encoder, world.token_table, perturbed);
      double diff = 0.0;
      for (std::size_t i = 0; i < moved.numel(); ++i) {
        diff += (moved[i] - base[i]) * (moved[i] - base[i]);
      }
      // Loose constant bound; the map is smooth so ||dw|| = O(||dv||).
      CHECK(std::sqrt(diff) < 100.0 * delta);
    }
  }
  SECTION("tape encode matches plain encode and is differentiable in the prompt") {
    Tensor values = prompt.values;
    values.set_requires_grad(true);
    Tape tape;
    auto w = encode_all_classes(tape, world.encoder, tape.leaf(values), world.token_table);
    const Tensor plain =
        encode_all_classes_plain(world.encoder, world.token_table, prompt.values);
    CHECK(bitwise_equal(tape.value(w), plain));

    const double err = grad_check(
        [&]() {
          Tape t2;
          auto wv = encode_all_classes(t2, world.encoder, t2.leaf(values), world.token_table);
          auto loss = t2.sum(t2.tanh(wv));
          t2.backward(loss);
          return t2.value(loss)[0];
        },
        std::vector<Tensor*>{&values}, 1e-6);
    CHECK(err < 1e-5);
  }
  SECTION("mismatched prompt shape errors") {
    Tensor bad = Tensor::zeros({2, world.spec.embed_dim});
    CHECK_THROWS_AS(encode_all_classes_plain(world.encoder, world.token_table, bad),
                    DimensionError);
  }
  SECTION("manual prompt is stable across calls and correctly shaped") {
    const PromptContext p1 = manual_prompt(world);
    const PromptContext p2 = manual_prompt(world);
    CHECK(bitwise_equal(p1.values, p2.values));
    CHECK(p1.values.rows() == world.spec.context_length);
    CHECK(p1.values.cols() == world.spec.embed_dim);
  }
}

TEST_CASE("respawned worlds share geometry but not domains") {
  const FrozenWorld base = generate_benchmark(small_spec());
  const FrozenWorld shifted = respawn_domains(base, 2, 1, 1.5, 99);
  CHECK(bitwise_equal(base.class_means, shifted.class_means));
  CHECK(bitwise_equal(base.token_table, shifted.token_table));
  CHECK(base.encoder.net.bitwise_equal_to(shifted.encoder.net));
  CHECK(shifted.num_domains() == 2);
  CHECK_FALSE(bitwise_equal(base.domains[0][0].embedding, shifted.domains[0][0].embedding));
}
