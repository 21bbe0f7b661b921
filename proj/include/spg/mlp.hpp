#pragma once

#include <vector>

#include "spg/rng.hpp"
#include "spg/tape.hpp"
#include "spg/tensor.hpp"

namespace spg {

enum class Activation { tanh, relu };

/// Two-layer perceptron: linear, activation, linear. Used for the frozen
/// text encoder, the prompt generator/discriminator and the conditional
/// adapters; whether its parameters train is decided at tape-registration.
struct Mlp {
  Tensor w1;  // in x hidden
  Tensor b1;  // hidden
  Tensor w2;  // hidden x out
  Tensor b2;  // out
  Activation activation = Activation::tanh;

  std::size_t in_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t out_dim() const { return w2.cols(); }

  static Mlp create(std::size_t in, std::size_t hidden, std::size_t out, Activation act,
                    Rng& rng, double w1_std, double w2_std, double b1_std = 0.0,
                    bool zero_output_layer = false) {
    Mlp m;
    m.activation = act;
    m.w1 = Tensor({in, hidden}, rng.normal_vec(in * hidden, 0.0, w1_std));
    m.b1 = b1_std > 0.0 ? Tensor({hidden}, rng.normal_vec(hidden, 0.0, b1_std))
                        : Tensor::zeros({hidden});
    if (zero_output_layer) {
      m.w2 = Tensor::zeros({hidden, out});
    } else {
      m.w2 = Tensor({hidden, out}, rng.normal_vec(hidden * out, 0.0, w2_std));
    }
    m.b2 = Tensor::zeros({out});
    return m;
  }

  /// Gradient-free forward over a batch (B x in) -> (B x out).
  Tensor forward_plain(const Tensor& x) const {
    Tensor h = matmul_plain(x, w1);
    add_row_inplace(h, b1);
    apply_activation(h);
    Tensor y = matmul_plain(h, w2);
    add_row_inplace(y, b2);
    return y;
  }

  struct Vars {
    Tape::Var w1, b1, w2, b2;
  };

  /// Puts the parameters on a tape. Trainable parameters are registered as
  /// leaves (gradients accumulate into them); frozen ones as constants, so
  /// gradients still flow through them to earlier inputs but stop there.
  Vars register_on(Tape& tape, bool trainable) {
    if (trainable) {
      return Vars{tape.leaf(w1), tape.leaf(b1), tape.leaf(w2), tape.leaf(b2)};
    }
    return Vars{tape.constant(w1), tape.constant(b1), tape.constant(w2), tape.constant(b2)};
  }

  Vars register_frozen(Tape& tape) const {
    return Vars{tape.constant(w1), tape.constant(b1), tape.constant(w2), tape.constant(b2)};
  }

  Tape::Var forward(Tape& tape, const Vars& v, Tape::Var x) const {
    Tape::Var h = tape.add_rows(tape.matmul(x, v.w1), v.b1);
    h = activation == Activation::tanh ? tape.tanh(h) : tape.relu(h);
    return tape.add_rows(tape.matmul(h, v.w2), v.b2);
  }

  std::vector<Tensor*> all_params() { return {&w1, &b1, &w2, &b2}; }
  std::vector<Tensor*> weights() { return {&w1, &w2}; }

  void set_requires_grad(bool on) {
    for (Tensor* p : all_params()) p->set_requires_grad(on);
  }

  bool bitwise_equal_to(const Mlp& other) const {
    return spg::bitwise_equal(w1, other.w1) && spg::bitwise_equal(b1, other.b1) &&
           spg::bitwise_equal(w2, other.w2) && spg::bitwise_equal(b2, other.b2);
  }

private:
  void apply_activation(Tensor& t) const {
    if (activation == Activation::tanh) {
      tanh_inplace(t);
    } else {
      relu_inplace(t);
    }
  }
};

}  // namespace spg
