#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "spg/linalg.hpp"
#include "spg/tensor.hpp"

namespace spg {

/// Reverse-mode autodiff over an op tape that is rebuilt every forward pass.
/// Ops append nodes in execution order (so inputs always precede consumers);
/// backward() walks the tape once in reverse and accumulates gradients into
/// the registered leaf tensors. Every completed op checks its output for
/// non-finite values and throws NumericError instead of letting them spread.
class Tape {
public:
  struct Var {
    std::size_t id = 0;
  };

  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  /// Registers a tensor the caller owns. If it requires grad, backward()
  /// accumulates into its grad buffer.
  Var leaf(Tensor& t) {
    check_input_finite(t, "leaf");
    const Var v = push(t);
    nodes_[v.id].leaf = &t;
    return v;
  }

  /// Registers an input by value; gradients stop here.
  Var constant(Tensor t) {
    check_input_finite(t, "constant");
    return push(std::move(t));
  }

  Var matmul(Var a, Var b) {
    Tensor out = matmul_plain(value(a), value(b));
    const Var c = push_checked(std::move(out), "matmul");
    nodes_[c.id].back = [a, b, c](Tape& t) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      const std::size_t m = av.rows(), kk = av.cols(), n = bv.cols();
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      auto& db = t.nodes_[b.id].adjoint;
      // dA += dC * B^T ; dB += A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kk; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dc[i * n + j] * bv[k * n + j];
          da[i * kk + k] += s;
        }
      }
      for (std::size_t k = 0; k < kk; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
          const double aik = av[i * kk + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) db[k * n + j] += aik * dc[i * n + j];
        }
      }
    };
    return c;
  }

  /// a * b^T without materializing the transpose.
  Var matmul_nt(Var a, Var b) {
    Tensor out = matmul_nt_plain(value(a), value(b));
    const Var c = push_checked(std::move(out), "matmul_nt");
    nodes_[c.id].back = [a, b, c](Tape& t) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      const std::size_t m = av.rows(), kk = av.cols(), n = bv.rows();
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      auto& db = t.nodes_[b.id].adjoint;
      // C = A B^T : dA += dC * B ; dB += dC^T * A
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double d = dc[i * n + j];
          if (d == 0.0) continue;
          for (std::size_t k = 0; k < kk; ++k) {
            da[i * kk + k] += d * bv[j * kk + k];
            db[j * kk + k] += d * av[i * kk + k];
          }
        }
      }
    };
    return c;
  }

  Var add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += value(b)[i];
    const Var c = push_checked(std::move(out), "add");
    nodes_[c.id].back = [a, b, c](Tape& t) {
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      auto& db = t.nodes_[b.id].adjoint;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        da[i] += dc[i];
        db[i] += dc[i];
      }
    };
    return c;
  }

  Var sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= value(b)[i];
    const Var c = push_checked(std::move(out), "sub");
    nodes_[c.id].back = [a, b, c](Tape& t) {
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      auto& db = t.nodes_[b.id].adjoint;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        da[i] += dc[i];
        db[i] -= dc[i];
      }
    };
    return c;
  }

  Var scale(double alpha, Var a) {
    Tensor out = value(a);
    for (auto& x : out.data()) x *= alpha;
    const Var c = push_checked(std::move(out), "scale");
    nodes_[c.id].back = [a, c, alpha](Tape& t) {
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += alpha * dc[i];
    };
    return c;
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    tanh_inplace(out);
    const Var c = push_checked(std::move(out), "tanh");
    nodes_[c.id].back = [a, c](Tape& t) {
      const Tensor& y = t.value(c);
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += (1.0 - y[i] * y[i]) * dc[i];
    };
    return c;
  }

  Var relu(Var a) {
    Tensor out = value(a);
    relu_inplace(out);
    const Var c = push_checked(std::move(out), "relu");
    nodes_[c.id].back = [a, c](Tape& t) {
      const Tensor& x = t.value(a);
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        if (x[i] > 0.0) da[i] += dc[i];
      }
    };
    return c;
  }

  /// Concatenates parts along `axis`. Rank-1 tensors concatenate along axis 0;
  /// rank-2 along axis 0 (stacking rows) or 1 (side by side).
  Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat requires at least one part");
    const Tensor& first = value(parts[0]);
    const std::size_t rank = first.rank();
    if (rank > 2 || axis >= rank) {
      throw DimensionError("concat supports rank-1/2 tensors with axis < rank");
    }
    for (const Var& p : parts) {
      const Tensor& t = value(p);
      if (t.rank() != rank) throw DimensionError("concat parts must share rank");
      for (std::size_t ax = 0; ax < rank; ++ax) {
        if (ax != axis && t.shape()[ax] != first.shape()[ax]) {
          throw DimensionError("concat extent mismatch off the concat axis: " +
                               t.shape_string() + " vs " + first.shape_string());
        }
      }
    }
    std::vector<std::size_t> out_shape = first.shape();
    out_shape[axis] = 0;
    for (const Var& p : parts) out_shape[axis] += value(p).shape()[axis];
    Tensor out(out_shape);
    // Row-major copy; for axis 1 copy row fragments.
    if (rank == 1 || axis == 0) {
      std::size_t off = 0;
      for (const Var& p : parts) {
        const auto& d = value(p).data();
        std::copy(d.begin(), d.end(), out.data().begin() + off);
        off += d.size();
      }
    } else {
      const std::size_t nrows = out_shape[0], out_cols = out_shape[1];
      std::size_t col_off = 0;
      for (const Var& p : parts) {
        const Tensor& t = value(p);
        for (std::size_t r = 0; r < nrows; ++r) {
          std::copy(t.data().begin() + r * t.cols(), t.data().begin() + (r + 1) * t.cols(),
                    out.data().begin() + r * out_cols + col_off);
        }
        col_off += t.cols();
      }
    }
    const Var c = push_checked(std::move(out), "concat");
    auto parts_copy = parts;
    nodes_[c.id].back = [parts_copy, c, axis, rank](Tape& t) {
      const auto& dc = t.nodes_[c.id].adjoint;
      if (rank == 1 || axis == 0) {
        std::size_t off = 0;
        for (const Var& p : parts_copy) {
          auto& dp = t.nodes_[p.id].adjoint;
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dc[off + i];
          off += dp.size();
        }
      } else {
        const Tensor& outv = t.value(c);
        const std::size_t nrows = outv.rows(), out_cols = outv.cols();
        std::size_t col_off = 0;
        for (const Var& p : parts_copy) {
          const std::size_t pc = t.value(p).cols();
          auto& dp = t.nodes_[p.id].adjoint;
          for (std::size_t r = 0; r < nrows; ++r) {
            for (std::size_t j = 0; j < pc; ++j) {
              dp[r * pc + j] += dc[r * out_cols + col_off + j];
            }
          }
          col_off += pc;
        }
      }
    };
    return c;
  }

  /// Repeats a row vector (rank-1 or 1 x C) into a (times x C) matrix.
  Var tile_rows(Var row, std::size_t times) {
    const Tensor& rv = value(row);
    const std::size_t c = rv.numel();
    if (rv.rank() > 2 || (rv.rank() == 2 && rv.rows() != 1)) {
      throw DimensionError("tile_rows requires a single row, got " + rv.shape_string());
    }
    Tensor out({times, c});
    for (std::size_t r = 0; r < times; ++r) {
      std::copy(rv.data().begin(), rv.data().end(), out.data().begin() + r * c);
    }
    const Var o = push_checked(std::move(out), "tile_rows");
    nodes_[o.id].back = [row, o, times, c](Tape& t) {
      const auto& dout = t.nodes_[o.id].adjoint;
      auto& dr = t.nodes_[row.id].adjoint;
      for (std::size_t r = 0; r < times; ++r) {
        for (std::size_t j = 0; j < c; ++j) dr[j] += dout[r * c + j];
      }
    };
    return o;
  }

  /// Adds a row vector to every row of a matrix (bias broadcast).
  Var add_rows(Var m, Var row) {
    const Tensor& mv = value(m);
    const Tensor& rv = value(row);
    if (mv.rank() != 2) throw DimensionError("add_rows requires a rank-2 left operand");
    if (rv.numel() != mv.cols()) {
      throw DimensionError("add_rows extent mismatch: " + mv.shape_string() + " vs " +
                           rv.shape_string());
    }
    Tensor out = mv;
    add_row_inplace(out, rv);
    const Var c = push_checked(std::move(out), "add_rows");
    nodes_[c.id].back = [m, row, c](Tape& t) {
      const Tensor& outv = t.value(c);
      const std::size_t rows = outv.rows(), cols = outv.cols();
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& dm = t.nodes_[m.id].adjoint;
      auto& dr = t.nodes_[row.id].adjoint;
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          dm[i * cols + j] += dc[i * cols + j];
          dr[j] += dc[i * cols + j];
        }
      }
    };
    return c;
  }

  /// Normalizes a vector to unit L2 norm; errors on near-zero input.
  Var l2_normalize(Var a) {
    const Tensor& av = value(a);
    const double norm = av.l2_norm();
    if (norm <= kNormEps) {
      throw DegenerateInputError("l2_normalize: input norm " + std::to_string(norm) +
                                 " below " + std::to_string(kNormEps));
    }
    Tensor out = av;
    for (auto& x : out.data()) x /= norm;
    const Var c = push_checked(std::move(out), "l2_normalize");
    nodes_[c.id].back = [a, c, norm](Tape& t) {
      const Tensor& y = t.value(c);
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      double ydc = 0.0;
      for (std::size_t i = 0; i < dc.size(); ++i) ydc += y[i] * dc[i];
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += (dc[i] - y[i] * ydc) / norm;
    };
    return c;
  }

  /// Normalizes each row of a matrix to unit L2 norm.
  Var l2_normalize_rows(Var a) {
    const Tensor& av = value(a);
    if (av.rank() != 2) throw DimensionError("l2_normalize_rows requires a rank-2 tensor");
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out = av;
    std::vector<double> norms(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += av.at(i, j) * av.at(i, j);
      norms[i] = std::sqrt(s);
      if (norms[i] <= kNormEps) {
        throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) +
                                   " has near-zero norm");
      }
      for (std::size_t j = 0; j < cols; ++j) out.at(i, j) /= norms[i];
    }
    const Var c = push_checked(std::move(out), "l2_normalize_rows");
    nodes_[c.id].back = [a, c, norms](Tape& t) {
      const Tensor& y = t.value(c);
      const std::size_t rows = y.rows(), cols = y.cols();
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      for (std::size_t i = 0; i < rows; ++i) {
        double ydc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) ydc += y[i * cols + j] * dc[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          da[i * cols + j] += (dc[i * cols + j] - y[i * cols + j] * ydc) / norms[i];
        }
      }
    };
    return c;
  }

  /// Cosine similarity of two same-shape tensors viewed as flat vectors.
  Var cosine_similarity(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_same_shape(av, bv, "cosine_similarity");
    const double na = av.l2_norm(), nb = bv.l2_norm();
    if (na <= kNormEps || nb <= kNormEps) {
      throw DegenerateInputError("cosine_similarity: operand with near-zero norm");
    }
    double ab = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) ab += av[i] * bv[i];
    const double s = std::clamp(ab / (na * nb), -1.0, 1.0);
    const Var c = push_checked(Tensor::scalar(s), "cosine_similarity");
    nodes_[c.id].back = [a, b, c, na, nb, s](Tape& t) {
      const Tensor& av2 = t.value(a);
      const Tensor& bv2 = t.value(b);
      const double g = t.nodes_[c.id].adjoint[0];
      auto& da = t.nodes_[a.id].adjoint;
      auto& db = t.nodes_[b.id].adjoint;
      for (std::size_t i = 0; i < av2.numel(); ++i) {
        da[i] += g * (bv2[i] / (na * nb) - s * av2[i] / (na * na));
        db[i] += g * (av2[i] / (na * nb) - s * bv2[i] / (nb * nb));
      }
    };
    return c;
  }

  /// Negative log softmax probability of `label`, max-subtracted for stability.
  Var softmax_cross_entropy(Var logits, std::size_t label) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 1) throw DimensionError("softmax_cross_entropy expects a rank-1 logit vector");
    if (label >= lv.numel()) {
      throw DimensionError("label " + std::to_string(label) + " out of range for " +
                           std::to_string(lv.numel()) + " classes");
    }
    const double loss = log_sum_exp(lv.data().data(), lv.numel()) - lv[label];
    const Var c = push_checked(Tensor::scalar(loss), "softmax_cross_entropy");
    std::vector<double> probs = softmax_stable(lv.data().data(), lv.numel());
    nodes_[c.id].back = [logits, c, label, probs](Tape& t) {
      const double g = t.nodes_[c.id].adjoint[0];
      auto& dl = t.nodes_[logits.id].adjoint;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        dl[i] += g * (probs[i] - (i == label ? 1.0 : 0.0));
      }
    };
    return c;
  }

  /// Mean softmax cross-entropy over the rows of a (B x K) logit matrix.
  Var cross_entropy_mean(Var logits, const std::vector<std::size_t>& labels) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2) throw DimensionError("cross_entropy_mean expects rank-2 logits");
    const std::size_t batch = lv.rows(), k = lv.cols();
    if (labels.size() != batch) {
      throw DimensionError("cross_entropy_mean: " + std::to_string(labels.size()) +
                           " labels for " + std::to_string(batch) + " rows");
    }
    std::vector<double> probs(batch * k);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      if (labels[i] >= k) throw DimensionError("cross_entropy_mean: label out of range");
      const double* row = lv.data().data() + i * k;
      loss += log_sum_exp(row, k) - row[labels[i]];
      const auto p = softmax_stable(row, k);
      std::copy(p.begin(), p.end(), probs.begin() + i * k);
    }
    loss /= static_cast<double>(batch);
    const Var c = push_checked(Tensor::scalar(loss), "cross_entropy_mean");
    auto labels_copy = labels;
    nodes_[c.id].back = [logits, c, labels_copy, probs, batch, k](Tape& t) {
      const double g = t.nodes_[c.id].adjoint[0] / static_cast<double>(batch);
      auto& dl = t.nodes_[logits.id].adjoint;
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          dl[i * k + j] += g * (probs[i * k + j] - (j == labels_copy[i] ? 1.0 : 0.0));
        }
      }
    };
    return c;
  }

  /// Mean of squared differences over all elements.
  Var mse_loss(Var pred, Var target) {
    const Tensor& pv = value(pred);
    const Tensor& tv = value(target);
    require_same_shape(pv, tv, "mse_loss");
    const double n = static_cast<double>(pv.numel());
    double loss = 0.0;
    for (std::size_t i = 0; i < pv.numel(); ++i) {
      const double d = pv[i] - tv[i];
      loss += d * d;
    }
    loss /= n;
    const Var c = push_checked(Tensor::scalar(loss), "mse_loss");
    nodes_[c.id].back = [pred, target, c, n](Tape& t) {
      const Tensor& pv2 = t.value(pred);
      const Tensor& tv2 = t.value(target);
      const double g = t.nodes_[c.id].adjoint[0];
      auto& dp = t.nodes_[pred.id].adjoint;
      auto& dt = t.nodes_[target.id].adjoint;
      for (std::size_t i = 0; i < pv2.numel(); ++i) {
        const double d = 2.0 * (pv2[i] - tv2[i]) / n * g;
        dp[i] += d;
        dt[i] -= d;
      }
    };
    return c;
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data()) s += x;
    const Var c = push_checked(Tensor::scalar(s), "sum");
    nodes_[c.id].back = [a, c](Tape& t) {
      const double g = t.nodes_[c.id].adjoint[0];
      auto& da = t.nodes_[a.id].adjoint;
      for (auto& x : da) x += g;
    };
    return c;
  }

  /// Reinterprets the element buffer under a new shape (same element count).
  Var reshape(Var a, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape), value(a).data());
    const Var c = push_checked(std::move(out), "reshape");
    nodes_[c.id].back = [a, c](Tape& t) {
      const auto& dc = t.nodes_[c.id].adjoint;
      auto& da = t.nodes_[a.id].adjoint;
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    };
    return c;
  }

  /// Seeds the scalar root with adjoint 1 and sweeps the tape in reverse,
  /// visiting each op exactly once. Leaf tensors accumulate gradients, so
  /// calling backward again without zero_grad adds another pass.
  void backward(Var root) {
    if (value(root).numel() != 1) {
      throw DimensionError("backward requires a scalar root, got " +
                           value(root).shape_string());
    }
    for (std::size_t i = 0; i <= root.id; ++i) {
      nodes_[i].adjoint.assign(nodes_[i].value.numel(), 0.0);
    }
    nodes_[root.id].adjoint[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this);
      if (nodes_[i].leaf != nullptr && nodes_[i].leaf->requires_grad()) {
        auto& g = nodes_[i].leaf->grad();
        const auto& adj = nodes_[i].adjoint;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += adj[j];
      }
    }
  }

  static constexpr double kNormEps = 1e-12;

private:
  struct Node {
    Tensor value;
    std::vector<double> adjoint;
    std::function<void(Tape&)> back;
    Tensor* leaf = nullptr;
  };

  Var push(Tensor t) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, nullptr});
    return Var{nodes_.size() - 1};
  }

  Var push_checked(Tensor t, const char* op) {
    if (!t.all_finite()) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
    return push(std::move(t));
  }

  static void check_input_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) {
      throw NumericError(std::string(what) + " received a non-finite tensor");
    }
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
      throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                           b.shape_string());
    }
  }

  std::vector<Node> nodes_;

  friend class TapeTestAccess;
};

}  // namespace spg
