#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spg/errors.hpp"
#include "spg/tensor.hpp"

namespace spg {

/// A named set of parameters that are clipped together under one norm cap.
struct ParamGroup {
  std::string name;
  std::vector<Tensor*> params;
  std::optional<double> clip_cap;
};

inline void validate_groups(const std::vector<ParamGroup>& groups) {
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].clip_cap && *groups[i].clip_cap <= 0.0) {
      throw ConfigError("param group '" + groups[i].name + "' has non-positive clip cap");
    }
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      if (groups[i].name == groups[j].name) {
        throw ConfigError("duplicate param group name '" + groups[i].name + "'");
      }
    }
  }
}

inline double group_grad_norm(const ParamGroup& group) {
  double s = 0.0;
  for (const Tensor* p : group.params) {
    for (double g : p->grad()) s += g * g;
  }
  return std::sqrt(s);
}

/// Scales every gradient in the group by cap/norm when the joint L2 norm
/// exceeds the cap. Returns the post-clip norm. No-op without a cap.
inline double clip_group_norm(ParamGroup& group) {
  const double norm = group_grad_norm(group);
  if (!group.clip_cap || norm <= *group.clip_cap) return norm;
  const double factor = *group.clip_cap / norm;
  for (Tensor* p : group.params) {
    for (double& g : p->grad()) g *= factor;
  }
  return norm * factor;
}

/// Plain stochastic gradient descent step over a group; gradients are left
/// untouched for the caller to reset.
inline void sgd_step(ParamGroup& group, double lr) {
  for (Tensor* p : group.params) {
    const auto& g = p->grad();
    auto& x = p->data();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
  }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
public:
  AdamW(std::vector<ParamGroup> groups, double lr, double weight_decay = 1e-4,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : groups_(std::move(groups)),
        lr_(lr),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    validate_groups(groups_);
    for (auto& group : groups_) {
      for (Tensor* p : group.params) {
        moments_[p] = Moments{std::vector<double>(p->numel(), 0.0),
                              std::vector<double>(p->numel(), 0.0)};
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::uint64_t step_count() const { return t_; }
  std::vector<ParamGroup>& groups() { return groups_; }

  /// Clips each configured group, then applies one AdamW update to every
  /// parameter. Returns the post-clip gradient norm per group, in group order.
  std::vector<double> step() {
    std::vector<double> norms;
    norms.reserve(groups_.size());
    for (auto& group : groups_) norms.push_back(clip_group_norm(group));
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& group : groups_) {
      for (Tensor* p : group.params) {
        auto& m = moments_.at(p);
        const auto& g = p->grad();
        auto& x = p->data();
        for (std::size_t i = 0; i < x.size(); ++i) {
          m.first[i] = beta1_ * m.first[i] + (1.0 - beta1_) * g[i];
          m.second[i] = beta2_ * m.second[i] + (1.0 - beta2_) * g[i] * g[i];
          const double m_hat = m.first[i] / bc1;
          const double v_hat = m.second[i] / bc2;
          x[i] -= lr_ * weight_decay_ * x[i];
          x[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
      }
    }
    return norms;
  }

  void zero_grad() {
    for (auto& group : groups_) {
      for (Tensor* p : group.params) p->zero_grad();
    }
  }

private:
  struct Moments {
    std::vector<double> first, second;
  };

  std::vector<ParamGroup> groups_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<Tensor*, Moments> moments_;
};

/// Cosine-annealed learning rate with a linear warmup segment.
struct ScheduleSpec {
  double base_lr = 2e-3;
  double warmup_lr = 1e-5;
  std::size_t warmup_epochs = 4;
  std::size_t total_epochs = 80;
  double min_lr = 0.0;

  void validate() const {
    if (warmup_epochs >= total_epochs) {
      throw ConfigError("schedule: warmup_epochs must be < total_epochs");
    }
    if (warmup_lr > base_lr) throw ConfigError("schedule: warmup_lr must be <= base_lr");
  }
};

inline double cosine_warmup_lr(const ScheduleSpec& spec, std::size_t epoch) {
  spec.validate();
  if (epoch >= spec.total_epochs) {
    throw ConfigError("schedule: epoch " + std::to_string(epoch) + " out of range [0, " +
                      std::to_string(spec.total_epochs) + ")");
  }
  if (epoch < spec.warmup_epochs) {
    const double frac = static_cast<double>(epoch) / static_cast<double>(spec.warmup_epochs);
    return spec.warmup_lr + (spec.base_lr - spec.warmup_lr) * frac;
  }
  const double progress = static_cast<double>(epoch - spec.warmup_epochs) /
                          static_cast<double>(spec.total_epochs - spec.warmup_epochs);
  return spec.min_lr +
         (spec.base_lr - spec.min_lr) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace spg
