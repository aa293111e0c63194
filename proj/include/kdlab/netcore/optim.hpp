#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <variant>
#include <vector>

#include "kdlab/core.hpp"
#include "kdlab/netcore/convnet.hpp"

namespace kdl::net {

/// Cosine annealing from base_lr at epoch 0 to eta_min at t_max. Epochs past t_max stay at eta_min.
inline double cosine_lr(std::size_t epoch, double base_lr, std::size_t t_max, double eta_min) {
  if (t_max == 0 || epoch >= t_max) return eta_min;
  double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(t_max);
  return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + std::cos(phase));
}

/// base_lr * decay^(number of milestones <= epoch).
inline double step_lr(std::size_t epoch, double base_lr, const std::vector<std::size_t>& milestones, double decay) {
  double lr = base_lr;
  for (std::size_t m : milestones)
    if (m <= epoch) lr *= decay;
  return lr;
}

struct CosineSchedule {
  std::size_t t_max = 1;
  double eta_min = 0.0;
  bool operator==(const CosineSchedule&) const = default;
};

struct StepSchedule {
  std::vector<std::size_t> milestones;
  double decay = 0.1;
  bool operator==(const StepSchedule&) const = default;
};

using Schedule = std::variant<CosineSchedule, StepSchedule>;

inline void validate_schedule(const Schedule& schedule, double base_lr) {
  if (!(base_lr > 0.0)) fail(ErrorKind::config, "base learning rate must be > 0, got ", base_lr);
  if (const auto* c = std::get_if<CosineSchedule>(&schedule)) {
    if (c->eta_min < 0.0) fail(ErrorKind::config, "cosine eta_min must be >= 0");
  } else {
    const auto& s = std::get<StepSchedule>(schedule);
    if (s.decay < 0.0) fail(ErrorKind::config, "step decay must be >= 0");
    for (std::size_t i = 1; i < s.milestones.size(); ++i)
      if (s.milestones[i] <= s.milestones[i - 1]) fail(ErrorKind::config, "step milestones must be strictly increasing");
  }
}

inline double scheduled_lr(const Schedule& schedule, double base_lr, std::size_t epoch) {
  return std::visit(
      [&](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, CosineSchedule>)
          return cosine_lr(epoch, base_lr, s.t_max, s.eta_min);
        else
          return step_lr(epoch, base_lr, s.milestones, s.decay);
      },
      schedule);
}

template <typename T>
struct OptimState {
  double base_lr = 0.1;
  double momentum = 0.9;
  Schedule schedule = CosineSchedule{};
  ModelParams<T> velocity;

  OptimState() = default;
  OptimState(const ConvNetSpec& spec, double lr, double mu, Schedule sched)
      : base_lr(lr), momentum(mu), schedule(std::move(sched)), velocity(ModelParams<T>::zeros(spec)) {
    validate_schedule(schedule, base_lr);
    if (momentum < 0.0 || momentum >= 1.0) fail(ErrorKind::config, "momentum must lie in [0,1), got ", momentum);
  }

  double lr(std::size_t epoch) const { return scheduled_lr(schedule, base_lr, epoch); }
};

/// v <- mu*v + g;  p <- p - lr(epoch)*v.
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state, std::size_t epoch) {
  const T lr = static_cast<T>(state.lr(epoch));
  const T mu = static_cast<T>(state.momentum);
  auto ps = params.tensors();
  auto gs = grads.tensors();
  auto vs = state.velocity.tensors();
  if (ps.size() != gs.size() || ps.size() != vs.size()) fail(ErrorKind::shape, "sgd_step: parameter group mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->dims != gs[i]->dims || ps[i]->dims != vs[i]->dims)
      fail(ErrorKind::shape, "sgd_step: tensor ", i, " shape mismatch ", dims_string(ps[i]->dims), " vs ",
           dims_string(gs[i]->dims));
    T* p = ps[i]->data();
    const T* g = gs[i]->data();
    T* v = vs[i]->data();
    for (std::size_t j = 0; j < ps[i]->size(); ++j) {
      v[j] = mu * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }
}

}  // namespace kdl::net
