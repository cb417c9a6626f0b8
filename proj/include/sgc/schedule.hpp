#pragma once

#include <cmath>

#include "sgc/core/types.hpp"

namespace sgc {

struct LrSchedule {
  double base_lr = 5e-4;
  double final_lr = 0.0;
  long warmup_steps = 0;
  long total_steps = 1;
};

// Linear warmup from 0 to base_lr, then cosine decay reaching final_lr at
// the last step.
inline double lr_at(long step, const LrSchedule& s) {
  check(step >= 0, "lr_at: negative step");
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return s.base_lr * double(step) / double(s.warmup_steps);
  if (step >= s.total_steps || s.total_steps <= s.warmup_steps) return s.final_lr;
  const double progress =
      double(step - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
  return s.final_lr + 0.5 * (s.base_lr - s.final_lr) * (1.0 + std::cos(M_PI * progress));
}

// Teacher momentum: fixed by default; optional cosine ramp toward 1.
inline double ema_momentum_at(long step, double base, long total_steps, bool cosine) {
  if (!cosine) return base;
  const double progress = total_steps > 0 ? double(step) / double(total_steps) : 1.0;
  return 1.0 - (1.0 - base) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace sgc
