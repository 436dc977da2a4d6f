#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "micle/model.hpp"

namespace micle {

struct LarsConfig {
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double trust_coefficient = 1e-3;  // eta
    // Name substrings excluded from trust-ratio adaptation (r = 1); biases.
    std::vector<std::string> exclude_from_adaptation = {".b"};
};

struct OptimState {
    std::map<std::string, std::vector<float>> momentum;

    std::vector<NamedBlob> to_blobs() const;
    static OptimState from_blobs(const std::vector<NamedBlob>& blobs);
};

// Per-tensor LARS: g' = g + wd*w; trust ratio r = eta*||w||/||g'|| when both
// norms are positive, else 1; m <- momentum*m + (lr_t*r)*g'; w <- w - m.
// Excluded tensors use r = 1.
void lars_step(Params<float>& params, OptimState& state, const LarsConfig& cfg, double lr_t);

// SGD with momentum, the lr-inside-momentum form: m <- momentum*m +
// lr_t*(g + wd*w); w <- w - m. This is LARS with the trust ratio pinned to 1,
// so the two produce bitwise-identical trajectories in that regime.
void sgd_momentum_step(Params<float>& params, OptimState& state, double lr_t, double momentum,
                       double weight_decay);

enum class ScheduleKind { warmup_cosine, constant };

struct Schedule {
    std::size_t total_steps = 0;
    std::size_t warmup_steps = 0;
    ScheduleKind kind = ScheduleKind::warmup_cosine;
};

// Multiplier in [0,1]: linear ramp 0 -> 1 over warmup, cosine 1 -> 0 over the
// remainder; constant schedules always return 1.
double schedule_lr(const Schedule& schedule, std::size_t step);

// The fine-tuning grid: learning rates 10^-3.5 .. 10^-0.5 (7 values, evenly
// log-spaced), weight decays {1e-5, 1e-4, 1e-3} plus 0. 28 combinations,
// lr-major order.
struct SweepPoint {
    double lr;
    double weight_decay;
};
std::vector<SweepPoint> build_sweep();

}  // namespace micle
