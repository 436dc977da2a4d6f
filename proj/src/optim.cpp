#include "micle/optim.hpp"

#include <cmath>

namespace micle {

std::vector<NamedBlob> OptimState::to_blobs() const {
    std::vector<NamedBlob> out;
    out.reserve(momentum.size());
    for (const auto& [name, buf] : momentum) {
        out.push_back({name, Shape{buf.size()}, buf});
    }
    return out;
}

OptimState OptimState::from_blobs(const std::vector<NamedBlob>& blobs) {
    OptimState s;
    for (const auto& b : blobs) s.momentum[b.name] = b.data;
    return s;
}

namespace {

double l2_norm(const std::vector<float>& v) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(ss);
}

void apply_step(Params<float>& params, OptimState& state, double lr_t, double momentum,
                double weight_decay, bool adapt, double eta,
                const std::vector<std::string>& exclude) {
    for (const auto& name : params.order) {
        auto& w = params.at(name);
        if (!w.has_grad()) continue;
        const auto& g = w.grad();
        for (float v : g) {
            if (!std::isfinite(v)) {
                throw NumericError("non-finite gradient in parameter '" + name + "'");
            }
        }
        std::vector<float> gp(g.size());
        const auto& wv = w.value();
        for (std::size_t i = 0; i < gp.size(); ++i) {
            gp[i] = g[i] + static_cast<float>(weight_decay) * wv[i];
        }
        double r = 1.0;
        if (adapt) {
            bool excluded = false;
            for (const auto& pat : exclude) {
                if (name.find(pat) != std::string::npos) {
                    excluded = true;
                    break;
                }
            }
            if (!excluded) {
                const double wn = l2_norm(wv);
                const double gn = l2_norm(gp);
                if (wn > 0.0 && gn > 0.0) r = eta * wn / gn;
            }
        }
        auto& m = state.momentum[name];
        if (m.empty()) m.assign(gp.size(), 0.0f);
        const auto step_scale = static_cast<float>(lr_t * r);
        auto& wval = w.value();
        for (std::size_t i = 0; i < gp.size(); ++i) {
            m[i] = static_cast<float>(momentum) * m[i] + step_scale * gp[i];
            wval[i] -= m[i];
        }
    }
}

}  // namespace

void lars_step(Params<float>& params, OptimState& state, const LarsConfig& cfg, double lr_t) {
    apply_step(params, state, lr_t, cfg.momentum, cfg.weight_decay, true, cfg.trust_coefficient,
               cfg.exclude_from_adaptation);
}

void sgd_momentum_step(Params<float>& params, OptimState& state, double lr_t, double momentum,
                       double weight_decay) {
    apply_step(params, state, lr_t, momentum, weight_decay, false, 0.0, {});
}

double schedule_lr(const Schedule& schedule, std::size_t step) {
    if (step > schedule.total_steps) {
        throw UsageError("schedule step " + std::to_string(step) + " out of range [0, " +
                         std::to_string(schedule.total_steps) + "]");
    }
    if (schedule.kind == ScheduleKind::constant) return 1.0;
    check_dim(schedule.warmup_steps < schedule.total_steps,
              "warmup_steps must be smaller than total_steps");
    if (schedule.warmup_steps > 0 && step <= schedule.warmup_steps) {
        return static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
    }
    const double t = static_cast<double>(step - schedule.warmup_steps) /
                     static_cast<double>(schedule.total_steps - schedule.warmup_steps);
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

std::vector<SweepPoint> build_sweep() {
    std::vector<SweepPoint> out;
    out.reserve(28);
    for (int i = 0; i < 7; ++i) {
        const double lr = std::pow(10.0, -3.5 + 0.5 * i);
        for (double wd : {1e-5, 1e-4, 1e-3, 0.0}) {
            out.push_back({lr, wd});
        }
    }
    return out;
}

}  // namespace micle
