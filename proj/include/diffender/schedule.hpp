#pragma once

#include <vector>

namespace diffender {

/// Discrete diffusion schedule. alpha_bar[t] = prod_{s<=t} (1 - beta[s]).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
};

/// Linear beta schedule from beta_min to beta_max over T steps.
/// Throws ParamError unless T >= 2 and 0 < beta_min <= beta_max < 1.
NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

/// round(ratio·(T−1)) clamped to [0, T−1]. Throws ParamError outside [0,1].
int ratio_to_step(double ratio, const NoiseSchedule& sched);

/// Evenly spaced descending step sequence from T−1 (or `start`) to 0.
std::vector<int> respaced_steps(int start, int count);

}  // namespace diffender
