#include "diffender/schedule.hpp"

#include "diffender/errors.hpp"

#include <algorithm>
#include <cmath>

namespace diffender {

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
    if (T < 2) throw ParamError("schedule needs T >= 2");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw ParamError("schedule needs 0 < beta_min <= beta_max < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) / static_cast<double>(T - 1);
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

int ratio_to_step(double ratio, const NoiseSchedule& sched) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ParamError("noise ratio must lie in [0,1]");
    const long k = std::lround(ratio * static_cast<double>(sched.T - 1));
    return static_cast<int>(std::clamp<long>(k, 0, sched.T - 1));
}

std::vector<int> respaced_steps(int start, int count) {
    if (count < 1) throw ParamError("step count must be >= 1");
    if (start < 0) throw ParamError("start step must be >= 0");
    count = std::min(count, start + 1);
    std::vector<int> steps;
    steps.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double frac = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        steps.push_back(static_cast<int>(std::lround(start * (1.0 - frac))));
    }
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

}  // namespace diffender
