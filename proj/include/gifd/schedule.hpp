#ifndef GIFD_SCHEDULE_HPP_
#define GIFD_SCHEDULE_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "gifd/error.hpp"

namespace gifd {

/// Linear warmup to the peak over the first 1/20 of the steps, flat until
/// 1/4, cosine decay to zero over the final 3/4.
struct LRSchedule {
    double peak = 0.1;
    int64_t total_steps = 1000;
    double warmup_fraction = 1.0 / 20.0;
    double decay_start_fraction = 1.0 / 4.0;

    double at(double step) const {
        if (total_steps < 1) throw ConfigError("schedule needs at least one step");
        const double t = static_cast<double>(total_steps);
        const double warm = warmup_fraction * t;
        const double decay = decay_start_fraction * t;
        if (step <= 0.0) return 0.0;
        if (step >= t) return 0.0;
        if (step <= warm) return peak * step / warm;
        if (step <= decay) return peak;
        return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - decay) / (t - decay)));
    }
};

inline double lr_at(const LRSchedule& schedule, double step) { return schedule.at(step); }

/// One l1 radius per intermediate cut, r[0] for cut 1.
struct RadiusSchedule {
    std::vector<double> radii;

    void validate(int64_t k) const {
        if (static_cast<int64_t>(radii.size()) != k) {
            throw ConfigError("need one l1 radius per intermediate layer (" + std::to_string(k) + "), got " +
                              std::to_string(radii.size()));
        }
        for (double r : radii) {
            if (!(r > 0.0)) throw ConfigError("l1 radii must be positive");
        }
    }
};

}  // namespace gifd

#endif  // GIFD_SCHEDULE_HPP_
