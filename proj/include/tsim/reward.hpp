#pragma once

#include <algorithm>
#include <cmath>

#include "tsim/simcore.hpp"

namespace tsim {

struct RewardParams {
    double lambda = 1.0;  // weight of the gap deviation term
    double v_max = 11.0;  // speed normalizer and desired-speed ceiling, m/s
    double g_min = 25.0;  // minimum comfortable gap, m

    void validate() const {
        require(lambda >= 0.0 && v_max > 0.0 && g_min > 0.0, ErrorKind::BadConfig,
                "reward: lambda >= 0, v_max > 0, g_min > 0 required");
    }
};

// Target speed for the quadratic reward. Free driving means full permitted
// speed; a close leader or a nearby RED light switches to the Krauss safe
// speed toward that constraint.
inline double desired_speed(const Observation& obs, const DynamicsConfig& dyn,
                            const RewardParams& rp) {
    const bool leader_near = obs.is_leading() == 0.0 && obs.gap() <= rp.g_min;
    const bool light_near = obs.signal_green() == 0.0 && obs.dist_to_light() <= rp.g_min;
    if (!leader_near && !light_near) return std::min(rp.v_max, obs.speed_limit());
    double v_safe = std::numeric_limits<double>::infinity();
    if (leader_near)
        v_safe = std::min(v_safe,
                          krauss_safe_speed(obs.velocity(), obs.leader_velocity(), obs.gap(), dyn));
    if (light_near)
        v_safe = std::min(v_safe, krauss_safe_speed(obs.velocity(), 0.0, obs.dist_to_light(), dyn));
    return std::clamp(v_safe, 0.0, rp.v_max);
}

// Gaps at or above g_min are already comfortable, so only closer gaps carry a
// deviation.
inline double desired_gap(const Observation& obs, const RewardParams& rp) {
    return std::max(obs.gap(), rp.g_min);
}

// Quadratic state scoring in [-2, 0]: zero when driving at the desired speed
// with a comfortable gap. The gap term only applies behind an actual leader;
// stop lines and lane ends are judged through the desired speed alone.
inline double handcrafted_reward(const Observation& obs, const DynamicsConfig& dyn,
                                 const RewardParams& rp) {
    const double v_des = desired_speed(obs, dyn, rp);
    const double dv = (obs.velocity() - v_des) / rp.v_max;
    double penalty = dv * dv;
    if (obs.is_leading() == 0.0) {
        const double dg = (obs.gap() - desired_gap(obs, rp)) / rp.g_min;
        penalty += rp.lambda * dg * dg;
    }
    return -penalty;
}

}  // namespace tsim
