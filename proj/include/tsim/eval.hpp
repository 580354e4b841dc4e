#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tsim/airl.hpp"
#include "tsim/reward.hpp"

namespace tsim {

struct RmseResult {
    double value = 0.0;
    // Fraction of reference vehicle-steps that had a counterpart in the
    // simulated set.
    double coverage = 0.0;
};

namespace detail {

enum class RmseQuantity { Position, Speed };

inline RmseResult rmse_over_time(const TrajectorySet& ref, const TrajectorySet& sim,
                                 RmseQuantity what) {
    require(!ref.tracks.empty() && ref.num_records() > 0, ErrorKind::EmptySet,
            "rmse: empty reference trajectory set");
    require(!sim.tracks.empty() && sim.num_records() > 0, ErrorKind::EmptySet,
            "rmse: empty simulated trajectory set");
    if (ref.horizon && sim.horizon)
        require(*ref.horizon == *sim.horizon, ErrorKind::HorizonMismatch,
                "rmse: horizons differ (" + std::to_string(*ref.horizon) + " vs " +
                    std::to_string(*sim.horizon) + ")");
    const int horizon = std::max(ref.effective_horizon(), sim.effective_horizon());

    // Bucket values by timestep.
    const auto bucket = [&](const TrajectorySet& ts) {
        std::vector<std::map<int, double>> by_t(static_cast<std::size_t>(horizon));
        for (const VehicleTrack& tr : ts.tracks)
            for (const StepRecord& r : tr.records) {
                if (r.t < 0 || r.t >= horizon) continue;
                by_t[static_cast<std::size_t>(r.t)][tr.vehicle] =
                    what == RmseQuantity::Position ? r.cpos : r.speed;
            }
        return by_t;
    };
    const std::vector<std::map<int, double>> ref_t = bucket(ref);
    const std::vector<std::map<int, double>> sim_t = bucket(sim);

    double total = 0.0;
    int steps_counted = 0;
    std::size_t matched = 0;
    std::size_t ref_steps = 0;
    for (int t = 0; t < horizon; ++t) {
        const auto& a = ref_t[static_cast<std::size_t>(t)];
        const auto& b = sim_t[static_cast<std::size_t>(t)];
        ref_steps += a.size();
        double sq = 0.0;
        int m = 0;
        for (const auto& [veh, va] : a) {
            const auto it = b.find(veh);
            if (it == b.end()) continue;
            sq += (va - it->second) * (va - it->second);
            ++m;
        }
        if (m > 0) {
            total += std::sqrt(sq / static_cast<double>(m));
            ++steps_counted;
            matched += static_cast<std::size_t>(m);
        }
    }
    RmseResult out;
    out.value = steps_counted > 0 ? total / static_cast<double>(steps_counted) : 0.0;
    out.coverage =
        ref_steps > 0 ? static_cast<double>(matched) / static_cast<double>(ref_steps) : 0.0;
    return out;
}

}  // namespace detail

// Mean over timesteps of the per-step RMSE between route-cumulative positions
// of vehicles present in both sets. Steps with no common vehicle are skipped.
inline RmseResult rmse_position(const TrajectorySet& ref, const TrajectorySet& sim) {
    return detail::rmse_over_time(ref, sim, detail::RmseQuantity::Position);
}

inline RmseResult rmse_speed(const TrajectorySet& ref, const TrajectorySet& sim) {
    return detail::rmse_over_time(ref, sim, detail::RmseQuantity::Speed);
}

// Average of per-vehicle mean step rewards: every vehicle weighs the same
// regardless of how long it stayed in the network.
inline double mean_reward(const TrajectorySet& ts, const DynamicsConfig& dyn,
                          const RewardParams& rp) {
    require(!ts.tracks.empty() && ts.num_records() > 0, ErrorKind::EmptySet,
            "mean_reward: empty trajectory set");
    double acc = 0.0;
    int vehicles = 0;
    for (const VehicleTrack& tr : ts.tracks) {
        if (tr.records.empty()) continue;
        double v = 0.0;
        for (const StepRecord& r : tr.records) v += handcrafted_reward(r.obs, dyn, rp);
        acc += v / static_cast<double>(tr.records.size());
        ++vehicles;
    }
    return acc / static_cast<double>(vehicles);
}

// Mid-lane observation under a green light with a stopped leader ahead, used
// as the base point for reward-surface sweeps.
inline Observation make_surface_template(const RoadNetwork& net, int lane_id, double position) {
    const Lane& ln = net.lane(lane_id);
    Observation o(net.num_lanes());
    o.set_lane(lane_id);
    o.set_lane_length(ln.length);
    o.set_speed_limit(ln.speed_limit);
    o.set_signal_green(1.0);
    o.set_velocity(0.0);
    o.set_position(position);
    o.set_dist_to_light(ln.length - position);
    o.set_leader_velocity(0.0);
    o.set_leader_position(position);
    o.set_gap(0.0);
    o.set_is_leading(0.0);
    o.set_has_exited(0.0);
    return o;
}

// Scores a (speed x gap) grid of synthetic observations derived from a
// template: velocity and gap are overwritten and the leader slots re-derived
// so the observation stays internally consistent.
inline std::vector<std::vector<double>> reward_surface(
    const std::function<double(const Observation&)>& score, const std::vector<double>& speeds,
    const std::vector<double>& gaps, const Observation& template_obs, const DynamicsConfig& dyn) {
    require(!speeds.empty() && !gaps.empty(), ErrorKind::BadConfig,
            "reward_surface: empty speed or gap grid");
    std::vector<std::vector<double>> grid(speeds.size(), std::vector<double>(gaps.size(), 0.0));
    for (std::size_t i = 0; i < speeds.size(); ++i)
        for (std::size_t j = 0; j < gaps.size(); ++j) {
            Observation o = template_obs;
            o.set_velocity(speeds[i]);
            o.set_gap(gaps[j]);
            o.set_is_leading(0.0);
            o.set_leader_position(o.position() + dyn.vehicle_length + gaps[j]);
            grid[i][j] = score(o);
        }
    return grid;
}

inline void save_surface_csv(const std::vector<std::vector<double>>& grid,
                             const std::vector<double>& speeds, const std::vector<double>& gaps,
                             const std::string& path) {
    std::string out = "speed";
    char buf[48];
    for (double g : gaps) {
        std::snprintf(buf, sizeof(buf), ",gap_%.10g", g);
        out += buf;
    }
    out += '\n';
    for (std::size_t i = 0; i < speeds.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.10g", speeds[i]);
        out += buf;
        for (double v : grid[i]) {
            std::snprintf(buf, sizeof(buf), ",%.10g", v);
            out += buf;
        }
        out += '\n';
    }
    detail::write_text_file(path, out);
}

// Spearman rank correlation with average ranks on ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size() && a.size() >= 2, ErrorKind::BadConfig,
            "spearman: need two equal-length series");
    const auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size(), 0.0);
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    require(va > 0.0 && vb > 0.0, ErrorKind::BadConfig, "spearman: constant series");
    return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Dynamics-transfer experiment.

struct TransferConfig {
    RewardTrainConfig retrain;  // schedule for re-optimizing under frozen r
    int eval_horizon = 100;     // evaluation episode length
    std::uint64_t eval_seed = 0;
};

struct TransferReport {
    double transferred_reward = 0.0;  // old policy dropped into the new dynamics
    double retrained_reward = 0.0;    // fresh policy trained on frozen r only
    std::vector<RewardTrainLogRow> retrain_log;
};

// Evaluates how well the recovered reward survives a dynamics change: score
// the old policy as-is under the new dynamics, then train a fresh policy from
// scratch there using only the frozen state reward, and score that. Scores are
// mean hand-crafted rewards of deterministic rollouts.
inline TransferReport run_transfer(const RoadNetwork& net, const SignalPlan& plan,
                                   const FlowSpec& flow, const DynamicsConfig& new_dyn,
                                   const PolicyParams& old_policy,
                                   const DiscriminatorParams& frozen_disc,
                                   const RewardParams& true_reward, const TransferConfig& cfg) {
    TransferReport rep;
    {
        Env env(net, plan, flow, new_dyn);
        TrajectorySet ts =
            simulate_policy(env, mean_policy(old_policy), cfg.eval_horizon, cfg.eval_seed);
        rep.transferred_reward = mean_reward(ts, new_dyn, true_reward);
    }
    {
        Env env(net, plan, flow, new_dyn);
        const auto rhat = [&frozen_disc](const Observation& o) {
            return reward_value(frozen_disc, o);
        };
        RewardTrainResult rt = train_policy_on_reward(env, rhat, cfg.retrain);
        rep.retrain_log = std::move(rt.log);
        Env eval_env(net, plan, flow, new_dyn);
        TrajectorySet ts =
            simulate_policy(eval_env, mean_policy(rt.policy), cfg.eval_horizon, cfg.eval_seed);
        rep.retrained_reward = mean_reward(ts, new_dyn, true_reward);
    }
    return rep;
}

inline nlohmann::json transfer_report_to_json(const TransferReport& rep) {
    nlohmann::json log = nlohmann::json::array();
    for (const RewardTrainLogRow& r : rep.retrain_log)
        log.push_back({{"iter", r.iter},
                       {"mean_reward", r.mean_reward},
                       {"mean_true_reward", r.mean_true_reward}});
    return nlohmann::json{{"transferred", {{"mean_reward", rep.transferred_reward}}},
                          {"retrained", {{"mean_reward", rep.retrained_reward}}},
                          {"retrain_log", log}};
}

struct Metrics {
    double rmse_pos = 0.0;
    double rmse_speed = 0.0;
    double coverage = 0.0;
    double mean_reward = 0.0;
};

inline Metrics compute_metrics(const TrajectorySet& ref, const TrajectorySet& sim,
                               const DynamicsConfig& dyn, const RewardParams& rp) {
    Metrics m;
    const RmseResult rp_res = rmse_position(ref, sim);
    m.rmse_pos = rp_res.value;
    m.coverage = rp_res.coverage;
    m.rmse_speed = rmse_speed(ref, sim).value;
    m.mean_reward = mean_reward(sim, dyn, rp);
    return m;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
    return nlohmann::json{{"rmse_pos", m.rmse_pos},
                          {"rmse_speed", m.rmse_speed},
                          {"coverage", m.coverage},
                          {"mean_reward", m.mean_reward}};
}

}  // namespace tsim
