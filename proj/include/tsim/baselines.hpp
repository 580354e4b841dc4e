#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tsim/eval.hpp"
#include "tsim/policy.hpp"

namespace tsim {

// ---------------------------------------------------------------------------
// Behavioral cloning: fit the Beta actor to expert state/action pairs by
// maximum likelihood, never touching the environment.

struct BcConfig {
    int epochs = 100;
    int batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct BcResult {
    PolicyParams policy;
    std::vector<double> nll_per_epoch;  // dataset mean of -log pi(a|s)
};

inline BcResult bc_train(const TrajectorySet& expert, int num_lanes, double v_cap,
                         const BcConfig& cfg) {
    require(expert.num_records() > 0, ErrorKind::EmptySet, "bc_train: empty expert set");
    require(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.lr > 0.0, ErrorKind::BadConfig,
            "bc_train: bad schedule");

    std::vector<const StepRecord*> pairs;
    for (const VehicleTrack& tr : expert.tracks)
        for (const StepRecord& r : tr.records) pairs.push_back(&r);

    Rng rng(cfg.seed);
    Rng init_rng = rng.fork(1);
    Rng shuffle_rng = rng.fork(2);

    BcResult out;
    out.policy = make_policy(num_lanes, v_cap, init_rng);
    PolicyParams& p = out.policy;

    const auto dataset_nll = [&]() {
        double acc = 0.0;
        for (const StepRecord* r : pairs) {
            const ActorEval ev = eval_actor(p, r->obs);
            acc -= log_prob(ev.dist, r->action);
        }
        return acc / static_cast<double>(pairs.size());
    };

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> grad;
    for (int e = 0; e < cfg.epochs; ++e) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            grad.assign(p.actor.w.size(), 0.0);
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                const StepRecord* r = pairs[order[k]];
                const ActorEval ev = eval_actor(p, r->obs);
                double dla = 0.0, dlb = 0.0;
                log_prob_grad_shapes(ev.dist, r->action, dla, dlb);
                backprop_actor(p, ev, -dla * inv, -dlb * inv, grad);
            }
            sgd_step(p.actor.w, grad, cfg.lr);
        }
        out.nll_per_epoch.push_back(dataset_nll());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Krauss car-following-model calibration. Candidates replace the acceleration
// bound, braking bound and speed cap of the simulated dynamics; the remaining
// physics (reaction time, step length, vehicle footprint) come from the base
// configuration. Fit is scored by positional RMSE against the expert run.

struct CfmParams {
    double a_max = 0.0;
    double b_max = 0.0;
    double v_cap = 0.0;
};

struct CfmBounds {
    CfmParams lo;
    CfmParams hi;

    void validate() const {
        require(lo.a_max > 0.0 && lo.b_max > 0.0 && lo.v_cap > 0.0 && lo.a_max < hi.a_max &&
                    lo.b_max < hi.b_max && lo.v_cap < hi.v_cap,
                ErrorKind::BadConfig, "calibration bounds must be positive nonempty intervals");
    }

    CfmParams midpoint() const {
        return {0.5 * (lo.a_max + hi.a_max), 0.5 * (lo.b_max + hi.b_max),
                0.5 * (lo.v_cap + hi.v_cap)};
    }

    bool contains(const CfmParams& p) const {
        return p.a_max >= lo.a_max && p.a_max <= hi.a_max && p.b_max >= lo.b_max &&
               p.b_max <= hi.b_max && p.v_cap >= lo.v_cap && p.v_cap <= hi.v_cap;
    }
};

struct CalibrationScenario {
    RoadNetwork net;
    SignalPlan plan;
    FlowSpec flow;
    DynamicsConfig base_dyn;
    int horizon = 100;
};

struct CalibrationEntry {
    CfmParams params;
    double rmse = 0.0;
};

struct CalibrationResult {
    CfmParams best;
    double rmse = 0.0;
    int evals = 0;
    std::vector<CalibrationEntry> history;  // in evaluation order
};

inline DynamicsConfig apply_cfm(const DynamicsConfig& base, const CfmParams& p) {
    DynamicsConfig d = base;
    d.a_max = p.a_max;
    d.b_max = p.b_max;
    d.v_cap = p.v_cap;
    d.validate();
    return d;
}

// Runs the Krauss controller under candidate physics and scores it against
// the expert trajectories.
inline double cfm_objective(const CalibrationScenario& sc, const TrajectorySet& expert,
                            const CfmParams& p) {
    const DynamicsConfig dyn = apply_cfm(sc.base_dyn, p);
    Env env(sc.net, sc.plan, sc.flow, dyn);
    const PolicyFn controller = [&dyn](int, const Observation& obs) {
        return krauss_action(obs, dyn);
    };
    const TrajectorySet sim = simulate_policy(env, controller, sc.horizon, 0);
    if (sim.num_records() == 0) return std::numeric_limits<double>::infinity();
    return rmse_position(expert, sim).value;
}

inline CalibrationResult calibrate_random_search(const CalibrationScenario& sc,
                                                 const TrajectorySet& expert, int trials,
                                                 const CfmBounds& bounds, std::uint64_t seed) {
    require(trials >= 1, ErrorKind::BadConfig, "calibrate_random_search: trials must be >= 1");
    bounds.validate();
    Rng rng(seed);
    CalibrationResult out;
    out.rmse = std::numeric_limits<double>::infinity();
    for (int i = 0; i < trials; ++i) {
        CfmParams cand;
        cand.a_max = rng.uniform(bounds.lo.a_max, bounds.hi.a_max);
        cand.b_max = rng.uniform(bounds.lo.b_max, bounds.hi.b_max);
        cand.v_cap = rng.uniform(bounds.lo.v_cap, bounds.hi.v_cap);
        const double score = cfm_objective(sc, expert, cand);
        out.history.push_back({cand, score});
        ++out.evals;
        if (score < out.rmse) {
            out.rmse = score;
            out.best = cand;
        }
    }
    return out;
}

namespace detail {

inline bool cfm_close(const CfmParams& a, const CfmParams& b) {
    const double tol = 1e-9;
    return std::fabs(a.a_max - b.a_max) <= tol && std::fabs(a.b_max - b.b_max) <= tol &&
           std::fabs(a.v_cap - b.v_cap) <= tol;
}

}  // namespace detail

// Hill-walk with memory: from the bounds midpoint, repeatedly move to the best
// axis neighbor not currently on the tabu list, remembering the departed point
// so the walk cannot immediately backtrack. The move is taken even when it is
// worse than the current point; the returned answer is the best ever scored.
inline CalibrationResult calibrate_tabu_search(const CalibrationScenario& sc,
                                               const TrajectorySet& expert, int iters,
                                               const CfmParams& step_sizes, int tabu_len,
                                               const CfmBounds& bounds) {
    require(iters >= 1, ErrorKind::BadConfig, "calibrate_tabu_search: iters must be >= 1");
    require(step_sizes.a_max > 0.0 && step_sizes.b_max > 0.0 && step_sizes.v_cap > 0.0,
            ErrorKind::BadConfig, "calibrate_tabu_search: step sizes must be positive");
    require(tabu_len >= 1, ErrorKind::BadConfig, "calibrate_tabu_search: tabu_len must be >= 1");
    bounds.validate();

    CalibrationResult out;
    CfmParams current = bounds.midpoint();
    out.best = current;
    out.rmse = cfm_objective(sc, expert, current);
    out.history.push_back({current, out.rmse});
    ++out.evals;

    std::vector<CfmParams> tabu;
    const auto clampb = [&bounds](CfmParams p) {
        p.a_max = std::clamp(p.a_max, bounds.lo.a_max, bounds.hi.a_max);
        p.b_max = std::clamp(p.b_max, bounds.lo.b_max, bounds.hi.b_max);
        p.v_cap = std::clamp(p.v_cap, bounds.lo.v_cap, bounds.hi.v_cap);
        return p;
    };
    const auto is_tabu = [&tabu](const CfmParams& p) {
        for (const CfmParams& q : tabu)
            if (detail::cfm_close(p, q)) return true;
        return false;
    };

    for (int it = 0; it < iters; ++it) {
        std::vector<CfmParams> neighbors;
        for (int axis = 0; axis < 3; ++axis)
            for (double sign : {+1.0, -1.0}) {
                CfmParams n = current;
                if (axis == 0) n.a_max += sign * step_sizes.a_max;
                if (axis == 1) n.b_max += sign * step_sizes.b_max;
                if (axis == 2) n.v_cap += sign * step_sizes.v_cap;
                neighbors.push_back(clampb(n));
            }

        bool found = false;
        CfmParams move{};
        double move_score = std::numeric_limits<double>::infinity();
        for (const CfmParams& n : neighbors) {
            if (is_tabu(n) || detail::cfm_close(n, current)) continue;
            const double score = cfm_objective(sc, expert, n);
            out.history.push_back({n, score});
            ++out.evals;
            if (score < out.rmse) {
                out.rmse = score;
                out.best = n;
            }
            if (score < move_score) {
                move_score = score;
                move = n;
                found = true;
            }
        }
        if (!found) break;  // every neighbor tabu, walk is stuck
        tabu.push_back(current);
        if (static_cast<int>(tabu.size()) > tabu_len) tabu.erase(tabu.begin());
        current = move;
    }
    return out;
}

inline nlohmann::json calibration_report_to_json(const std::string& method,
                                                 const CalibrationResult& res) {
    nlohmann::json history = nlohmann::json::array();
    for (const CalibrationEntry& e : res.history)
        history.push_back({{"a_max", e.params.a_max},
                           {"b_max", e.params.b_max},
                           {"v_cap", e.params.v_cap},
                           {"rmse", e.rmse}});
    return nlohmann::json{{"method", method},
                          {"best",
                           {{"a_max", res.best.a_max},
                            {"b_max", res.best.b_max},
                            {"v_cap", res.best.v_cap}}},
                          {"rmse", res.rmse},
                          {"evals", res.evals},
                          {"history", history}};
}

}  // namespace tsim
