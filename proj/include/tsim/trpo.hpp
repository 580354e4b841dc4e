#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "tsim/policy.hpp"

namespace tsim {

// One transition in a rollout. `terminal` marks true episode ends (the vehicle
// exited); a row can also end an episode by truncation, in which case the
// value of next_obs still bootstraps the advantage tail.
struct RolloutRow {
    int vehicle = 0;
    int t = 0;
    Observation obs;
    Observation next_obs;
    double action = 0.0;
    double logp_old = 0.0;
    double reward = 0.0;
    bool terminal = false;

    // Filled by compute_advantages.
    double value = 0.0;
    double value_next = 0.0;
    double advantage = 0.0;
    double ret = 0.0;
};

struct RolloutBuffer {
    std::vector<RolloutRow> rows;

    std::vector<Observation> observations() const {
        std::vector<Observation> out;
        out.reserve(rows.size());
        for (const RolloutRow& r : rows) out.push_back(r.obs);
        return out;
    }
};

struct GaeConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    bool normalize = true;
};

// Generalized advantage estimation per vehicle episode. Rows of one vehicle
// with consecutive timesteps form an episode; a gap in t or a terminal row
// breaks the chain. Returns use the raw advantages, normalization happens
// after.
inline void compute_advantages(RolloutBuffer& buf, const PolicyParams& policy,
                               const GaeConfig& cfg) {
    require(!buf.rows.empty(), ErrorKind::EmptyBuffer, "compute_advantages: empty buffer");
    std::vector<std::size_t> order(buf.rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (buf.rows[a].vehicle != buf.rows[b].vehicle) return buf.rows[a].vehicle < buf.rows[b].vehicle;
        return buf.rows[a].t < buf.rows[b].t;
    });
    for (RolloutRow& r : buf.rows) {
        r.value = critic_value(policy, r.obs);
        r.value_next = r.terminal ? 0.0 : critic_value(policy, r.next_obs);
    }
    // Backward sweep; a row chains onto its successor only when that successor
    // is the same vehicle one step later and this row is not terminal.
    double next_adv = 0.0;
    int next_vehicle = -1;
    int next_t = -1;
    for (std::size_t k = order.size(); k-- > 0;) {
        RolloutRow& r = buf.rows[order[k]];
        const double delta = r.reward + cfg.gamma * r.value_next - r.value;
        const bool linked = !r.terminal && r.vehicle == next_vehicle && r.t + 1 == next_t;
        r.advantage = delta + (linked ? cfg.gamma * cfg.lambda * next_adv : 0.0);
        r.ret = r.advantage + r.value;
        next_adv = r.advantage;
        next_vehicle = r.vehicle;
        next_t = r.t;
    }
    if (cfg.normalize) {
        double mean = 0.0;
        for (const RolloutRow& r : buf.rows) mean += r.advantage;
        mean /= static_cast<double>(buf.rows.size());
        double var = 0.0;
        for (const RolloutRow& r : buf.rows) var += (r.advantage - mean) * (r.advantage - mean);
        const double sd = std::sqrt(var / static_cast<double>(buf.rows.size()));
        if (sd >= 1e-8)
            for (RolloutRow& r : buf.rows) r.advantage = (r.advantage - mean) / sd;
    }
}

// Importance-weighted policy objective L = mean(ratio * advantage) and its
// actor gradient at the current parameters.
inline double surrogate_and_grad(const PolicyParams& policy, const RolloutBuffer& buf,
                                 std::vector<double>* grad) {
    require(!buf.rows.empty(), ErrorKind::EmptyBuffer, "surrogate: empty buffer");
    const double inv = 1.0 / static_cast<double>(buf.rows.size());
    double total = 0.0;
    for (const RolloutRow& r : buf.rows) {
        ActorEval ev = eval_actor(policy, r.obs);
        const double logp = log_prob(ev.dist, r.action);
        const double ratio = std::exp(logp - r.logp_old);
        total += ratio * r.advantage;
        if (grad) {
            double dla = 0.0, dlb = 0.0;
            log_prob_grad_shapes(ev.dist, r.action, dla, dlb);
            const double c = inv * ratio * r.advantage;
            backprop_actor(policy, ev, c * dla, c * dlb, *grad);
        }
    }
    return total * inv;
}

inline double surrogate(const PolicyParams& policy, const RolloutBuffer& buf) {
    return surrogate_and_grad(policy, buf, nullptr);
}

// Hessian-vector product of mean KL(current || perturbed) with respect to the
// perturbation, evaluated at zero perturbation. At that point the KL Hessian
// through the shape parameters is exactly J^T G J with G the Beta Fisher
// matrix, computed here by a forward-mode pass (J v), the 2x2 G, and a reverse
// pass (J^T u). A damping multiple of v keeps the product positive definite.
inline std::vector<double> fisher_vector_product(const PolicyParams& policy,
                                                 const std::vector<Observation>& obs,
                                                 const std::vector<double>& v, double damping) {
    require(!obs.empty(), ErrorKind::EmptyBuffer, "fvp: empty observation batch");
    std::vector<double> out(v.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(obs.size());
    for (const Observation& o : obs) {
        ActorEval ev = eval_actor(policy, o);
        const std::vector<double> draw = mlp_jvp(policy.actor, ev.x, v);
        const double sa = sigmoid(ev.raw0);
        const double sb = sigmoid(ev.raw1);
        const double da = sa * draw[0];
        const double db = sb * draw[1];
        const double ta = trigamma(ev.dist.alpha);
        const double tb = trigamma(ev.dist.beta);
        const double ts = trigamma(ev.dist.alpha + ev.dist.beta);
        const double u0 = (ta - ts) * da - ts * db;
        const double u1 = -ts * da + (tb - ts) * db;
        const std::vector<double> dy = {inv * u0 * sa, inv * u1 * sb};
        mlp_backward(policy.actor, ev.cache, dy, out);
    }
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += damping * v[i];
    return out;
}

// Plain conjugate gradient for Ax = b with A given as a product oracle.
inline std::vector<double> conjugate_gradient(
    const std::function<std::vector<double>(const std::vector<double>&)>& avp,
    const std::vector<double>& b, int iters, double tol) {
    std::vector<double> x(b.size(), 0.0);
    std::vector<double> r = b;
    std::vector<double> p = b;
    double rs = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
    for (int it = 0; it < iters && std::sqrt(rs) > tol; ++it) {
        const std::vector<double> ap = avp(p);
        const double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
        if (!(pap > 0.0) || !std::isfinite(pap)) break;
        const double alpha = rs / pap;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        const double rs_new = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + (rs_new / rs) * p[i];
        rs = rs_new;
    }
    return x;
}

struct TrpoConfig {
    double delta = 0.01;      // KL trust region per update
    double damping = 0.1;     // curvature damping
    int cg_iters = 10;
    double cg_tol = 1e-10;
    int backtracks = 10;      // line search halvings
    int critic_epochs = 10;
    int critic_batch = 64;
    double critic_lr = 1e-3;
};

struct TrpoReport {
    bool accepted = false;
    double surrogate_before = 0.0;
    double surrogate_after = 0.0;
    double kl = 0.0;
    double step_scale = 0.0;
    double grad_norm = 0.0;
};

// Minibatch regression of the critic onto the rows' returns.
inline void fit_critic(PolicyParams& policy, const RolloutBuffer& buf, int epochs, int batch,
                       double lr, Rng& rng) {
    require(!buf.rows.empty(), ErrorKind::EmptyBuffer, "fit_critic: empty buffer");
    std::vector<std::size_t> idx(buf.rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> grad(policy.critic.w.size(), 0.0);
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch));
            std::fill(grad.begin(), grad.end(), 0.0);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const RolloutRow& r = buf.rows[idx[k]];
                MlpCache cache;
                const std::vector<double> x = policy.scaler.apply(r.obs);
                const double vpred = mlp_forward(policy.critic, x, &cache)[0];
                mlp_backward(policy.critic, cache, {2.0 * (vpred - r.ret) * inv}, grad);
            }
            sgd_step(policy.critic.w, grad, lr);
        }
    }
}

// One trust-region policy step followed by a critic fit. Expects advantages
// and returns to be present (compute_advantages) and logp_old to refer to the
// policy passed in, so the initial ratio is 1.
inline TrpoReport trpo_update(PolicyParams& policy, const RolloutBuffer& buf,
                              const TrpoConfig& cfg, Rng& rng) {
    require(!buf.rows.empty(), ErrorKind::EmptyBuffer, "trpo_update: empty buffer");
    TrpoReport rep;
    std::vector<double> g(policy.actor.w.size(), 0.0);
    rep.surrogate_before = surrogate_and_grad(policy, buf, &g);
    rep.surrogate_after = rep.surrogate_before;
    rep.grad_norm = std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0));

    const std::vector<Observation> obs = buf.observations();
    if (rep.grad_norm > 1e-12) {
        const auto avp = [&](const std::vector<double>& v) {
            return fisher_vector_product(policy, obs, v, cfg.damping);
        };
        const std::vector<double> dir = conjugate_gradient(avp, g, cfg.cg_iters, cfg.cg_tol);
        const std::vector<double> hdir = avp(dir);
        const double shs = std::inner_product(dir.begin(), dir.end(), hdir.begin(), 0.0);
        if (shs > 1e-16 && std::isfinite(shs)) {
            const double full = std::sqrt(2.0 * cfg.delta / shs);
            const PolicyParams before = policy;
            double scale = 1.0;
            for (int k = 0; k < cfg.backtracks; ++k, scale *= 0.5) {
                PolicyParams cand = before;
                for (std::size_t i = 0; i < cand.actor.w.size(); ++i)
                    cand.actor.w[i] += scale * full * dir[i];
                if (!all_finite(cand.actor.w)) continue;
                double cand_surr;
                try {
                    cand_surr = surrogate(cand, buf);
                } catch (const Error&) {
                    continue;
                }
                const double kl = kl_policy(before, cand, obs);
                if (std::isfinite(cand_surr) && std::isfinite(kl) &&
                    cand_surr > rep.surrogate_before && kl <= 1.5 * cfg.delta) {
                    policy = cand;
                    rep.accepted = true;
                    rep.surrogate_after = cand_surr;
                    rep.kl = kl;
                    rep.step_scale = scale;
                    break;
                }
            }
        }
    }

    fit_critic(policy, buf, cfg.critic_epochs, cfg.critic_batch, cfg.critic_lr, rng);
    return rep;
}

// ---------------------------------------------------------------------------
// Plain policy optimization against a fixed reward function.

struct RewardTrainConfig {
    int iterations = 150;
    int update_period = 50;
    int gen_epochs = 10;
    int horizon = 0;  // 0 -> update_period
    GaeConfig gae;
    TrpoConfig trpo;
    std::uint64_t seed = 0;
};

struct RewardTrainLogRow {
    int iter = 0;
    double mean_reward = 0.0;       // under the training reward
    double mean_true_reward = 0.0;  // optional reference score
};

struct RewardTrainResult {
    PolicyParams policy;
    std::vector<RewardTrainLogRow> log;
};

// Trains a fresh policy by TRPO on reward_fn(s) alone: rollout segments from a
// persistent environment, generalized advantages, repeated trust-region
// updates. No expert data or discriminator involved; this is both the
// reward-optimal expert builder and the re-optimization step after a dynamics
// change.
inline RewardTrainResult train_policy_on_reward(
    Env& env, const std::function<double(const Observation&)>& reward_fn,
    const RewardTrainConfig& cfg,
    const std::function<double(const Observation&)>& reference_fn = nullptr) {
    require(cfg.iterations >= 1 && cfg.update_period >= 1, ErrorKind::BadConfig,
            "train_policy_on_reward: iterations and update_period must be >= 1");
    const int horizon = cfg.horizon > 0 ? cfg.horizon : cfg.update_period;

    Rng master(cfg.seed);
    Rng rng_init = master.fork(1);
    Rng rng_rollout = master.fork(2);
    Rng rng_critic = master.fork(3);

    RewardTrainResult out;
    out.policy = make_policy(env.network().num_lanes(), env.dynamics().v_cap, rng_init);

    std::map<int, Observation> obs = env.reset(cfg.seed);
    int ep_t = 0;
    int episode = 0;
    int global_t = 0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        RolloutBuffer buf;
        for (int step = 0; step < cfg.update_period; ++step) {
            if (ep_t >= horizon || (obs.empty() && env.idle())) {
                obs = env.reset(cfg.seed);
                ep_t = 0;
                ++episode;
            }
            std::map<int, double> actions;
            std::map<int, ActorEval> evals;
            for (const auto& [id, o] : obs) {
                ActorEval ev = eval_actor(out.policy, o);
                actions.emplace(id, sample_action(ev.dist, rng_rollout));
                evals.emplace(id, std::move(ev));
            }
            StepResult res = env.step(actions);
            for (const auto& [id, o] : obs) {
                RolloutRow row;
                row.vehicle = id + episode * 1000000;
                row.t = global_t;
                row.obs = o;
                row.next_obs = res.obs.at(id);
                row.action = res.realized.at(id);
                row.logp_old = log_prob(evals.at(id).dist, row.action);
                row.reward = reward_fn(o);
                row.terminal = res.done.at(id);
                buf.rows.push_back(std::move(row));
            }
            obs.clear();
            for (const auto& [id, o] : res.obs)
                if (!res.done.at(id)) obs.emplace(id, o);
            ++ep_t;
            ++global_t;
        }
        require(!buf.rows.empty(), ErrorKind::EmptyBuffer,
                "train_policy_on_reward: rollout produced no transitions");

        RewardTrainLogRow lr;
        lr.iter = iter;
        for (const RolloutRow& r : buf.rows) lr.mean_reward += r.reward;
        lr.mean_reward /= static_cast<double>(buf.rows.size());
        if (reference_fn) {
            for (const RolloutRow& r : buf.rows) lr.mean_true_reward += reference_fn(r.obs);
            lr.mean_true_reward /= static_cast<double>(buf.rows.size());
        }
        out.log.push_back(lr);

        for (int e = 0; e < cfg.gen_epochs; ++e) {
            for (RolloutRow& r : buf.rows)
                r.logp_old = log_prob(actor_dist(out.policy, r.obs), r.action);
            compute_advantages(buf, out.policy, cfg.gae);
            trpo_update(out.policy, buf, cfg.trpo, rng_critic);
        }
    }
    return out;
}

// Deterministic policy wrapper: acts with the Beta mean. Used for evaluation
// rollouts so comparisons are free of sampling noise.
inline PolicyFn mean_policy(PolicyParams p) {
    return [p = std::move(p)](int, const Observation& o) { return actor_dist(p, o).mean(); };
}

}  // namespace tsim
