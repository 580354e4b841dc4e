#pragma once

#include <cmath>
#include <vector>

#include "tsim/mathfn.hpp"
#include "tsim/nn.hpp"
#include "tsim/simcore.hpp"

namespace tsim {

// Action distribution: a = hi * X with X ~ Beta(alpha, beta). `hi` is the
// per-observation legal speed ceiling, so sampled actions are always legal and
// the environment only ever clamps for acceleration feasibility.
struct BetaDist {
    double alpha = 1.0;
    double beta = 1.0;
    double hi = 1.0;

    double mean() const { return hi * alpha / (alpha + beta); }
};

struct PolicyParams {
    MlpParams actor;   // 2 outputs: pre-softplus Beta shapes
    MlpParams critic;  // 1 output: state value
    ObservationScaler scaler;
    double v_cap = 11.0;

    void validate() const {
        actor.validate();
        critic.validate();
        require(actor.output_dim() == 2, ErrorKind::BadConfig, "policy: actor must have 2 outputs");
        require(critic.output_dim() == 1, ErrorKind::BadConfig, "policy: critic must have 1 output");
        require(actor.input_dim() == static_cast<int>(scaler.scale.size()) &&
                    critic.input_dim() == actor.input_dim(),
                ErrorKind::DimensionMismatch, "policy: network/scaler dimension mismatch");
        require(v_cap > 0.0, ErrorKind::BadConfig, "policy: v_cap must be positive");
    }
};

inline PolicyParams make_policy(int num_lanes, double v_cap, Rng& rng) {
    const int d = num_lanes + Observation::kExtra;
    PolicyParams p;
    p.actor = mlp_init({d, 32, 32, 2}, rng);
    p.critic = mlp_init({d, 32, 32, 1}, rng);
    p.scaler = ObservationScaler(num_lanes, v_cap);
    p.v_cap = v_cap;
    p.validate();
    return p;
}

// Forward pass bundle kept around for the backward passes.
struct ActorEval {
    std::vector<double> x;  // scaled input
    MlpCache cache;
    double raw0 = 0.0, raw1 = 0.0;
    BetaDist dist;
};

inline ActorEval eval_actor(const PolicyParams& p, const Observation& obs) {
    ActorEval ev;
    ev.x = p.scaler.apply(obs);
    const std::vector<double> raw = mlp_forward(p.actor, ev.x, &ev.cache);
    ev.raw0 = raw[0];
    ev.raw1 = raw[1];
    // softplus + 1 keeps both shapes >= 1: unimodal, no density spikes at the
    // support edges.
    ev.dist.alpha = softplus(raw[0]) + 1.0;
    ev.dist.beta = softplus(raw[1]) + 1.0;
    ev.dist.hi = std::min(obs.speed_limit(), p.v_cap);
    return ev;
}

inline BetaDist actor_dist(const PolicyParams& p, const Observation& obs) {
    return eval_actor(p, obs).dist;
}

inline double sample_action(const BetaDist& d, Rng& rng) {
    return d.hi * rng.beta(d.alpha, d.beta);
}

// Log density of action a under the scaled Beta, with the 1/hi change of
// variables. Endpoints are nudged inward by 1e-6*hi so boundary actions stay
// finite.
inline double log_prob(const BetaDist& d, double a) {
    require(a >= 0.0 && a <= d.hi, ErrorKind::OutOfSupport,
            "action " + std::to_string(a) + " outside [0, " + std::to_string(d.hi) + "]");
    const double eps = 1e-6;
    const double x = std::clamp(a, eps * d.hi, (1.0 - eps) * d.hi) / d.hi;
    return (d.alpha - 1.0) * std::log(x) + (d.beta - 1.0) * std::log1p(-x) -
           log_beta_fn(d.alpha, d.beta) - std::log(d.hi);
}

// d(log_prob)/d(alpha) and d(log_prob)/d(beta) at fixed action.
inline void log_prob_grad_shapes(const BetaDist& d, double a, double& dla, double& dlb) {
    const double eps = 1e-6;
    const double x = std::clamp(a, eps * d.hi, (1.0 - eps) * d.hi) / d.hi;
    const double psi_ab = digamma(d.alpha + d.beta);
    dla = std::log(x) - digamma(d.alpha) + psi_ab;
    dlb = std::log1p(-x) - digamma(d.beta) + psi_ab;
}

// Pushes a gradient at the Beta shapes back onto the flat actor parameters:
// d(alpha)/d(raw) is the softplus derivative, then the usual MLP backward.
inline void backprop_actor(const PolicyParams& p, const ActorEval& ev, double dalpha, double dbeta,
                           std::vector<double>& grad) {
    const std::vector<double> dy = {dalpha * sigmoid(ev.raw0), dbeta * sigmoid(ev.raw1)};
    mlp_backward(p.actor, ev.cache, dy, grad);
}

// Entropy of the scaled Beta (the hi scaling adds log hi).
inline double entropy(const BetaDist& d) {
    return log_beta_fn(d.alpha, d.beta) - (d.alpha - 1.0) * digamma(d.alpha) -
           (d.beta - 1.0) * digamma(d.beta) +
           (d.alpha + d.beta - 2.0) * digamma(d.alpha + d.beta) + std::log(d.hi);
}

// KL(p || q) between Beta distributions in closed form. The hi scaling cancels
// when both sides share the same ceiling, which they do for a fixed
// observation.
inline double beta_kl(const BetaDist& p, const BetaDist& q) {
    return log_beta_fn(q.alpha, q.beta) - log_beta_fn(p.alpha, p.beta) +
           (p.alpha - q.alpha) * digamma(p.alpha) + (p.beta - q.beta) * digamma(p.beta) +
           (q.alpha - p.alpha + q.beta - p.beta) * digamma(p.alpha + p.beta);
}

// Mean KL(old || new) over a batch of observations.
inline double kl_policy(const PolicyParams& p_old, const PolicyParams& p_new,
                        const std::vector<Observation>& batch) {
    require(!batch.empty(), ErrorKind::EmptyBuffer, "kl_policy: empty observation batch");
    double acc = 0.0;
    for (const Observation& o : batch)
        acc += beta_kl(actor_dist(p_old, o), actor_dist(p_new, o));
    return acc / static_cast<double>(batch.size());
}

// Gradient of mean KL(old || new) with respect to the new policy's actor
// parameters, accumulated into grad. Used by curvature checks.
inline void kl_policy_grad(const PolicyParams& p_old, const PolicyParams& p_new,
                           const std::vector<Observation>& batch, std::vector<double>& grad) {
    require(!batch.empty(), ErrorKind::EmptyBuffer, "kl_policy_grad: empty observation batch");
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Observation& o : batch) {
        const BetaDist d_old = actor_dist(p_old, o);
        ActorEval ev = eval_actor(p_new, o);
        const double s = ev.dist.alpha + ev.dist.beta;
        const double dka = (digamma(ev.dist.alpha) - digamma(s) - digamma(d_old.alpha) +
                            digamma(d_old.alpha + d_old.beta));
        const double dkb = (digamma(ev.dist.beta) - digamma(s) - digamma(d_old.beta) +
                            digamma(d_old.alpha + d_old.beta));
        backprop_actor(p_new, ev, inv * dka, inv * dkb, grad);
    }
}

inline double critic_value(const PolicyParams& p, const Observation& obs) {
    return mlp_forward(p.critic, p.scaler.apply(obs))[0];
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json policy_to_json(const PolicyParams& p) {
    return nlohmann::json{{"kind", "policy"},
                          {"v_cap", p.v_cap},
                          {"scaler", p.scaler.scale},
                          {"actor", mlp_to_json(p.actor)},
                          {"critic", mlp_to_json(p.critic)}};
}

inline PolicyParams policy_from_json(const nlohmann::json& j) {
    require(j.value("kind", "") == std::string("policy"), ErrorKind::MalformedInput,
            "checkpoint: expected kind \"policy\"");
    PolicyParams p;
    p.v_cap = j.at("v_cap").get<double>();
    p.scaler.scale = j.at("scaler").get<std::vector<double>>();
    p.actor = mlp_from_json(j.at("actor"));
    p.critic = mlp_from_json(j.at("critic"));
    p.validate();
    return p;
}

inline void save_policy(const PolicyParams& p, const std::string& path) {
    detail::write_text_file(path, policy_to_json(p).dump(2) + "\n");
}

inline PolicyParams load_policy(const std::string& path) {
    return policy_from_json(detail::load_json_file(path));
}

}  // namespace tsim
