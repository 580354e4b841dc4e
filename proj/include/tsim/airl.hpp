#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tsim/reward.hpp"
#include "tsim/trpo.hpp"

namespace tsim {

// Two-headed discriminator: a state-only scoring net r(s) whose value is the
// recovered reward, and a potential net h(s) that absorbs dynamics-dependent
// shaping. Only their combination f enters the classifier, so r stays free of
// shaping terms.
struct DiscriminatorParams {
    MlpParams reward_net;
    MlpParams shaping_net;
    ObservationScaler scaler;
    double gamma = 0.99;

    void validate() const {
        reward_net.validate();
        shaping_net.validate();
        require(reward_net.output_dim() == 1 && shaping_net.output_dim() == 1,
                ErrorKind::BadConfig, "discriminator: nets must have one output");
        require(reward_net.input_dim() == static_cast<int>(scaler.scale.size()) &&
                    shaping_net.input_dim() == reward_net.input_dim(),
                ErrorKind::DimensionMismatch, "discriminator: net/scaler dimension mismatch");
        require(gamma > 0.0 && gamma <= 1.0, ErrorKind::BadConfig,
                "discriminator: gamma must be in (0, 1]");
    }
};

inline DiscriminatorParams make_discriminator(int num_lanes, double v_cap, double gamma, Rng& rng) {
    const int d = num_lanes + Observation::kExtra;
    DiscriminatorParams disc;
    disc.reward_net = mlp_init({d, 32, 32, 1}, rng);
    disc.shaping_net = mlp_init({d, 32, 32, 1}, rng);
    disc.scaler = ObservationScaler(num_lanes, v_cap);
    disc.gamma = gamma;
    disc.validate();
    return disc;
}

inline double reward_value(const DiscriminatorParams& d, const Observation& obs) {
    return mlp_forward(d.reward_net, d.scaler.apply(obs))[0];
}

inline double shaping_value(const DiscriminatorParams& d, const Observation& obs) {
    return mlp_forward(d.shaping_net, d.scaler.apply(obs))[0];
}

// f(s, a, s') = r(s) + gamma*h(s') - h(s). The action does not enter; it is
// part of the signature because f scores transitions. Exited successor states
// are absorbing: h is evaluated at s instead.
inline double f_value(const DiscriminatorParams& d, const Observation& s, double /*action*/,
                      const Observation& s_next) {
    const Observation& succ = s_next.has_exited() != 0.0 ? s : s_next;
    return reward_value(d, s) + d.gamma * shaping_value(d, succ) - shaping_value(d, s);
}

// D = sigmoid(f - log pi). Never forms exp(f) directly, so large logits stay
// finite.
inline double discriminator_prob(double f, double logp) { return sigmoid(f - logp); }

// Surrogate reward handed to the generator; algebraically log D - log(1-D).
inline double airl_reward(double f, double logp) { return f - logp; }

// One transition presented to the discriminator.
struct AirlSample {
    Observation s;
    Observation s_next;
    double action = 0.0;
    double logp = 0.0;  // log pi(a|s) under the current generator
};

struct AirlBatch {
    std::vector<AirlSample> generated;
    std::vector<AirlSample> expert;
};

struct DiscEval {
    double loss = 0.0;
    double accuracy = 0.0;
};

namespace detail {

// Backpropagates d(loss)/d(f) = c for one sample into both nets.
inline void accumulate_f_grad(const DiscriminatorParams& d, const AirlSample& smp, double c,
                              std::vector<double>& grad_r, std::vector<double>& grad_h) {
    const std::vector<double> xs = d.scaler.apply(smp.s);
    MlpCache cache;
    mlp_forward(d.reward_net, xs, &cache);
    mlp_backward(d.reward_net, cache, {c}, grad_r);
    const Observation& succ = smp.s_next.has_exited() != 0.0 ? smp.s : smp.s_next;
    const std::vector<double> xn = d.scaler.apply(succ);
    mlp_forward(d.shaping_net, xn, &cache);
    mlp_backward(d.shaping_net, cache, {c * d.gamma}, grad_h);
    mlp_forward(d.shaping_net, xs, &cache);
    mlp_backward(d.shaping_net, cache, {-c}, grad_h);
}

}  // namespace detail

// Binary cross entropy with expert as the D -> 1 class:
//   loss = mean_gen[-log(1 - D)] + mean_exp[-log D]
// evaluated through softplus of the logit x = f - log pi. Gradients are with
// respect to both nets' parameters; pass nullptr to skip them.
inline DiscEval discriminator_loss_and_grad(const DiscriminatorParams& d, const AirlBatch& batch,
                                            std::vector<double>* grad_r,
                                            std::vector<double>* grad_h) {
    require(!batch.generated.empty() && !batch.expert.empty(), ErrorKind::EmptyClass,
            "discriminator loss needs both generated and expert samples");
    DiscEval ev;
    int correct = 0;
    const double inv_g = 1.0 / static_cast<double>(batch.generated.size());
    const double inv_e = 1.0 / static_cast<double>(batch.expert.size());
    for (const AirlSample& smp : batch.generated) {
        const double x = f_value(d, smp.s, smp.action, smp.s_next) - smp.logp;
        ev.loss += softplus(x) * inv_g;
        if (x < 0.0) ++correct;
        if (grad_r) detail::accumulate_f_grad(d, smp, sigmoid(x) * inv_g, *grad_r, *grad_h);
    }
    for (const AirlSample& smp : batch.expert) {
        const double x = f_value(d, smp.s, smp.action, smp.s_next) - smp.logp;
        ev.loss += softplus(-x) * inv_e;
        if (x > 0.0) ++correct;
        if (grad_r) detail::accumulate_f_grad(d, smp, (sigmoid(x) - 1.0) * inv_e, *grad_r, *grad_h);
    }
    ev.accuracy = static_cast<double>(correct) /
                  static_cast<double>(batch.generated.size() + batch.expert.size());
    require(std::isfinite(ev.loss), ErrorKind::NonFiniteValue, "discriminator loss is not finite");
    return ev;
}

// Epochs of shuffled minibatch gradient descent. Each minibatch mixes half
// generated, half expert samples; the smaller class cycles if sizes differ.
inline void train_discriminator(DiscriminatorParams& d, const AirlBatch& batch, int epochs,
                                int batch_size, double lr, Rng& rng) {
    require(!batch.generated.empty() && !batch.expert.empty(), ErrorKind::EmptyClass,
            "train_discriminator needs both classes");
    const std::size_t half = static_cast<std::size_t>(std::max(1, batch_size / 2));
    std::vector<std::size_t> gi(batch.generated.size());
    std::vector<std::size_t> ei(batch.expert.size());
    std::iota(gi.begin(), gi.end(), 0);
    std::iota(ei.begin(), ei.end(), 0);
    std::vector<double> grad_r(d.reward_net.w.size(), 0.0);
    std::vector<double> grad_h(d.shaping_net.w.size(), 0.0);
    const std::size_t chunks =
        (std::max(gi.size(), ei.size()) + half - 1) / half;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(gi);
        rng.shuffle(ei);
        for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
            AirlBatch mini;
            for (std::size_t k = 0; k < half; ++k) {
                mini.generated.push_back(batch.generated[gi[(chunk * half + k) % gi.size()]]);
                mini.expert.push_back(batch.expert[ei[(chunk * half + k) % ei.size()]]);
            }
            std::fill(grad_r.begin(), grad_r.end(), 0.0);
            std::fill(grad_h.begin(), grad_h.end(), 0.0);
            discriminator_loss_and_grad(d, mini, &grad_r, &grad_h);
            sgd_step(d.reward_net.w, grad_r, lr);
            sgd_step(d.shaping_net.w, grad_h, lr);
        }
    }
}

// ---------------------------------------------------------------------------
// Full adversarial training loop.

struct PsairlConfig {
    int iterations = 200;
    int update_period = 50;  // environment steps collected per iteration
    int disc_epochs = 5;
    int gen_epochs = 10;
    int batch_size = 64;
    double disc_lr = 1e-3;
    int horizon = 0;  // episode length of the training scenario; 0 -> update_period
    GaeConfig gae;
    TrpoConfig trpo;
    std::uint64_t seed = 0;
};

struct TrainLogRow {
    int iter = 0;
    double disc_loss = 0.0;
    double disc_acc = 0.0;
    double mean_airl_reward = 0.0;
    double mean_true_reward = 0.0;
    double kl_step = 0.0;
    double policy_entropy = 0.0;
};

inline void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
    std::string out = "iter,disc_loss,disc_acc,mean_airl_reward,mean_true_reward,kl_step,policy_entropy\n";
    for (const TrainLogRow& r : log) {
        out += std::to_string(r.iter);
        for (double v : {r.disc_loss, r.disc_acc, r.mean_airl_reward, r.mean_true_reward, r.kl_step,
                         r.policy_entropy}) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), ",%.10g", v);
            out += buf;
        }
        out += '\n';
    }
    detail::write_text_file(path, out);
}

struct PsairlResult {
    PolicyParams policy;
    DiscriminatorParams disc;
    std::vector<TrainLogRow> log;
};

// Alternating adversarial training: collect a rollout segment under the
// current policy, fit the discriminator against (re-scored) expert
// transitions, relabel the segment with the surrogate reward, then run the
// generator epochs of trust-region updates. The environment persists across
// iterations and resets at the scenario horizon so late-episode states are
// visited too.
inline PsairlResult train_psairl(Env& env, const TrajectorySet& expert, const PsairlConfig& cfg,
                                 const std::optional<RewardParams>& true_reward = std::nullopt) {
    require(!expert.tracks.empty() && expert.num_records() > 0, ErrorKind::EmptySet,
            "train_psairl: empty expert trajectory set");
    require(cfg.iterations >= 1 && cfg.update_period >= 1, ErrorKind::BadConfig,
            "train_psairl: iterations and update_period must be >= 1");
    const int horizon = cfg.horizon > 0 ? cfg.horizon : cfg.update_period;
    const int num_lanes = env.network().num_lanes();

    Rng master(cfg.seed);
    Rng rng_init = master.fork(1);
    Rng rng_rollout = master.fork(2);
    Rng rng_disc = master.fork(3);
    Rng rng_pick = master.fork(4);
    Rng rng_critic = master.fork(5);

    PsairlResult out;
    out.policy = make_policy(num_lanes, env.dynamics().v_cap, rng_init);
    out.disc = make_discriminator(num_lanes, env.dynamics().v_cap, cfg.gae.gamma, rng_init);

    // Flattened expert transitions; log-probs are recomputed every iteration
    // under the then-current generator.
    std::vector<const StepRecord*> expert_pool;
    for (const VehicleTrack& tr : expert.tracks)
        for (const StepRecord& r : tr.records) expert_pool.push_back(&r);

    std::map<int, Observation> obs = env.reset(cfg.seed);
    int ep_t = 0;
    int episode = 0;
    int global_t = 0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        // --- rollout segment ---
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
                row.vehicle = id + episode * 1000000;  // distinct per episode for GAE chains
                row.t = global_t;
                row.obs = o;
                row.next_obs = res.obs.at(id);
                row.action = res.realized.at(id);
                row.logp_old = log_prob(evals.at(id).dist, row.action);
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
                "train_psairl: rollout produced no transitions; check flow entry times");

        // --- discriminator batch ---
        AirlBatch batch;
        batch.generated.reserve(buf.rows.size());
        for (const RolloutRow& r : buf.rows)
            batch.generated.push_back(AirlSample{r.obs, r.next_obs, r.action, r.logp_old});
        const std::size_t want = buf.rows.size();
        std::vector<std::size_t> pick(expert_pool.size());
        std::iota(pick.begin(), pick.end(), 0);
        if (want <= expert_pool.size()) {
            for (std::size_t k = 0; k < want; ++k)
                std::swap(pick[k], pick[k + rng_pick.index(pick.size() - k)]);
            pick.resize(want);
        } else {
            pick.clear();
            for (std::size_t k = 0; k < want; ++k) pick.push_back(rng_pick.index(expert_pool.size()));
        }
        for (std::size_t idx : pick) {
            const StepRecord* rec = expert_pool[idx];
            AirlSample smp{rec->obs, rec->next_obs, rec->action, 0.0};
            smp.logp = log_prob(actor_dist(out.policy, rec->obs), rec->action);
            batch.expert.push_back(std::move(smp));
        }

        train_discriminator(out.disc, batch, cfg.disc_epochs, cfg.batch_size, cfg.disc_lr,
                            rng_disc);
        const DiscEval disc_eval = discriminator_loss_and_grad(out.disc, batch, nullptr, nullptr);

        // --- relabel with the surrogate reward ---
        double mean_airl = 0.0;
        for (RolloutRow& r : buf.rows) {
            r.reward = airl_reward(f_value(out.disc, r.obs, r.action, r.next_obs), r.logp_old);
            mean_airl += r.reward;
        }
        mean_airl /= static_cast<double>(buf.rows.size());

        // --- generator epochs ---
        const PolicyParams policy_before = out.policy;
        for (int e = 0; e < cfg.gen_epochs; ++e) {
            for (RolloutRow& r : buf.rows)
                r.logp_old = log_prob(actor_dist(out.policy, r.obs), r.action);
            compute_advantages(buf, out.policy, cfg.gae);
            trpo_update(out.policy, buf, cfg.trpo, rng_critic);
        }

        // --- log ---
        TrainLogRow row;
        row.iter = iter;
        row.disc_loss = disc_eval.loss;
        row.disc_acc = disc_eval.accuracy;
        row.mean_airl_reward = mean_airl;
        double ent = 0.0;
        std::vector<Observation> seg_obs = buf.observations();
        for (const Observation& o : seg_obs) ent += entropy(actor_dist(out.policy, o));
        row.policy_entropy = ent / static_cast<double>(seg_obs.size());
        row.kl_step = kl_policy(policy_before, out.policy, seg_obs);
        if (true_reward) {
            double tr = 0.0;
            for (const RolloutRow& r : buf.rows)
                tr += handcrafted_reward(r.obs, env.dynamics(), *true_reward);
            row.mean_true_reward = tr / static_cast<double>(buf.rows.size());
        }
        out.log.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json discriminator_to_json(const DiscriminatorParams& d) {
    return nlohmann::json{{"kind", "discriminator"},
                          {"gamma", d.gamma},
                          {"scaler", d.scaler.scale},
                          {"reward_net", mlp_to_json(d.reward_net)},
                          {"shaping_net", mlp_to_json(d.shaping_net)}};
}

inline DiscriminatorParams discriminator_from_json(const nlohmann::json& j) {
    require(j.value("kind", "") == std::string("discriminator"), ErrorKind::MalformedInput,
            "checkpoint: expected kind \"discriminator\"");
    DiscriminatorParams d;
    d.gamma = j.at("gamma").get<double>();
    d.scaler.scale = j.at("scaler").get<std::vector<double>>();
    d.reward_net = mlp_from_json(j.at("reward_net"));
    d.shaping_net = mlp_from_json(j.at("shaping_net"));
    d.validate();
    return d;
}

inline void save_discriminator(const DiscriminatorParams& d, const std::string& path) {
    detail::write_text_file(path, discriminator_to_json(d).dump(2) + "\n");
}

inline DiscriminatorParams load_discriminator(const std::string& path) {
    return discriminator_from_json(detail::load_json_file(path));
}

}  // namespace tsim
