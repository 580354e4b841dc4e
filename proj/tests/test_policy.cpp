#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <functional>
#include <vector>

#include "tsim/policy.hpp"

using namespace tsim;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected a tsim::Error");
    return ErrorKind::BadConfig;
}

Observation make_obs(double limit, double velocity, double gap) {
    Observation o(1);
    o.set_lane(0);
    o.set_lane_length(150.0);
    o.set_speed_limit(limit);
    o.set_signal_green(1.0);
    o.set_velocity(velocity);
    o.set_position(40.0);
    o.set_dist_to_light(110.0);
    o.set_leader_velocity(5.0);
    o.set_leader_position(40.0 + gap + 5.0);
    o.set_gap(gap);
    o.set_is_leading(0.0);
    return o;
}

// Simpson integration on [a, b]
double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace

TEST_CASE("policy construction and shape guarantees", "[policy]") {
    Rng rng(1);
    const PolicyParams p = make_policy(1, 11.0, rng);
    CHECK(p.actor.sizes == std::vector<int>{12, 32, 32, 2});
    CHECK(p.critic.sizes == std::vector<int>{12, 32, 32, 1});
    CHECK(p.scaler.scale.size() == 12);
    // softplus + 1 keeps both shapes at or above one everywhere
    Rng orng(7);
    for (int i = 0; i < 50; ++i) {
        const Observation o =
            make_obs(orng.uniform(3.0, 14.0), orng.uniform(0.0, 11.0), orng.uniform(0.0, 100.0));
        const BetaDist d = actor_dist(p, o);
        CHECK(d.alpha >= 1.0);
        CHECK(d.beta >= 1.0);
        CHECK(std::isfinite(d.alpha));
        CHECK(std::isfinite(d.beta));
    }
}

TEST_CASE("action ceiling is the lane limit capped by v_cap", "[policy]") {
    Rng rng(1);
    const PolicyParams p = make_policy(1, 11.0, rng);
    CHECK(actor_dist(p, make_obs(8.0, 3.0, 30.0)).hi == 8.0);
    CHECK(actor_dist(p, make_obs(14.0, 3.0, 30.0)).hi == 11.0);
}

TEST_CASE("scaled beta density integrates to one", "[policy]") {
    const BetaDist d{2.3, 1.7, 9.0};
    const double mass = simpson([&](double a) { return std::exp(log_prob(d, a)); }, 0.0, 9.0, 4000);
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("log density matches closed forms", "[policy]") {
    // uniform on [0, 2]
    const BetaDist u{1.0, 1.0, 2.0};
    CHECK(log_prob(u, 1.0) == Catch::Approx(-std::log(2.0)).epsilon(1e-14));
    // Beta(2,2) density 6x(1-x), hi = 1: at x = 0.25, log(1.125)
    const BetaDist b22{2.0, 2.0, 1.0};
    CHECK(log_prob(b22, 0.25) == Catch::Approx(0.11778303565638346).epsilon(1e-12));
    // boundary actions stay finite through the endpoint nudge
    CHECK(std::isfinite(log_prob(b22, 0.0)));
    CHECK(std::isfinite(log_prob(b22, 1.0)));
    // outside the support is an error
    CHECK(kind_of([&] { log_prob(b22, -0.01); }) == ErrorKind::OutOfSupport);
    CHECK(kind_of([&] { log_prob(b22, 1.01); }) == ErrorKind::OutOfSupport);
}

TEST_CASE("samples live in the support with the right mean", "[policy]") {
    const BetaDist d{2.0, 5.0, 10.0};
    Rng rng(123);
    double acc = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double a = sample_action(d, rng);
        REQUIRE(a >= 0.0);
        REQUIRE(a <= 10.0);
        acc += a;
    }
    CHECK(d.mean() == Catch::Approx(10.0 * 2.0 / 7.0).epsilon(1e-14));
    CHECK(acc / n == Catch::Approx(d.mean()).margin(0.05));
}

TEST_CASE("shape gradients of the log density match finite differences", "[policy]") {
    const double h = 1e-6;
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        BetaDist d{rng.uniform(1.1, 4.0), rng.uniform(1.1, 4.0), rng.uniform(2.0, 11.0)};
        const double a = rng.uniform(0.05, 0.95) * d.hi;
        double dla = 0.0, dlb = 0.0;
        log_prob_grad_shapes(d, a, dla, dlb);
        BetaDist dp = d, dm = d;
        dp.alpha += h;
        dm.alpha -= h;
        CHECK(dla == Catch::Approx((log_prob(dp, a) - log_prob(dm, a)) / (2 * h)).margin(1e-5));
        dp = d;
        dm = d;
        dp.beta += h;
        dm.beta -= h;
        CHECK(dlb == Catch::Approx((log_prob(dp, a) - log_prob(dm, a)) / (2 * h)).margin(1e-5));
    }
}

TEST_CASE("entropy matches quadrature and the uniform closed form", "[policy]") {
    // uniform on [0, hi]: entropy is log hi
    CHECK(entropy(BetaDist{1.0, 1.0, 7.0}) == Catch::Approx(std::log(7.0)).epsilon(1e-14));
    const BetaDist d{2.5, 1.5, 7.0};
    const double quad = simpson(
        [&](double a) {
            const double lp = log_prob(d, a);
            const double p = std::exp(lp);
            return p > 0.0 ? -p * lp : 0.0;
        },
        0.0, 7.0, 4000);
    CHECK(entropy(d) == Catch::Approx(quad).epsilon(1e-5));
}

TEST_CASE("beta KL closed form matches pinned values and quadrature", "[policy]") {
    const BetaDist u{1.0, 1.0, 1.0};
    const BetaDist b{2.0, 2.0, 1.0};
    // logB(2,2) + 2 = 2 - log 6
    CHECK(beta_kl(u, b) == Catch::Approx(0.20824053077194504).epsilon(1e-12));
    CHECK(beta_kl(b, u) == Catch::Approx(0.12509280256138877).epsilon(1e-12));
    CHECK(beta_kl(b, b) == Catch::Approx(0.0).margin(1e-15));
    // KL is nonnegative on random shape pairs
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        const BetaDist p{rng.uniform(1.0, 5.0), rng.uniform(1.0, 5.0), 3.0};
        const BetaDist q{rng.uniform(1.0, 5.0), rng.uniform(1.0, 5.0), 3.0};
        CHECK(beta_kl(p, q) >= -1e-12);
    }
    // quadrature cross-check of one asymmetric pair
    const BetaDist p{3.0, 1.5, 5.0};
    const BetaDist q{1.8, 2.6, 5.0};
    const double quad = simpson(
        [&](double a) {
            const double lp = log_prob(p, a);
            return std::exp(lp) * (lp - log_prob(q, a));
        },
        0.0, 5.0, 8000);
    CHECK(beta_kl(p, q) == Catch::Approx(quad).epsilon(1e-4));
}

TEST_CASE("actor backprop matches finite differences of the log density", "[policy]") {
    Rng rng(2);
    PolicyParams p = make_policy(1, 11.0, rng);
    const Observation o = make_obs(10.0, 6.0, 25.0);
    const double a = 4.2;
    ActorEval ev = eval_actor(p, o);
    double dla = 0.0, dlb = 0.0;
    log_prob_grad_shapes(ev.dist, a, dla, dlb);
    std::vector<double> grad(p.actor.w.size(), 0.0);
    backprop_actor(p, ev, dla, dlb, grad);
    const double h = 1e-6;
    Rng pick(77);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k =
            static_cast<std::size_t>(pick.uniform01() * static_cast<double>(p.actor.w.size()));
        PolicyParams pp = p, pm = p;
        pp.actor.w[k] += h;
        pm.actor.w[k] -= h;
        const double fp = log_prob(actor_dist(pp, o), a);
        const double fm = log_prob(actor_dist(pm, o), a);
        CHECK(grad[k] == Catch::Approx((fp - fm) / (2 * h)).margin(2e-5));
    }
}

TEST_CASE("policy KL gradient matches finite differences", "[policy]") {
    Rng rng(3);
    const PolicyParams p_old = make_policy(1, 11.0, rng);
    PolicyParams p_new = make_policy(1, 11.0, rng);
    const std::vector<Observation> batch = {make_obs(10.0, 2.0, 10.0), make_obs(8.0, 7.0, 40.0),
                                            make_obs(11.0, 5.0, 25.0)};
    std::vector<double> grad(p_new.actor.w.size(), 0.0);
    kl_policy_grad(p_old, p_new, batch, grad);
    const double h = 1e-6;
    Rng pick(78);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t k =
            static_cast<std::size_t>(pick.uniform01() * static_cast<double>(p_new.actor.w.size()));
        PolicyParams pp = p_new, pm = p_new;
        pp.actor.w[k] += h;
        pm.actor.w[k] -= h;
        const double fd = (kl_policy(p_old, pp, batch) - kl_policy(p_old, pm, batch)) / (2 * h);
        CHECK(grad[k] == Catch::Approx(fd).margin(2e-5));
    }
    CHECK(kind_of([&] { kl_policy(p_old, p_new, {}); }) == ErrorKind::EmptyBuffer);
}

TEST_CASE("critic evaluates deterministically", "[policy]") {
    Rng rng(4);
    const PolicyParams p = make_policy(1, 11.0, rng);
    const Observation o = make_obs(10.0, 6.0, 25.0);
    const double v1 = critic_value(p, o);
    const double v2 = critic_value(p, o);
    CHECK(v1 == v2);
    CHECK(std::isfinite(v1));
}

TEST_CASE("policy checkpoint round trip is exact", "[policy]") {
    Rng rng(5);
    const PolicyParams p = make_policy(2, 9.5, rng);
    const std::string path = "policy_roundtrip.json";
    save_policy(p, path);
    const PolicyParams q = load_policy(path);
    CHECK(q.actor.w == p.actor.w);
    CHECK(q.critic.w == p.critic.w);
    CHECK(q.actor.sizes == p.actor.sizes);
    CHECK(q.scaler.scale == p.scaler.scale);
    CHECK(q.v_cap == p.v_cap);
    std::filesystem::remove(path);
    // wrong artifact kind is rejected
    nlohmann::json j = policy_to_json(p);
    j["kind"] = "discriminator";
    CHECK(kind_of([&] { policy_from_json(j); }) == ErrorKind::MalformedInput);
}
