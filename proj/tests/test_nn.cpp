#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "tsim/nn.hpp"

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

// 2-2-1 net with fixed weights for hand-checked values
MlpParams tiny_net() {
    MlpParams p;
    p.sizes = {2, 2, 1};
    p.w = {1.0, -1.0, 0.5, 2.0,  // layer 0 weights, row-major
           0.25, -0.5,           // layer 0 biases
           1.0, -2.0,            // layer 1 weights
           0.1};                 // layer 1 bias
    p.validate();
    return p;
}

}  // namespace

TEST_CASE("parameter layout and counts", "[nn]") {
    MlpParams p;
    p.sizes = {15, 32, 32, 1};
    CHECK(p.param_count() == 1601);
    CHECK(p.input_dim() == 15);
    CHECK(p.output_dim() == 1);
    CHECK(p.weight_offset(0) == 0);
    CHECK(p.bias_offset(0) == 480);
    CHECK(p.weight_offset(1) == 512);
    CHECK(p.bias_offset(1) == 1536);
    CHECK(p.weight_offset(2) == 1568);
    CHECK(p.bias_offset(2) == 1600);
    CHECK(tiny_net().param_count() == 9);
}

TEST_CASE("mlp validation rejects malformed shapes", "[nn]") {
    MlpParams p;
    p.sizes = {3};
    CHECK(kind_of([&] { p.validate(); }) == ErrorKind::BadConfig);
    p.sizes = {2, 0, 1};
    CHECK(kind_of([&] { p.validate(); }) == ErrorKind::BadConfig);
    p.sizes = {2, 2, 1};
    p.w.assign(5, 0.0);
    CHECK(kind_of([&] { p.validate(); }) == ErrorKind::DimensionMismatch);
    MlpParams ok = tiny_net();
    CHECK(kind_of([&] { mlp_forward(ok, {1.0, 2.0, 3.0}); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("forward pass matches a hand computation", "[nn]") {
    const MlpParams p = tiny_net();
    // z1 = (1*1 - 1*2 + 0.25, 0.5*1 + 2*2 - 0.5) = (-0.75, 4)
    // relu -> (0, 4); y = 1*0 - 2*4 + 0.1 = -7.9
    const std::vector<double> y = mlp_forward(p, {1.0, 2.0});
    REQUIRE(y.size() == 1);
    CHECK(y[0] == Catch::Approx(-7.9).epsilon(1e-14));
    MlpCache cache;
    mlp_forward(p, {1.0, 2.0}, &cache);
    REQUIRE(cache.z.size() == 2);
    CHECK(cache.z[0][0] == Catch::Approx(-0.75));
    CHECK(cache.z[0][1] == Catch::Approx(4.0));
    CHECK(cache.a[0][0] == 0.0);
    CHECK(cache.a[0][1] == Catch::Approx(4.0));
}

TEST_CASE("backward pass matches hand-derived gradients", "[nn]") {
    const MlpParams p = tiny_net();
    MlpCache cache;
    mlp_forward(p, {1.0, 2.0}, &cache);
    std::vector<double> grad(p.w.size(), 0.0);
    mlp_backward(p, cache, {1.0}, grad);
    // first hidden unit is inactive (z = -0.75), second active with delta -2
    const std::vector<double> expect = {0.0, 0.0, -2.0, -4.0, 0.0, -2.0, 0.0, 4.0, 1.0};
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(grad[i] == Catch::Approx(expect[i]).margin(1e-14));
}

TEST_CASE("backward accumulates into the gradient buffer", "[nn]") {
    const MlpParams p = tiny_net();
    MlpCache cache;
    mlp_forward(p, {1.0, 2.0}, &cache);
    std::vector<double> once(p.w.size(), 0.0), twice(p.w.size(), 0.0);
    mlp_backward(p, cache, {1.0}, once);
    mlp_backward(p, cache, {1.0}, twice);
    mlp_backward(p, cache, {1.0}, twice);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(twice[i] == Catch::Approx(2.0 * once[i]).margin(1e-14));
}

TEST_CASE("gradients agree with central finite differences", "[nn]") {
    Rng rng(5);
    MlpParams p = mlp_init({3, 4, 2}, rng);
    const std::vector<double> x = {0.3, -0.7, 1.2};
    const std::vector<double> c = {0.8, -1.3};  // loss = c . y
    MlpCache cache;
    mlp_forward(p, x, &cache);
    std::vector<double> grad(p.w.size(), 0.0);
    mlp_backward(p, cache, c, grad);
    const double h = 1e-6;
    for (std::size_t k = 0; k < p.w.size(); ++k) {
        MlpParams pp = p;
        pp.w[k] += h;
        const std::vector<double> yp = mlp_forward(pp, x);
        pp.w[k] -= 2.0 * h;
        const std::vector<double> ym = mlp_forward(pp, x);
        const double fd = (c[0] * (yp[0] - ym[0]) + c[1] * (yp[1] - ym[1])) / (2.0 * h);
        CHECK(grad[k] == Catch::Approx(fd).margin(1e-6));
    }
}

TEST_CASE("forward-mode directional derivative is exact", "[nn]") {
    Rng rng(9);
    MlpParams p = mlp_init({4, 5, 1}, rng);
    const std::vector<double> x = {0.1, -0.2, 0.5, 0.9};
    // for scalar outputs, jvp in direction v must equal grad . v
    MlpCache cache;
    mlp_forward(p, x, &cache);
    std::vector<double> grad(p.w.size(), 0.0);
    mlp_backward(p, cache, {1.0}, grad);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> v(p.w.size());
        for (double& e : v) e = rng.normal();
        const std::vector<double> jv = mlp_jvp(p, x, v);
        REQUIRE(jv.size() == 1);
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += grad[i] * v[i];
        CHECK(jv[0] == Catch::Approx(dot).epsilon(1e-12).margin(1e-12));
    }
    // and with finite differences along a fixed direction
    std::vector<double> v(p.w.size());
    for (double& e : v) e = rng.normal();
    const std::vector<double> jv = mlp_jvp(p, x, v);
    const double h = 1e-7;
    MlpParams pp = p, pm = p;
    for (std::size_t i = 0; i < v.size(); ++i) {
        pp.w[i] += h * v[i];
        pm.w[i] -= h * v[i];
    }
    const double fd = (mlp_forward(pp, x)[0] - mlp_forward(pm, x)[0]) / (2.0 * h);
    CHECK(jv[0] == Catch::Approx(fd).margin(1e-5));
}

TEST_CASE("relu kink uses subgradient zero", "[nn]") {
    MlpParams p;
    p.sizes = {1, 1, 1};
    p.w = {1.0, -1.0, 3.0, 0.0};  // z = x - 1, y = 3*relu(z)
    p.validate();
    MlpCache cache;
    const std::vector<double> y = mlp_forward(p, {1.0}, &cache);  // z exactly 0
    CHECK(y[0] == 0.0);
    std::vector<double> grad(p.w.size(), 0.0);
    mlp_backward(p, cache, {1.0}, grad);
    CHECK(grad[0] == 0.0);  // no flow through the inactive unit
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == 0.0);  // a = 0, so the outgoing weight has no gradient
    CHECK(grad[3] == 1.0);  // output bias always flows
    std::vector<double> v(p.w.size(), 1.0);
    CHECK(mlp_jvp(p, {1.0}, v)[0] == 1.0);  // only the output bias direction
}

TEST_CASE("initialization is bounded, zero-biased and seed-deterministic", "[nn]") {
    Rng r1(42), r2(42), r3(43);
    const MlpParams a = mlp_init({15, 32, 32, 1}, r1);
    const MlpParams b = mlp_init({15, 32, 32, 1}, r2);
    const MlpParams c = mlp_init({15, 32, 32, 1}, r3);
    CHECK(a.w == b.w);
    CHECK(a.w != c.w);
    REQUIRE(static_cast<int>(a.w.size()) == 1601);
    for (std::size_t l = 0; l < 3; ++l) {
        const double s = 1.0 / std::sqrt(static_cast<double>(a.sizes[l]));
        const int woff = a.weight_offset(l);
        const int boff = a.bias_offset(l);
        const int nw = a.sizes[l + 1] * a.sizes[l];
        for (int i = 0; i < nw; ++i) {
            CHECK(std::abs(a.w[static_cast<std::size_t>(woff + i)]) <= s);
        }
        for (int i = 0; i < a.sizes[l + 1]; ++i)
            CHECK(a.w[static_cast<std::size_t>(boff + i)] == 0.0);
    }
}

TEST_CASE("sgd step applies the exact update", "[nn]") {
    std::vector<double> w = {1.0, -2.0, 0.5};
    const std::vector<double> g = {10.0, -4.0, 0.0};
    sgd_step(w, g, 0.1);
    CHECK(w[0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(w[1] == Catch::Approx(-1.6));
    CHECK(w[2] == 0.5);
    std::vector<double> bad = {1.0};
    CHECK(kind_of([&] { sgd_step(bad, g, 0.1); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("mlp json round trip is exact and validated", "[nn]") {
    Rng rng(3);
    const MlpParams p = mlp_init({5, 8, 2}, rng);
    const nlohmann::json j = mlp_to_json(p);
    const MlpParams q = mlp_from_json(j);
    CHECK(q.sizes == p.sizes);
    CHECK(q.w == p.w);
    nlohmann::json missing = {{"sizes", {2, 1}}};
    CHECK(kind_of([&] { mlp_from_json(missing); }) == ErrorKind::MalformedInput);
    nlohmann::json short_params = {{"sizes", {2, 1}}, {"params", {1.0}}};
    CHECK(kind_of([&] { mlp_from_json(short_params); }) == ErrorKind::DimensionMismatch);
    nlohmann::json inf_params = {{"sizes", {1, 1}},
                                 {"params", {std::numeric_limits<double>::infinity(), 0.0}}};
    CHECK(kind_of([&] { mlp_from_json(inf_params); }) == ErrorKind::NonFiniteValue);
}
