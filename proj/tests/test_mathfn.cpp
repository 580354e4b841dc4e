#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "tsim/mathfn.hpp"

using namespace tsim;

TEST_CASE("sigmoid is stable, symmetric and saturates", "[mathfn]") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(1000.0) == Catch::Approx(1.0).margin(1e-15));
    CHECK(sigmoid(-1000.0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(std::isfinite(sigmoid(709.0)));
    CHECK(std::isfinite(sigmoid(-709.0)));
    for (double x = -30.0; x <= 30.0; x += 0.37)
        CHECK(sigmoid(x) + sigmoid(-x) == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("softplus matches log1p(exp(x)) and its asymptotes", "[mathfn]") {
    CHECK(softplus(0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
    for (double x = -30.0; x <= 30.0; x += 0.41)
        CHECK(softplus(x) == Catch::Approx(std::log1p(std::exp(x))).epsilon(1e-12));
    CHECK(softplus(100.0) == Catch::Approx(100.0).epsilon(1e-14));
    CHECK(softplus(-100.0) == Catch::Approx(std::exp(-100.0)).epsilon(1e-10));
    CHECK(std::isfinite(softplus(1e6)));
    CHECK(softplus(-1e6) >= 0.0);
}

TEST_CASE("digamma hits known points", "[mathfn]") {
    const double euler = 0.5772156649015329;
    CHECK(digamma(1.0) == Catch::Approx(-euler).margin(1e-12));
    CHECK(digamma(0.5) == Catch::Approx(-euler - 2.0 * std::log(2.0)).margin(1e-12));
    CHECK(digamma(2.0) == Catch::Approx(1.0 - euler).margin(1e-12));
    // psi(10) = H_9 - euler
    double h9 = 0.0;
    for (int k = 1; k <= 9; ++k) h9 += 1.0 / k;
    CHECK(digamma(10.0) == Catch::Approx(h9 - euler).margin(1e-12));
}

TEST_CASE("digamma satisfies the recurrence psi(x+1) = psi(x) + 1/x", "[mathfn]") {
    for (double x : {0.3, 0.7, 1.5, 3.2, 7.9, 25.0})
        CHECK(digamma(x + 1.0) - digamma(x) == Catch::Approx(1.0 / x).epsilon(1e-10));
}

TEST_CASE("trigamma hits known points and matches digamma derivative", "[mathfn]") {
    const double pi = 3.141592653589793;
    CHECK(trigamma(1.0) == Catch::Approx(pi * pi / 6.0).margin(1e-11));
    CHECK(trigamma(0.5) == Catch::Approx(pi * pi / 2.0).margin(1e-11));
    for (double x : {0.4, 1.1, 2.7, 6.3, 14.0})
        CHECK(trigamma(x + 1.0) - trigamma(x) == Catch::Approx(-1.0 / (x * x)).epsilon(1e-9));
    const double h = 1e-5;
    for (double x : {0.8, 1.9, 4.2, 11.0}) {
        const double fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
        CHECK(trigamma(x) == Catch::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("log of the Beta function matches closed forms", "[mathfn]") {
    CHECK(log_beta_fn(1.0, 1.0) == Catch::Approx(0.0).margin(1e-14));
    // B(2,3) = 1!2!/4! = 1/12
    CHECK(log_beta_fn(2.0, 3.0) == Catch::Approx(std::log(1.0 / 12.0)).epsilon(1e-13));
    CHECK(log_beta_fn(2.0, 3.0) == Catch::Approx(log_beta_fn(3.0, 2.0)).epsilon(1e-14));
    // B(0.5,0.5) = pi
    CHECK(log_beta_fn(0.5, 0.5) == Catch::Approx(std::log(3.141592653589793)).epsilon(1e-13));
}
