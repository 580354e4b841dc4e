#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsim {

// Error categories reported by library operations. The CLI maps these to
// distinct process exit codes, so keep the ordering stable.
enum class ErrorKind {
    MalformedInput,
    BadConfig,
    UnknownIntersection,
    InconsistentFlow,
    InvariantViolation,
    MissingAction,
    NonFiniteAction,
    UnknownVehicle,
    DimensionMismatch,
    OutOfSupport,
    EmptyClass,
    EmptyBuffer,
    EmptySet,
    HorizonMismatch,
    NonFiniteValue,
    IoFailure,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

// Deterministic random stream. All stochastic code in the library draws
// through this wrapper so that a seed fully pins run output. The mapping from
// raw 64-bit draws to doubles is spelled out here instead of relying on
// std::uniform_real_distribution, whose exact output is implementation
// defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t raw() { return state_(); }

    // Uniform on [0, 1) with 53 significant bits.
    double uniform01() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Integer in [0, n). n must be positive.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform01() * static_cast<double>(n)); }

    // Standard normal via Box-Muller. Two uniforms per call, no cached spare,
    // so the stream position is a simple function of the call count.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Marsaglia-Tsang gamma sampler, valid for shape >= 1 which is all this
    // library ever needs (Beta shapes are softplus(x)+1).
    double gamma(double shape) {
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // A derived stream for a named sub-task; keeps independent consumers from
    // perturbing each other's draw sequences.
    Rng fork(std::uint64_t salt) { return Rng(state_() ^ (salt * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull)); }

  private:
    std::mt19937_64 state_;
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace tsim
