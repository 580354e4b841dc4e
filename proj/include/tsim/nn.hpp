#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

// Fully connected ReLU network with exact hand-written gradients. Parameters
// live in one flat vector (layer by layer: row-major weights, then biases) so
// optimizers and trust-region code can treat a model as a single point in R^P.
struct MlpParams {
    std::vector<int> sizes;  // e.g. {15, 32, 32, 1}
    std::vector<double> w;

    int param_count() const {
        int n = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
            n += sizes[l + 1] * (sizes[l] + 1);
        return n;
    }

    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }

    // Flat offset of layer l's weight block; biases follow the weights.
    int weight_offset(std::size_t l) const {
        int off = 0;
        for (std::size_t k = 0; k < l; ++k) off += sizes[k + 1] * (sizes[k] + 1);
        return off;
    }
    int bias_offset(std::size_t l) const { return weight_offset(l) + sizes[l + 1] * sizes[l]; }

    void validate() const {
        require(sizes.size() >= 2, ErrorKind::BadConfig, "mlp: need at least input and output sizes");
        for (int s : sizes)
            require(s >= 1, ErrorKind::BadConfig, "mlp: layer sizes must be >= 1");
        require(static_cast<int>(w.size()) == param_count(), ErrorKind::DimensionMismatch,
                "mlp: expected " + std::to_string(param_count()) + " parameters, got " +
                    std::to_string(w.size()));
    }
};

// Weights uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline MlpParams mlp_init(const std::vector<int>& sizes, Rng& rng) {
    MlpParams p;
    p.sizes = sizes;
    p.w.assign(static_cast<std::size_t>(p.param_count()), 0.0);
    p.validate();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const double s = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
        const int off = p.weight_offset(l);
        const int n = sizes[l + 1] * sizes[l];
        for (int i = 0; i < n; ++i) p.w[static_cast<std::size_t>(off + i)] = rng.uniform(-s, s);
    }
    return p;
}

// Pre-activations per hidden/output layer plus the input; everything backward
// or forward-mode passes need.
struct MlpCache {
    std::vector<double> input;
    std::vector<std::vector<double>> z;  // pre-activation per layer
    std::vector<std::vector<double>> a;  // post-activation per hidden layer
};

inline std::vector<double> mlp_forward(const MlpParams& p, const std::vector<double>& x,
                                       MlpCache* cache = nullptr) {
    require(static_cast<int>(x.size()) == p.input_dim(), ErrorKind::DimensionMismatch,
            "mlp forward: expected input dim " + std::to_string(p.input_dim()) + ", got " +
                std::to_string(x.size()));
    if (cache) {
        cache->input = x;
        cache->z.clear();
        cache->a.clear();
    }
    std::vector<double> cur = x;
    const std::size_t layers = p.sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const int n_in = p.sizes[l];
        const int n_out = p.sizes[l + 1];
        const int woff = p.weight_offset(l);
        const int boff = p.bias_offset(l);
        std::vector<double> z(static_cast<std::size_t>(n_out));
        for (int i = 0; i < n_out; ++i) {
            double acc = p.w[static_cast<std::size_t>(boff + i)];
            const int row = woff + i * n_in;
            for (int j = 0; j < n_in; ++j)
                acc += p.w[static_cast<std::size_t>(row + j)] * cur[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(i)] = acc;
        }
        if (cache) cache->z.push_back(z);
        if (l + 1 < layers) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;  // relu, subgradient 0 at the kink
            if (cache) cache->a.push_back(z);
        }
        cur = std::move(z);
    }
    return cur;
}

// Accumulates d(loss)/d(params) into `grad` (same layout as p.w) given
// d(loss)/d(output). Returns nothing else; input gradients are not needed in
// this codebase.
inline void mlp_backward(const MlpParams& p, const MlpCache& cache, const std::vector<double>& dy,
                         std::vector<double>& grad) {
    require(grad.size() == p.w.size(), ErrorKind::DimensionMismatch,
            "mlp backward: gradient buffer size mismatch");
    require(static_cast<int>(dy.size()) == p.output_dim(), ErrorKind::DimensionMismatch,
            "mlp backward: output gradient dim mismatch");
    const std::size_t layers = p.sizes.size() - 1;
    std::vector<double> delta = dy;
    for (std::size_t li = layers; li-- > 0;) {
        const int n_in = p.sizes[li];
        const int n_out = p.sizes[li + 1];
        const int woff = p.weight_offset(li);
        const int boff = p.bias_offset(li);
        const std::vector<double>& in = (li == 0) ? cache.input : cache.a[li - 1];
        for (int i = 0; i < n_out; ++i) {
            const double d = delta[static_cast<std::size_t>(i)];
            grad[static_cast<std::size_t>(boff + i)] += d;
            const int row = woff + i * n_in;
            for (int j = 0; j < n_in; ++j)
                grad[static_cast<std::size_t>(row + j)] += d * in[static_cast<std::size_t>(j)];
        }
        if (li == 0) break;
        std::vector<double> prev(static_cast<std::size_t>(n_in), 0.0);
        for (int j = 0; j < n_in; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n_out; ++i)
                acc += p.w[static_cast<std::size_t>(woff + i * n_in + j)] *
                       delta[static_cast<std::size_t>(i)];
            // relu mask of the layer below
            prev[static_cast<std::size_t>(j)] =
                cache.z[li - 1][static_cast<std::size_t>(j)] > 0.0 ? acc : 0.0;
        }
        delta = std::move(prev);
    }
}

// Forward-mode directional derivative: d(output)/d(params) applied to
// direction v, evaluated alongside a fresh forward pass of x.
inline std::vector<double> mlp_jvp(const MlpParams& p, const std::vector<double>& x,
                                   const std::vector<double>& v) {
    require(v.size() == p.w.size(), ErrorKind::DimensionMismatch,
            "mlp jvp: direction size mismatch");
    const std::size_t layers = p.sizes.size() - 1;
    std::vector<double> cur = x;
    std::vector<double> dcur(x.size(), 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
        const int n_in = p.sizes[l];
        const int n_out = p.sizes[l + 1];
        const int woff = p.weight_offset(l);
        const int boff = p.bias_offset(l);
        std::vector<double> z(static_cast<std::size_t>(n_out));
        std::vector<double> dz(static_cast<std::size_t>(n_out));
        for (int i = 0; i < n_out; ++i) {
            double acc = p.w[static_cast<std::size_t>(boff + i)];
            double dacc = v[static_cast<std::size_t>(boff + i)];
            const int row = woff + i * n_in;
            for (int j = 0; j < n_in; ++j) {
                acc += p.w[static_cast<std::size_t>(row + j)] * cur[static_cast<std::size_t>(j)];
                dacc += v[static_cast<std::size_t>(row + j)] * cur[static_cast<std::size_t>(j)] +
                        p.w[static_cast<std::size_t>(row + j)] * dcur[static_cast<std::size_t>(j)];
            }
            z[static_cast<std::size_t>(i)] = acc;
            dz[static_cast<std::size_t>(i)] = dacc;
        }
        if (l + 1 < layers) {
            for (int i = 0; i < n_out; ++i) {
                if (z[static_cast<std::size_t>(i)] <= 0.0) {
                    z[static_cast<std::size_t>(i)] = 0.0;
                    dz[static_cast<std::size_t>(i)] = 0.0;
                }
            }
        }
        cur = std::move(z);
        dcur = std::move(dz);
    }
    return dcur;
}

inline void sgd_step(std::vector<double>& w, const std::vector<double>& grad, double lr) {
    require(w.size() == grad.size(), ErrorKind::DimensionMismatch, "sgd: size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
}

inline nlohmann::json mlp_to_json(const MlpParams& p) {
    return nlohmann::json{{"sizes", p.sizes}, {"params", p.w}};
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
    require(j.contains("sizes") && j.contains("params"), ErrorKind::MalformedInput,
            "mlp checkpoint: sizes and params are required");
    MlpParams p;
    p.sizes = j["sizes"].get<std::vector<int>>();
    p.w = j["params"].get<std::vector<double>>();
    p.validate();
    require(all_finite(p.w), ErrorKind::NonFiniteValue, "mlp checkpoint: non-finite parameter");
    return p;
}

}  // namespace tsim
