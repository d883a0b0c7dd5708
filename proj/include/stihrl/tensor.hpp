#pragma once

// Small dense numeric kernel: row-major matrices, MLPs with manual
// backpropagation, softmax, Adam and a central-difference gradient checker.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace stihrl {

using Vec = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    static Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
        Matrix m(rows, cols);
        const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (auto& v : m.data_) v = rng.uniform(-a, a);
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

/// y = W x
inline Vec matvec(const Matrix& w, std::span<const double> x) {
    require(x.size() == w.cols(), "matvec: dimension mismatch");
    Vec y(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double* row = w.row(r).data();
        double s = 0.0;
        for (std::size_t c = 0; c < w.cols(); ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

/// y = Wᵀ g
inline Vec matvec_transposed(const Matrix& w, std::span<const double> g) {
    require(g.size() == w.rows(), "matvec_transposed: dimension mismatch");
    Vec y(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = w.row(r).data();
        for (std::size_t c = 0; c < w.cols(); ++c) y[c] += gr * row[c];
    }
    return y;
}

/// G += scale · g xᵀ
inline void add_outer(Matrix& g_acc, std::span<const double> g, std::span<const double> x, double scale = 1.0) {
    require(g.size() == g_acc.rows() && x.size() == g_acc.cols(), "add_outer: dimension mismatch");
    for (std::size_t r = 0; r < g_acc.rows(); ++r) {
        const double gr = scale * g[r];
        if (gr == 0.0) continue;
        double* row = g_acc.row(r).data();
        for (std::size_t c = 0; c < g_acc.cols(); ++c) row[c] += gr * x[c];
    }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    require(x.size() == y.size(), "axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { identity, relu, leaky_relu, tanh };

inline constexpr double kLeakySlope = 0.2;

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "tanh") return Activation::tanh;
    fail(ErrorKind::config, "unknown activation: " + s);
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::leaky_relu: return x > 0.0 ? x : kLeakySlope * x;
        case Activation::tanh: return std::tanh(x);
    }
    return x;
}

/// Derivative evaluated at the pre-activation value.
inline double activate_grad(Activation a, double x) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::leaky_relu: return x > 0.0 ? 1.0 : kLeakySlope;
        case Activation::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

inline Vec activate(Activation a, std::span<const double> x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = activate(a, x[i]);
    return out;
}

/// Max-shifted softmax; invariant to adding a constant to every logit.
inline Vec softmax(std::span<const double> z) {
    require(!z.empty(), "softmax: empty input");
    const double m = *std::max_element(z.begin(), z.end());
    Vec p(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        total += p[i];
    }
    for (auto& v : p) v /= total;
    return p;
}

inline Vec log_softmax(std::span<const double> z) {
    require(!z.empty(), "log_softmax: empty input");
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - m);
    const double lse = m + std::log(total);
    Vec out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

/// Gradient of softmax outputs with respect to logits, applied to an
/// upstream gradient: dz_i = p_i (g_i - Σ_j p_j g_j).
inline Vec softmax_backward(std::span<const double> p, std::span<const double> upstream) {
    require(p.size() == upstream.size(), "softmax_backward: size mismatch");
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * upstream[i];
    Vec dz(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (upstream[i] - inner);
    return dz;
}

// ---------------------------------------------------------------------------
// Named parameter blocks, shared by the optimizer, checkpoints and gradient
// checks.

struct ParamBlock {
    std::string name;
    std::span<double> values;
};

using ParamList = std::vector<ParamBlock>;

inline std::size_t total_size(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& b : params) n += b.values.size();
    return n;
}

inline void zero(ParamList& params) {
    for (auto& b : params) std::fill(b.values.begin(), b.values.end(), 0.0);
}

inline Vec flatten(const ParamList& params) {
    Vec out;
    out.reserve(total_size(params));
    for (const auto& b : params) out.insert(out.end(), b.values.begin(), b.values.end());
    return out;
}

inline void assign(ParamList& params, std::span<const double> flat) {
    require(flat.size() == total_size(params), "assign: size mismatch");
    std::size_t k = 0;
    for (auto& b : params)
        for (auto& v : b.values) v = flat[k++];
}

// ---------------------------------------------------------------------------
// MLP

enum class OutputHead { linear, softmax };

struct MlpParams {
    std::vector<std::size_t> sizes;  // input, hidden..., output
    std::vector<Matrix> weights;     // weights[l] : sizes[l+1] x sizes[l]
    std::vector<Vec> biases;
    Activation hidden = Activation::relu;
    OutputHead head = OutputHead::linear;
    std::uint64_t revision = 0;  // bumped on every in-place update

    static MlpParams init(std::vector<std::size_t> sizes, Activation hidden, OutputHead head, Rng& rng) {
        require(sizes.size() >= 2, "MLP needs at least input and output sizes");
        for (auto s : sizes) require(s > 0, "MLP layer sizes must be positive");
        MlpParams p;
        p.sizes = std::move(sizes);
        p.hidden = hidden;
        p.head = head;
        for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
            p.weights.push_back(Matrix::glorot(p.sizes[l + 1], p.sizes[l], rng));
            p.biases.emplace_back(p.sizes[l + 1], 0.0);
        }
        return p;
    }

    static MlpParams zeros(std::vector<std::size_t> sizes, Activation hidden, OutputHead head) {
        Rng rng(0);
        auto p = init(std::move(sizes), hidden, head, rng);
        for (auto& w : p.weights) w.fill(0.0);
        return p;
    }

    std::size_t input_dim() const { return sizes.front(); }
    std::size_t output_dim() const { return sizes.back(); }
    std::size_t layer_count() const { return weights.size(); }

    ParamList params(const std::string& prefix = "") {
        ParamList out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.push_back({prefix + "W" + std::to_string(l), weights[l].values()});
            out.push_back({prefix + "b" + std::to_string(l), biases[l]});
        }
        return out;
    }

    /// Zero-valued parameters of identical shape (gradient accumulator).
    MlpParams zeros_like() const {
        MlpParams g = *this;
        for (auto& w : g.weights) w.fill(0.0);
        for (auto& b : g.biases) std::fill(b.begin(), b.end(), 0.0);
        return g;
    }
};

struct MlpCache {
    std::vector<Vec> inputs;  // input to each layer
    std::vector<Vec> pre;     // pre-activation of each layer
    Vec output;
    std::uint64_t revision = 0;
    const MlpParams* owner = nullptr;
};

inline std::pair<Vec, MlpCache> mlp_forward(const MlpParams& p, std::span<const double> x) {
    if (x.size() != p.input_dim())
        fail(ErrorKind::invalid_argument, "mlp_forward: input has " + std::to_string(x.size()) +
                                              " values, expected " + std::to_string(p.input_dim()));
    MlpCache cache;
    cache.revision = p.revision;
    cache.owner = &p;
    Vec a(x.begin(), x.end());
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        cache.inputs.push_back(a);
        Vec z = matvec(p.weights[l], a);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += p.biases[l][i];
        const bool last = l + 1 == p.layer_count();
        a = last ? (p.head == OutputHead::softmax ? softmax(z) : z) : activate(p.hidden, z);
        cache.pre.push_back(std::move(z));
    }
    cache.output = a;
    return {std::move(a), std::move(cache)};
}

struct MlpGradients {
    MlpParams params;  // same shapes as the network
    Vec input;         // gradient with respect to the network input
};

/// Accumulates scale · ∂(upstream · output)/∂θ into `acc` and returns the
/// input gradient.
inline Vec mlp_backward_into(const MlpParams& p, const MlpCache& cache, std::span<const double> upstream,
                             MlpParams& acc, double scale = 1.0) {
    if (cache.owner != &p || cache.revision != p.revision || cache.pre.size() != p.layer_count())
        fail(ErrorKind::invalid_argument, "mlp_backward: cache does not belong to the current parameters");
    require(upstream.size() == p.output_dim(), "mlp_backward: upstream gradient dimension mismatch");
    Vec g(upstream.begin(), upstream.end());
    if (p.head == OutputHead::softmax) g = softmax_backward(cache.output, g);
    for (std::size_t l = p.layer_count(); l-- > 0;) {
        if (l + 1 != p.layer_count())
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= activate_grad(p.hidden, cache.pre[l][i]);
        add_outer(acc.weights[l], g, cache.inputs[l], scale);
        axpy(scale, g, acc.biases[l]);
        g = matvec_transposed(p.weights[l], g);
    }
    for (auto& v : g) v *= scale;
    return g;
}

inline MlpGradients mlp_backward(const MlpParams& p, const MlpCache& cache, std::span<const double> upstream) {
    MlpGradients out{p.zeros_like(), {}};
    out.input = mlp_backward_into(p, cache, upstream, out.params);
    return out;
}

// ---------------------------------------------------------------------------
// Adam

enum class Direction { ascent, descent };

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Vec> m;
    std::vector<Vec> v;

    explicit AdamState(double learning_rate = 0.001) : lr(learning_rate) {}
};

/// One bias-corrected Adam update. Throws ErrorKind::numeric naming the
/// parameter block when a gradient is not finite (parameters untouched).
inline void adam_step(ParamList& params, const ParamList& grads, AdamState& state,
                      Direction direction = Direction::descent) {
    require(params.size() == grads.size(), "adam_step: parameter/gradient block count mismatch");
    for (std::size_t b = 0; b < params.size(); ++b) {
        require(params[b].values.size() == grads[b].values.size(),
                "adam_step: shape mismatch in " + params[b].name);
        for (double g : grads[b].values)
            if (!std::isfinite(g)) fail(ErrorKind::numeric, "non-finite gradient in " + params[b].name);
    }
    if (state.m.empty()) {
        for (const auto& b : params) {
            state.m.emplace_back(b.values.size(), 0.0);
            state.v.emplace_back(b.values.size(), 0.0);
        }
    }
    require(state.m.size() == params.size(), "adam_step: optimizer state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double sign = direction == Direction::ascent ? 1.0 : -1.0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = state.m[b];
        auto& v = state.v[b];
        require(m.size() == params[b].values.size(), "adam_step: moment shape mismatch in " + params[b].name);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = grads[b].values[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            params[b].values[i] += sign * state.lr * mh / (std::sqrt(vh) + state.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Relative error used by the gradient checks; falls back to absolute error
/// when both magnitudes are below `floor`.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// Max relative error between `analytic` and central differences of `f`
/// with respect to `params` (restored afterwards).
inline double finite_diff_check(const std::function<double()>& f, std::span<double> params,
                                std::span<const double> analytic, double h = 1e-5) {
    require(params.size() == analytic.size(), "finite_diff_check: gradient size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = f();
        params[i] = saved - h;
        const double down = f();
        params[i] = saved;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

/// Variant over a full parameter list with flat analytic gradient.
inline double finite_diff_check(const std::function<double()>& f, ParamList& params,
                                std::span<const double> analytic, double h = 1e-5) {
    require(total_size(params) == analytic.size(), "finite_diff_check: gradient size mismatch");
    double worst = 0.0;
    std::size_t k = 0;
    for (auto& b : params) {
        worst = std::max(worst, finite_diff_check(f, b.values, analytic.subspan(k, b.values.size()), h));
        k += b.values.size();
    }
    return worst;
}

// ---------------------------------------------------------------------------
// JSON serialization

inline void to_json(nlohmann::json& j, const Matrix& m) {
    j = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", Vec(m.values().begin(), m.values().end())}};
}

inline void from_json(const nlohmann::json& j, Matrix& m) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    const auto data = j.at("data").get<Vec>();
    if (data.size() != rows * cols) fail(ErrorKind::corrupt, "matrix data does not match its shape");
    m = Matrix(rows, cols);
    std::copy(data.begin(), data.end(), m.values().begin());
}

inline void to_json(nlohmann::json& j, const MlpParams& p) {
    j = {{"sizes", p.sizes},
         {"weights", p.weights},
         {"biases", p.biases},
         {"hidden", to_string(p.hidden)},
         {"head", p.head == OutputHead::softmax ? "softmax" : "linear"}};
}

inline void from_json(const nlohmann::json& j, MlpParams& p) {
    p.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    p.weights = j.at("weights").get<std::vector<Matrix>>();
    p.biases = j.at("biases").get<std::vector<Vec>>();
    p.hidden = activation_from_string(j.at("hidden").get<std::string>());
    p.head = j.at("head").get<std::string>() == "softmax" ? OutputHead::softmax : OutputHead::linear;
    if (p.sizes.size() != p.weights.size() + 1 || p.weights.size() != p.biases.size())
        fail(ErrorKind::corrupt, "MLP checkpoint has inconsistent layer counts");
    for (std::size_t l = 0; l < p.weights.size(); ++l)
        if (p.weights[l].rows() != p.sizes[l + 1] || p.weights[l].cols() != p.sizes[l] ||
            p.biases[l].size() != p.sizes[l + 1])
            fail(ErrorKind::corrupt, "MLP checkpoint layer " + std::to_string(l) + " has the wrong shape");
}

inline void to_json(nlohmann::json& j, const AdamState& s) {
    j = {{"lr", s.lr}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps},
         {"step", s.step}, {"m", s.m}, {"v", s.v}};
}

inline void from_json(const nlohmann::json& j, AdamState& s) {
    s.lr = j.at("lr").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    s.step = j.at("step").get<std::uint64_t>();
    s.m = j.at("m").get<std::vector<Vec>>();
    s.v = j.at("v").get<std::vector<Vec>>();
}

}  // namespace stihrl
