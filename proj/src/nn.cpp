#include "drtdiff/nn.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

#include "drtdiff/error.hpp"
#include "drtdiff/rng.hpp"

namespace drtdiff::nn {

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "identity") return Activation::identity;
    throw InvalidArgument("unknown activation '" + name + "' (expected relu, tanh or identity)");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "?";
}

std::size_t Architecture::layer_size(int p) const {
    const auto out = static_cast<std::size_t>(layer_dims.at(p + 1));
    const auto in = static_cast<std::size_t>(layer_dims.at(p));
    return out * in + (bias ? out : 0);
}

void Architecture::validate() const {
    if (layer_dims.size() < 2) throw InvalidArgument("architecture: need at least one layer (two dims)");
    for (int d : layer_dims)
        if (d < 1) throw InvalidArgument("architecture: every layer dim must be >= 1");
}

std::size_t LayeredParams::total_size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.size();
    return n;
}

LayeredParams zeros_like(const Architecture& arch) {
    arch.validate();
    LayeredParams p;
    for (int l = 0; l < arch.num_layers(); ++l) p.layers.emplace_back(arch.layer_size(l), 0.0);
    return p;
}

LayeredParams init_params(const Architecture& arch, std::uint64_t seed) {
    LayeredParams p = zeros_like(arch);
    Rng rng(derive_seed(seed, {0x696e6974ULL}));
    for (int l = 0; l < arch.num_layers(); ++l) {
        const int fan_in = arch.layer_dims[l];
        const double gain = arch.activation == Activation::relu ? 2.0 : 1.0;
        std::normal_distribution<double> g(0.0, std::sqrt(gain / fan_in));
        const std::size_t nw = static_cast<std::size_t>(arch.layer_dims[l + 1]) * fan_in;
        for (std::size_t i = 0; i < nw; ++i) p.layers[l][i] = g(rng);
    }
    return p;
}

void check_shape(const Architecture& arch, const LayeredParams& params) {
    if (params.num_layers() != arch.num_layers())
        throw ContractViolation("params have " + std::to_string(params.num_layers()) + " layers, architecture has " +
                                std::to_string(arch.num_layers()));
    for (int l = 0; l < arch.num_layers(); ++l)
        if (params.layers[l].size() != arch.layer_size(l))
            throw ContractViolation("layer " + std::to_string(l) + " has length " +
                                    std::to_string(params.layers[l].size()) + ", expected " +
                                    std::to_string(arch.layer_size(l)));
}

namespace {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::identity: return z;
    }
    return z;
}

// Derivative expressed through the pre-activation z and post-activation h.
double activate_grad(Activation a, double z, double h) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - h * h;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

// z = x W^T + b for one layer.
Matrix affine(const Architecture& arch, const std::vector<double>& layer, int p, const Matrix& x) {
    const int in = arch.layer_dims[p];
    const int out = arch.layer_dims[p + 1];
    Matrix z(x.rows(), out);
    for (std::size_t b = 0; b < x.rows(); ++b) {
        auto xr = x.row(b);
        for (int o = 0; o < out; ++o) {
            const double* w = layer.data() + static_cast<std::size_t>(o) * in;
            double s = arch.bias ? layer[static_cast<std::size_t>(out) * in + o] : 0.0;
            for (int i = 0; i < in; ++i) s += w[i] * xr[i];
            z(b, o) = s;
        }
    }
    return z;
}

struct Trace {
    std::vector<Matrix> pre;   // pre-activation of each layer
    std::vector<Matrix> post;  // post[0] = input, post[p+1] = output of layer p
};

Trace forward_trace(const Architecture& arch, const LayeredParams& params, const Matrix& x) {
    check_shape(arch, params);
    if (x.cols() != static_cast<std::size_t>(arch.input_dim()))
        throw ContractViolation("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(arch.input_dim()));
    Trace t;
    t.post.push_back(x);
    const int L = arch.num_layers();
    for (int p = 0; p < L; ++p) {
        Matrix z = affine(arch, params.layers[p], p, t.post.back());
        Matrix h = z;
        if (p + 1 < L)
            for (auto& v : h.data()) v = activate(arch.activation, v);
        t.pre.push_back(std::move(z));
        t.post.push_back(std::move(h));
    }
    return t;
}

void check_batch(const Architecture& arch, const Batch& batch) {
    if (batch.size() == 0) throw InvalidArgument("batch must contain at least one sample");
    if (batch.inputs.rows() != batch.size()) throw ContractViolation("batch: inputs and labels differ in length");
    for (int y : batch.labels)
        if (y < 0 || y >= arch.output_dim()) throw ContractViolation("batch: label out of range");
}

// Mean cross-entropy; optionally writes d(loss)/d(logits) into `dlogits`.
double softmax_xent(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits) {
    const std::size_t B = logits.rows();
    const std::size_t C = logits.cols();
    double total = 0.0;
    if (dlogits) *dlogits = Matrix(B, C);
    for (std::size_t b = 0; b < B; ++b) {
        auto row = logits.row(b);
        const double mx = *std::max_element(row.begin(), row.end());
        double se = 0.0;
        for (double v : row) se += std::exp(v - mx);
        const double lse = mx + std::log(se);
        total += lse - row[labels[b]];
        if (dlogits) {
            for (std::size_t c = 0; c < C; ++c) (*dlogits)(b, c) = std::exp(row[c] - lse) / static_cast<double>(B);
            (*dlogits)(b, labels[b]) -= 1.0 / static_cast<double>(B);
        }
    }
    const double l = total / static_cast<double>(B);
    if (!std::isfinite(l)) throw NumericalFailure("cross-entropy loss is not finite");
    return l;
}

}  // namespace

Matrix forward(const Architecture& arch, const LayeredParams& params, const Matrix& x) {
    return std::move(forward_trace(arch, params, x).post.back());
}

double loss(const Architecture& arch, const LayeredParams& params, const Batch& batch) {
    check_batch(arch, batch);
    return softmax_xent(forward(arch, params, batch.inputs), batch.labels, nullptr);
}

LossGrad loss_and_grad(const Architecture& arch, const LayeredParams& params, const Batch& batch) {
    check_batch(arch, batch);
    Trace t = forward_trace(arch, params, batch.inputs);
    Matrix delta;
    LossGrad out;
    out.loss = softmax_xent(t.post.back(), batch.labels, &delta);
    out.grad = zeros_like(arch);

    const int L = arch.num_layers();
    for (int p = L - 1; p >= 0; --p) {
        const int in = arch.layer_dims[p];
        const int outd = arch.layer_dims[p + 1];
        const Matrix& h_in = t.post[p];
        auto& g = out.grad.layers[p];
        for (std::size_t b = 0; b < delta.rows(); ++b) {
            auto xr = h_in.row(b);
            for (int o = 0; o < outd; ++o) {
                const double d = delta(b, o);
                if (d == 0.0) continue;
                double* gw = g.data() + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) gw[i] += d * xr[i];
                if (arch.bias) g[static_cast<std::size_t>(outd) * in + o] += d;
            }
        }
        if (p == 0) break;
        // Propagate to the previous layer's pre-activation.
        const auto& w = params.layers[p];
        Matrix prev(delta.rows(), in);
        for (std::size_t b = 0; b < delta.rows(); ++b) {
            for (int o = 0; o < outd; ++o) {
                const double d = delta(b, o);
                if (d == 0.0) continue;
                const double* wr = w.data() + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) prev(b, i) += d * wr[i];
            }
            for (int i = 0; i < in; ++i)
                prev(b, i) *= activate_grad(arch.activation, t.pre[p - 1](b, i), t.post[p](b, i));
        }
        delta = std::move(prev);
    }
    if (!all_finite(out.grad)) throw NumericalFailure("gradient contains non-finite entries");
    return out;
}

double accuracy(const Architecture& arch, const LayeredParams& params, const Batch& batch) {
    check_batch(arch, batch);
    Matrix logits = forward(arch, params, batch.inputs);
    std::size_t correct = 0;
    for (std::size_t b = 0; b < logits.rows(); ++b) {
        auto row = logits.row(b);
        const auto best = std::max_element(row.begin(), row.end()) - row.begin();
        if (best == batch.labels[b]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.size());
}

LayeredParams finite_diff_grad(const Architecture& arch, const LayeredParams& params, const Batch& batch, double h) {
    if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: h must be positive");
    LayeredParams g = zeros_like(arch);
    LayeredParams probe = params;
    for (int p = 0; p < params.num_layers(); ++p) {
        for (std::size_t i = 0; i < params.layers[p].size(); ++i) {
            const double orig = probe.layers[p][i];
            probe.layers[p][i] = orig + h;
            const double up = loss(arch, probe, batch);
            probe.layers[p][i] = orig - h;
            const double down = loss(arch, probe, batch);
            probe.layers[p][i] = orig;
            g.layers[p][i] = (up - down) / (2.0 * h);
        }
    }
    return g;
}

std::vector<double> layer_sq_norms(const LayeredParams& params) {
    std::vector<double> out;
    out.reserve(params.layers.size());
    for (const auto& l : params.layers) {
        double s = 0.0;
        for (double v : l) s += v * v;
        out.push_back(s);
    }
    return out;
}

std::vector<double> layer_norms(const LayeredParams& params) {
    auto sq = layer_sq_norms(params);
    for (auto& v : sq) v = std::sqrt(v);
    return sq;
}

namespace {
void require_same_shape(const LayeredParams& a, const LayeredParams& b) {
    if (a.layers.size() != b.layers.size()) throw ContractViolation("params differ in layer count");
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].size() != b.layers[l].size())
            throw ContractViolation("params differ in length of layer " + std::to_string(l));
}
}  // namespace

void axpy(double alpha, const LayeredParams& x, LayeredParams& y) {
    require_same_shape(x, y);
    for (std::size_t l = 0; l < x.layers.size(); ++l)
        for (std::size_t i = 0; i < x.layers[l].size(); ++i) y.layers[l][i] += alpha * x.layers[l][i];
}

LayeredParams difference(const LayeredParams& a, const LayeredParams& b) {
    require_same_shape(a, b);
    LayeredParams d = a;
    axpy(-1.0, b, d);
    return d;
}

double squared_distance(const LayeredParams& a, const LayeredParams& b) {
    require_same_shape(a, b);
    double s = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < a.layers[l].size(); ++i) {
            const double d = a.layers[l][i] - b.layers[l][i];
            s += d * d;
        }
    return s;
}

double max_abs_diff(const LayeredParams& a, const LayeredParams& b) {
    require_same_shape(a, b);
    double m = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < a.layers[l].size(); ++i)
            m = std::max(m, std::abs(a.layers[l][i] - b.layers[l][i]));
    return m;
}

bool all_finite(const LayeredParams& p) {
    for (const auto& l : p.layers)
        for (double v : l)
            if (!std::isfinite(v)) return false;
    return true;
}

void write_params(std::ostream& os, const LayeredParams& p) {
    os << p.layers.size() << '\n';
    for (std::size_t l = 0; l < p.layers.size(); ++l) os << (l ? " " : "") << p.layers[l].size();
    os << '\n' << std::setprecision(17);
    for (const auto& layer : p.layers) {
        for (std::size_t i = 0; i < layer.size(); ++i) os << (i ? " " : "") << layer[i];
        os << '\n';
    }
}

LayeredParams read_params(std::istream& is) {
    std::size_t L = 0;
    if (!(is >> L) || L == 0) throw SchemaMismatch("params: missing layer count");
    std::vector<std::size_t> lengths(L);
    for (auto& n : lengths)
        if (!(is >> n)) throw SchemaMismatch("params: missing layer length");
    LayeredParams p;
    for (auto n : lengths) {
        std::vector<double> layer(n);
        for (auto& v : layer)
            if (!(is >> v)) throw SchemaMismatch("params: truncated values");
        p.layers.push_back(std::move(layer));
    }
    return p;
}

}  // namespace drtdiff::nn
