#include "drtdiff/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "drtdiff/error.hpp"

namespace drtdiff::diagnostics {

namespace {

const mixing::MixingTensor& tensor_at(std::span<const mixing::MixingTensor> tensors, long iter) {
    if (tensors.empty()) throw DataUnavailable("no mixing tensors recorded");
    const long first = tensors.front().iteration_index;
    const long offset = iter - first;
    if (offset < 0 || offset >= static_cast<long>(tensors.size()) ||
        tensors[static_cast<std::size_t>(offset)].iteration_index != iter)
        throw DataUnavailable("mixing tensor for iteration " + std::to_string(iter) + " is not recorded");
    return tensors[static_cast<std::size_t>(offset)];
}

}  // namespace

Matrix backward_product(std::span<const mixing::MixingTensor> tensors, int layer, long from, long to) {
    if (from > to) throw InvalidArgument("backward_product: need from <= to");
    const auto& first = tensor_at(tensors, from);
    if (layer < 0 || layer >= first.num_layers()) throw InvalidArgument("backward_product: layer out of range");
    Matrix prod = first.per_layer[layer].transposed();
    for (long s = from + 1; s <= to; ++s) prod = matmul(tensor_at(tensors, s).per_layer[layer].transposed(), prod);
    return prod;
}

double rank_one_residual(const Matrix& product) {
    double worst = 0.0;
    for (std::size_t a = 0; a < product.rows(); ++a)
        for (std::size_t b = a + 1; b < product.rows(); ++b) {
            double d = 0.0;
            for (std::size_t c = 0; c < product.cols(); ++c) d = std::max(d, std::abs(product(a, c) - product(b, c)));
            worst = std::max(worst, d);
        }
    return worst;
}

PhiEstimate estimate_phi(std::span<const mixing::MixingTensor> tensors, int layer, long i, int horizon,
                         bool allow_truncation) {
    if (horizon < 1) throw InvalidArgument("estimate_phi: horizon must be >= 1");
    long t = i + horizon;
    if (allow_truncation && !tensors.empty()) t = std::min(t, tensors.back().iteration_index);
    const Matrix prod = backward_product(tensors, layer, i, t);
    PhiEstimate est;
    est.horizon_used = static_cast<int>(t - i);
    est.residual = rank_one_residual(prod);
    est.weights.assign(prod.cols(), 0.0);
    for (std::size_t r = 0; r < prod.rows(); ++r)
        for (std::size_t c = 0; c < prod.cols(); ++c) est.weights[c] += prod(r, c);
    for (auto& w : est.weights) w /= static_cast<double>(prod.rows());
    return est;
}

std::vector<PhiEstimate> uniform_phi(int num_agents, int num_layers) {
    PhiEstimate u;
    u.weights.assign(num_agents, 1.0 / num_agents);
    return std::vector<PhiEstimate>(num_layers, u);
}

nn::LayeredParams centroid(std::span<const nn::LayeredParams> params, std::span<const PhiEstimate> phi) {
    if (params.empty()) throw InvalidArgument("centroid: no agents");
    const std::size_t L = params.front().layers.size();
    if (phi.size() != L) throw ContractViolation("centroid: need one phi estimate per layer");
    nn::LayeredParams c = params.front();
    for (std::size_t p = 0; p < L; ++p) {
        if (phi[p].weights.size() != params.size()) throw ContractViolation("centroid: phi length differs from K");
        std::fill(c.layers[p].begin(), c.layers[p].end(), 0.0);
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& src = params[k].layers.at(p);
            if (src.size() != c.layers[p].size()) throw ContractViolation("centroid: shape mismatch");
            const double w = phi[p].weights[k];
            for (std::size_t i = 0; i < src.size(); ++i) c.layers[p][i] += w * src[i];
        }
    }
    return c;
}

double network_disagreement(std::span<const nn::LayeredParams> params, const nn::LayeredParams& center) {
    double total = 0.0;
    for (const auto& w : params) total += nn::squared_distance(w, center);
    return total;
}

double centroid_grad_norm(const nn::Architecture& arch, const nn::LayeredParams& center, const data::Dataset& ds) {
    if (ds.size() == 0) throw InvalidArgument("centroid_grad_norm: empty dataset");
    const auto lg = nn::loss_and_grad(arch, center, data::as_batch(ds));
    double s = 0.0;
    for (const auto& l : lg.grad.layers)
        for (double v : l) s += v * v;
    return std::sqrt(s);
}

double generalization_gap(double train_acc, double test_acc) {
    if (train_acc < 0.0 || train_acc > 1.0 || test_acc < 0.0 || test_acc > 1.0)
        throw InvalidArgument("generalization_gap: accuracies must lie in [0, 1]");
    return train_acc - test_acc;
}

GeometricFit fit_geometric(std::span<const double> horizons, std::span<const double> residuals) {
    if (horizons.size() != residuals.size() || horizons.size() < 2)
        throw InvalidArgument("fit_geometric: need at least two (H, residual) pairs");
    const double n = static_cast<double>(horizons.size());
    double sx = 0, sy = 0;
    std::vector<double> ys(residuals.size());
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        if (!(residuals[i] > 0.0)) throw InvalidArgument("fit_geometric: residuals must be positive");
        ys[i] = std::log(residuals[i]);
        sx += horizons[i];
        sy += ys[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const double dx = horizons[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw InvalidArgument("fit_geometric: horizons must not all be equal");
    const double slope = sxy / sxx;
    const double icpt = my - slope * mx;
    GeometricFit f;
    f.ratio = std::exp(slope);
    f.scale = std::exp(icpt);
    f.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return f;
}

}  // namespace drtdiff::diagnostics
