#pragma once

#include <span>
#include <vector>

#include "drtdiff/data.hpp"
#include "drtdiff/matrix.hpp"
#include "drtdiff/mixing.hpp"
#include "drtdiff/nn.hpp"

namespace drtdiff::diagnostics {

/// Residual level above which a phi estimate is considered not yet rank-one.
inline constexpr double kPhiResidualWarn = 1e-6;

struct PhiEstimate {
    std::vector<double> weights;  ///< length K, nonnegative, sums to one
    int horizon_used = 0;         ///< t - i of the backward product actually formed
    double residual = 0.0;        ///< max over row pairs of the inf-norm row difference

    bool converged() const noexcept { return residual <= kPhiResidualWarn; }
};

struct DisagreementRecord {
    long iteration = 0;
    double value = 0.0;
    double mu = 0.0;
};

/// A_t^T A_{t-1}^T ... A_i^T for layer p. `tensors` must hold consecutive
/// iteration indices covering [from, to]; otherwise DataUnavailable.
Matrix backward_product(std::span<const mixing::MixingTensor> tensors, int layer, long from, long to);

/// Max over row pairs of the inf-norm distance between rows.
double rank_one_residual(const Matrix& product);

/// phi_i as the row average of the backward product over [i, i + horizon].
/// With `allow_truncation` the window is cut at the last recorded tensor
/// instead of failing.
PhiEstimate estimate_phi(std::span<const mixing::MixingTensor> tensors, int layer, long i, int horizon,
                         bool allow_truncation = false);

/// Uniform weights for every layer (plain-mean centroid).
std::vector<PhiEstimate> uniform_phi(int num_agents, int num_layers);

/// Per-layer phi-weighted combination of agent parameters.
nn::LayeredParams centroid(std::span<const nn::LayeredParams> params, std::span<const PhiEstimate> phi);

/// sum_k |w_k - w_c|^2 over all layers.
double network_disagreement(std::span<const nn::LayeredParams> params, const nn::LayeredParams& center);

/// Norm of the full-batch gradient of the mean loss over `ds`.
double centroid_grad_norm(const nn::Architecture& arch, const nn::LayeredParams& center, const data::Dataset& ds);

double generalization_gap(double train_acc, double test_acc);

struct GeometricFit {
    double scale = 0.0;  ///< C
    double ratio = 0.0;  ///< xi
    double r_squared = 0.0;
};

/// Least-squares fit of log(residual) = log C + H log xi. Residuals must be positive.
GeometricFit fit_geometric(std::span<const double> horizons, std::span<const double> residuals);

}  // namespace drtdiff::diagnostics
