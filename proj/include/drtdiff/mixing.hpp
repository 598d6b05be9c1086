#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "drtdiff/matrix.hpp"
#include "drtdiff/nn.hpp"
#include "drtdiff/topology.hpp"

namespace drtdiff::mixing {

/// Largest supported layer count; 2^(L+1) stays well inside double range.
inline constexpr int kMaxLayers = 16;

struct DrtConfig {
    double kappa = 1e-8;  ///< stabilizer added to every squared-norm denominator
    double clip_N = 2.0;  ///< ratio cap between the largest and smallest neighbor weight

    /// Throws InvalidArgument unless kappa >= 0 and clip_N >= 1.
    void validate() const;
};

/// Per-layer K x K column-stochastic combination matrices for one combination
/// step. Entry (l, k) of layer p is the weight agent k puts on agent l.
struct MixingTensor {
    std::vector<Matrix> per_layer;
    long iteration_index = 0;

    int num_layers() const noexcept { return static_cast<int>(per_layer.size()); }
    int num_agents() const noexcept { return per_layer.empty() ? 0 : static_cast<int>(per_layer.front().rows()); }
};

/// Smallest positive entry guaranteed by the clipping rule: 1 / ((K-1) N + 1).
double min_entry_bound(int num_agents, double clip_N);

/// Unnormalized DRT weight agent k assigns to neighbor l for layer `p_star`:
///
///   c_lk * 2^(L+1) * prod_p (1 + |wk_p - wl_p|^2 / (|wl_p|^2 + kappa))
///   --------------------------------------------------------------
///        |wl_p*|^2 + |wk_p* - wl_p*|^2 + kappa
///
/// Throws SingularityError when a denominator is zero (zero layer, kappa = 0).
double drt_raw_weight(const nn::LayeredParams& wk, const nn::LayeredParams& wl, double c_lk, int p_star,
                      const DrtConfig& cfg);

/// Builds every layer's combination matrix from a parameter snapshot:
/// raw weights per neighbor, clip at N times the column's smallest positive raw
/// weight, self weight c_kk / (n_k - 1) times the clipped neighbor sum, then
/// column normalization. Columns are computed independently, so the result is
/// the same for any `threads`.
MixingTensor build_mixing_tensor(std::span<const nn::LayeredParams> all_params, const topology::BaseWeights& base,
                                 const topology::Topology& topo, const DrtConfig& cfg, long iteration, int threads = 1);

/// Replicates a static matrix across `num_layers` layers (classical diffusion).
MixingTensor constant_tensor(const Matrix& a, int num_layers, long iteration);

/// Linear DRT bound: prod_p (1 + |wk_p - wl_p| / |wl_p|) - 1.
double drt_bound_linear(const nn::LayeredParams& wk, const nn::LayeredParams& wl);

/// Quadratic DRT bound: 2^(L+1) prod_p (1 + |wk_p - wl_p|^2 / (|wl_p|^2 + kappa)) + 2.
double drt_bound_quadratic(const nn::LayeredParams& wk, const nn::LayeredParams& wl, double kappa);

/// max over probe rows x of |f(x; wk) - f(x; wl)|^2 / |f(x; wl)|^2. Rows with
/// f(x; wl) = 0 are skipped; if every row is skipped, InvalidArgument.
double relative_output_distance(const nn::Architecture& arch, const nn::LayeredParams& wk,
                                const nn::LayeredParams& wl, const Matrix& probe_inputs);

struct TensorReport {
    bool column_stochastic = true;
    bool zero_pattern_matches = true;
    bool lower_bound_holds = true;
    double worst_column_error = 0.0;
    double smallest_positive = 1.0;

    bool ok() const noexcept { return column_stochastic && zero_pattern_matches && lower_bound_holds; }
};

/// Checks column sums (tol), zero-pattern equality with `base`, and the
/// positive-entry lower bound min_entry_bound(K, clip_N) - tol.
TensorReport check_tensor(const MixingTensor& t, const topology::BaseWeights& base, double clip_N, double tol = 1e-12);

/// Text dump: for each layer a header line `iter p K` then K rows of K values.
void write_tensor(std::ostream& os, const MixingTensor& t);
/// Reads every consecutive tensor block in a dump (layers of one iteration are
/// grouped into one tensor).
std::vector<MixingTensor> read_tensors(std::istream& is);

}  // namespace drtdiff::mixing
