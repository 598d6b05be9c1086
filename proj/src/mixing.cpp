#include "drtdiff/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "drtdiff/error.hpp"
#include "drtdiff/parallel.hpp"

namespace drtdiff::mixing {

void DrtConfig::validate() const {
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw InvalidArgument("drt config: kappa must be finite and >= 0");
    if (!(clip_N >= 1.0) || !std::isfinite(clip_N)) throw InvalidArgument("drt config: clip_N must be finite and >= 1");
}

double min_entry_bound(int num_agents, double clip_N) {
    return 1.0 / ((num_agents - 1) * clip_N + 1.0);
}

namespace {

void check_layer_count(int L) {
    if (L < 1 || L > kMaxLayers)
        throw InvalidArgument("drt weights: layer count must be in [1, " + std::to_string(kMaxLayers) + "]");
}

std::vector<double> layer_sq_diffs(const nn::LayeredParams& a, const nn::LayeredParams& b) {
    if (a.layers.size() != b.layers.size()) throw ContractViolation("drt: parameter sets differ in layer count");
    std::vector<double> out(a.layers.size(), 0.0);
    for (std::size_t p = 0; p < a.layers.size(); ++p) {
        if (a.layers[p].size() != b.layers[p].size())
            throw ContractViolation("drt: parameter sets differ in length of layer " + std::to_string(p));
        double s = 0.0;
        for (std::size_t i = 0; i < a.layers[p].size(); ++i) {
            const double d = a.layers[p][i] - b.layers[p][i];
            s += d * d;
        }
        out[p] = s;
    }
    return out;
}

// prod_p (1 + diff_p / (norm_l_p + kappa)); shared by the scalar and tensor paths.
double trust_product(std::span<const double> sq_norm_l, std::span<const double> sq_diff, double kappa) {
    double prod = 1.0;
    for (std::size_t p = 0; p < sq_norm_l.size(); ++p) {
        const double den = sq_norm_l[p] + kappa;
        if (den == 0.0)
            throw SingularityError("drt: layer " + std::to_string(p) +
                                   " of a neighbor has zero norm; use kappa > 0 to regularize");
        prod *= 1.0 + sq_diff[p] / den;
    }
    return prod;
}

double raw_weight(double c_lk, double scale, double prod, double sq_norm_l_star, double sq_diff_star, double kappa) {
    const double den = sq_norm_l_star + sq_diff_star + kappa;
    if (den == 0.0) throw SingularityError("drt: zero denominator at the selected layer; use kappa > 0");
    return c_lk * scale * prod / den;
}

}  // namespace

double drt_raw_weight(const nn::LayeredParams& wk, const nn::LayeredParams& wl, double c_lk, int p_star,
                      const DrtConfig& cfg) {
    cfg.validate();
    const int L = wl.num_layers();
    check_layer_count(L);
    if (p_star < 0 || p_star >= L) throw InvalidArgument("drt_raw_weight: layer index out of range");
    if (!(c_lk > 0.0)) throw InvalidArgument("drt_raw_weight: c_lk must be positive");
    const auto diffs = layer_sq_diffs(wk, wl);
    const auto norms = nn::layer_sq_norms(wl);
    const double prod = trust_product(norms, diffs, cfg.kappa);
    return raw_weight(c_lk, std::ldexp(1.0, L + 1), prod, norms[p_star], diffs[p_star], cfg.kappa);
}

MixingTensor build_mixing_tensor(std::span<const nn::LayeredParams> all_params, const topology::BaseWeights& base,
                                 const topology::Topology& topo, const DrtConfig& cfg, long iteration, int threads) {
    cfg.validate();
    const int K = topo.num_agents();
    if (static_cast<int>(all_params.size()) != K)
        throw ContractViolation("build_mixing_tensor: expected " + std::to_string(K) + " parameter sets, got " +
                                std::to_string(all_params.size()));
    topology::validate_base_weights(base, topo, 1e-9);
    const int L = all_params.front().num_layers();
    check_layer_count(L);

    std::vector<std::vector<double>> sq_norms(K);
    for (int k = 0; k < K; ++k) {
        if (all_params[k].num_layers() != L) throw ContractViolation("build_mixing_tensor: layer count differs");
        sq_norms[k] = nn::layer_sq_norms(all_params[k]);
    }

    MixingTensor t;
    t.iteration_index = iteration;
    t.per_layer.assign(L, Matrix(K, K));
    const double scale = std::ldexp(1.0, L + 1);

    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        std::vector<int> nbrs;
        for (int l : topo.neighborhood(k))
            if (l != k) nbrs.push_back(l);
        if (nbrs.empty()) {
            for (int p = 0; p < L; ++p) t.per_layer[p](k, k) = 1.0;
            return;
        }
        // Per neighbor: trust product and per-layer squared differences.
        std::vector<double> prods(nbrs.size());
        std::vector<std::vector<double>> diffs(nbrs.size());
        for (std::size_t j = 0; j < nbrs.size(); ++j) {
            diffs[j] = layer_sq_diffs(all_params[k], all_params[nbrs[j]]);
            prods[j] = trust_product(sq_norms[nbrs[j]], diffs[j], cfg.kappa);
        }
        const double self_share = base(k, k) / static_cast<double>(topo.degree(k) - 1);
        std::vector<double> clipped(nbrs.size());
        for (int p = 0; p < L; ++p) {
            double min_pos = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < nbrs.size(); ++j) {
                const int l = nbrs[j];
                clipped[j] = raw_weight(base(l, k), scale, prods[j], sq_norms[l][p], diffs[j][p], cfg.kappa);
                if (clipped[j] > 0.0) min_pos = std::min(min_pos, clipped[j]);
            }
            if (!std::isfinite(min_pos))
                throw NumericalFailure("build_mixing_tensor: no finite positive raw weight in column " +
                                       std::to_string(k) + ", layer " + std::to_string(p));
            const double cap = cfg.clip_N * min_pos;
            double nbr_sum = 0.0;
            for (auto& v : clipped) {
                v = std::min(v, cap);
                nbr_sum += v;
            }
            const double self = self_share * nbr_sum;
            const double total = self + nbr_sum;
            if (!std::isfinite(total) || !(total > 0.0))
                throw NumericalFailure("build_mixing_tensor: degenerate column " + std::to_string(k));
            Matrix& a = t.per_layer[p];
            a(k, k) = self / total;
            for (std::size_t j = 0; j < nbrs.size(); ++j) a(nbrs[j], k) = clipped[j] / total;
        }
    });
    return t;
}

MixingTensor constant_tensor(const Matrix& a, int num_layers, long iteration) {
    MixingTensor t;
    t.iteration_index = iteration;
    t.per_layer.assign(num_layers, a);
    return t;
}

double drt_bound_linear(const nn::LayeredParams& wk, const nn::LayeredParams& wl) {
    const auto diffs = layer_sq_diffs(wk, wl);
    const auto norms = nn::layer_sq_norms(wl);
    double prod = 1.0;
    for (std::size_t p = 0; p < norms.size(); ++p) {
        if (norms[p] == 0.0)
            throw SingularityError("drt_bound_linear: reference layer " + std::to_string(p) + " has zero norm");
        prod *= 1.0 + std::sqrt(diffs[p]) / std::sqrt(norms[p]);
    }
    return prod - 1.0;
}

double drt_bound_quadratic(const nn::LayeredParams& wk, const nn::LayeredParams& wl, double kappa) {
    if (!(kappa >= 0.0)) throw InvalidArgument("drt_bound_quadratic: kappa must be >= 0");
    const int L = wl.num_layers();
    check_layer_count(L);
    const auto diffs = layer_sq_diffs(wk, wl);
    const auto norms = nn::layer_sq_norms(wl);
    return std::ldexp(1.0, L + 1) * trust_product(norms, diffs, kappa) + 2.0;
}

double relative_output_distance(const nn::Architecture& arch, const nn::LayeredParams& wk,
                                const nn::LayeredParams& wl, const Matrix& probe_inputs) {
    const Matrix fk = nn::forward(arch, wk, probe_inputs);
    const Matrix fl = nn::forward(arch, wl, probe_inputs);
    double worst = 0.0;
    bool any = false;
    for (std::size_t b = 0; b < fl.rows(); ++b) {
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < fl.cols(); ++c) {
            const double d = fk(b, c) - fl(b, c);
            num += d * d;
            den += fl(b, c) * fl(b, c);
        }
        if (den == 0.0) continue;
        any = true;
        worst = std::max(worst, num / den);
    }
    if (!any) throw InvalidArgument("relative_output_distance: every probe maps to a zero output");
    return worst;
}

TensorReport check_tensor(const MixingTensor& t, const topology::BaseWeights& base, double clip_N, double tol) {
    TensorReport r;
    const int K = base.num_agents();
    const double bound = min_entry_bound(K, clip_N);
    for (const Matrix& a : t.per_layer) {
        if (a.rows() != static_cast<std::size_t>(K) || a.cols() != static_cast<std::size_t>(K)) {
            r.zero_pattern_matches = false;
            continue;
        }
        for (int k = 0; k < K; ++k) {
            double sum = 0.0;
            for (int l = 0; l < K; ++l) {
                const double v = a(l, k);
                sum += v;
                if (v < 0.0) r.column_stochastic = false;
                if ((v > 0.0) != (base(l, k) > 0.0)) r.zero_pattern_matches = false;
                if (v > 0.0) {
                    r.smallest_positive = std::min(r.smallest_positive, v);
                    if (v < bound - tol) r.lower_bound_holds = false;
                }
            }
            const double err = std::abs(sum - 1.0);
            r.worst_column_error = std::max(r.worst_column_error, err);
            if (err > tol) r.column_stochastic = false;
        }
    }
    return r;
}

void write_tensor(std::ostream& os, const MixingTensor& t) {
    const auto old = os.precision(17);
    for (int p = 0; p < t.num_layers(); ++p) {
        const Matrix& a = t.per_layer[p];
        os << t.iteration_index << ' ' << p << ' ' << a.rows() << '\n';
        for (std::size_t r = 0; r < a.rows(); ++r) {
            for (std::size_t c = 0; c < a.cols(); ++c) os << (c ? " " : "") << a(r, c);
            os << '\n';
        }
    }
    os.precision(old);
}

std::vector<MixingTensor> read_tensors(std::istream& is) {
    std::vector<MixingTensor> out;
    long iter = 0;
    int p = 0, K = 0;
    while (is >> iter >> p >> K) {
        if (K < 1) throw SchemaMismatch("tensor dump: invalid K in header");
        Matrix a(K, K);
        for (auto& v : a.data())
            if (!(is >> v)) throw SchemaMismatch("tensor dump: truncated matrix for iteration " + std::to_string(iter));
        if (out.empty() || out.back().iteration_index != iter) {
            if (p != 0) throw SchemaMismatch("tensor dump: iteration " + std::to_string(iter) + " does not start at layer 0");
            out.push_back(MixingTensor{{}, iter});
        } else if (p != out.back().num_layers()) {
            throw SchemaMismatch("tensor dump: layers out of order at iteration " + std::to_string(iter));
        }
        out.back().per_layer.push_back(std::move(a));
    }
    if (!is.eof()) throw SchemaMismatch("tensor dump: malformed header");
    return out;
}

}  // namespace drtdiff::mixing
