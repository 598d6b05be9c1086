#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "drtdiff/matrix.hpp"

namespace drtdiff::topology {

/// Undirected communication graph over K agents. Every agent is implicitly in
/// its own neighborhood; `edges()` lists only the pairs u < v.
class Topology {
public:
    Topology() = default;
    /// Builds from unordered pairs. Self-pairs and duplicates are ignored;
    /// out-of-range endpoints throw InvalidArgument.
    Topology(int num_agents, const std::vector<std::pair<int, int>>& edges);

    int num_agents() const noexcept { return static_cast<int>(adjacency_.size()); }

    /// Neighborhood N_k, sorted, including k itself.
    const std::vector<int>& neighborhood(int k) const { return neighborhood_.at(k); }
    /// n_k = |N_k| (self included).
    int degree(int k) const { return static_cast<int>(neighborhood_.at(k).size()); }

    bool adjacent(int u, int v) const;
    std::vector<std::pair<int, int>> edges() const;
    std::size_t num_edges() const;
    bool is_connected() const;

    friend bool operator==(const Topology& a, const Topology& b) { return a.adjacency_ == b.adjacency_; }

private:
    std::vector<std::vector<bool>> adjacency_;
    std::vector<std::vector<int>> neighborhood_;
};

Topology build_ring(int num_agents);
Topology build_hypercube(int dim);
Topology build_complete(int num_agents);

/// G(K, p) with independent edges. Disconnected draws are redrawn with seed+1,
/// seed+2, ... up to `max_attempts` draws in total.
Topology build_erdos_renyi(int num_agents, double p, std::uint64_t seed, int max_attempts = 1000);

/// Edge-list text: first line `K`, then one `u v` per line.
void write_edge_list(std::ostream& os, const Topology& t);
Topology read_edge_list(std::istream& is);

/// Static base combination matrix C, entry (l, k) = c_{lk}.
struct BaseWeights {
    Matrix matrix;

    int num_agents() const noexcept { return static_cast<int>(matrix.rows()); }
    double operator()(int l, int k) const { return matrix(l, k); }
};

/// Metropolis rule with self-inclusive degrees n_k = |N_k|.
BaseWeights metropolis_weights(const Topology& t);

/// Checks that c_{lk} > 0 exactly on the neighborhoods of `t` and that every
/// column sums to one. Throws ContractViolation otherwise.
void validate_base_weights(const BaseWeights& w, const Topology& t, double tol = 1e-12);

struct MixingRateOptions {
    double tolerance = 1e-9;
    int max_iterations = 100000;
};

/// Second-largest eigenvalue magnitude of a symmetric doubly stochastic matrix.
/// Power iteration on the square of the matrix deflated by the consensus
/// eigenpair (1/K) 1 1^T, so that +/- lambda pairs of equal magnitude do not
/// stall convergence.
double mixing_rate(const BaseWeights& w, const MixingRateOptions& opts = {});

}  // namespace drtdiff::topology
