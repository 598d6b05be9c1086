#include "drtdiff/topology.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>

#include "drtdiff/error.hpp"
#include "drtdiff/rng.hpp"

namespace drtdiff::topology {

Topology::Topology(int num_agents, const std::vector<std::pair<int, int>>& edges) {
    if (num_agents < 1) throw InvalidArgument("topology: num_agents must be >= 1");
    const auto k = static_cast<std::size_t>(num_agents);
    adjacency_.assign(k, std::vector<bool>(k, false));
    for (auto [u, v] : edges) {
        if (u < 0 || v < 0 || u >= num_agents || v >= num_agents)
            throw InvalidArgument("topology: edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") out of range");
        if (u == v) continue;
        adjacency_[u][v] = true;
        adjacency_[v][u] = true;
    }
    neighborhood_.resize(k);
    for (int a = 0; a < num_agents; ++a)
        for (int b = 0; b < num_agents; ++b)
            if (a == b || adjacency_[a][b]) neighborhood_[a].push_back(b);
}

bool Topology::adjacent(int u, int v) const {
    return u != v && adjacency_.at(u).at(v);
}

std::vector<std::pair<int, int>> Topology::edges() const {
    std::vector<std::pair<int, int>> out;
    for (int u = 0; u < num_agents(); ++u)
        for (int v = u + 1; v < num_agents(); ++v)
            if (adjacency_[u][v]) out.emplace_back(u, v);
    return out;
}

std::size_t Topology::num_edges() const { return edges().size(); }

bool Topology::is_connected() const {
    const int n = num_agents();
    if (n == 0) return false;
    std::vector<bool> seen(n, false);
    std::queue<int> q;
    q.push(0);
    seen[0] = true;
    int count = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : neighborhood_[u]) {
            if (!seen[v]) {
                seen[v] = true;
                ++count;
                q.push(v);
            }
        }
    }
    return count == n;
}

Topology build_ring(int num_agents) {
    if (num_agents < 2) throw InvalidArgument("build_ring: K must be >= 2, got " + std::to_string(num_agents));
    std::vector<std::pair<int, int>> e;
    for (int k = 0; k < num_agents; ++k) e.emplace_back(k, (k + 1) % num_agents);
    return Topology(num_agents, e);
}

Topology build_hypercube(int dim) {
    if (dim < 1 || dim > 20) throw InvalidArgument("build_hypercube: dim must be in [1, 20]");
    const int n = 1 << dim;
    std::vector<std::pair<int, int>> e;
    for (int u = 0; u < n; ++u)
        for (int b = 0; b < dim; ++b) {
            int v = u ^ (1 << b);
            if (u < v) e.emplace_back(u, v);
        }
    return Topology(n, e);
}

Topology build_complete(int num_agents) {
    if (num_agents < 1) throw InvalidArgument("build_complete: K must be >= 1");
    std::vector<std::pair<int, int>> e;
    for (int u = 0; u < num_agents; ++u)
        for (int v = u + 1; v < num_agents; ++v) e.emplace_back(u, v);
    return Topology(num_agents, e);
}

Topology build_erdos_renyi(int num_agents, double p, std::uint64_t seed, int max_attempts) {
    if (num_agents < 2) throw InvalidArgument("build_erdos_renyi: K must be >= 2");
    if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("build_erdos_renyi: p must be in (0, 1]");
    if (max_attempts < 1) throw InvalidArgument("build_erdos_renyi: max_attempts must be >= 1");
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Rng rng(derive_seed(seed + static_cast<std::uint64_t>(attempt), {0x45524eULL}));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::vector<std::pair<int, int>> e;
        for (int u = 0; u < num_agents; ++u)
            for (int v = u + 1; v < num_agents; ++v)
                if (u01(rng) < p) e.emplace_back(u, v);
        Topology t(num_agents, e);
        if (t.is_connected()) return t;
    }
    throw ConnectivityFailure("build_erdos_renyi: no connected graph after " + std::to_string(max_attempts) +
                                  " attempts (K=" + std::to_string(num_agents) + ", p=" + std::to_string(p) + ")",
                              max_attempts);
}

void write_edge_list(std::ostream& os, const Topology& t) {
    os << t.num_agents() << '\n';
    for (auto [u, v] : t.edges()) os << u << ' ' << v << '\n';
}

Topology read_edge_list(std::istream& is) {
    int k = 0;
    if (!(is >> k) || k < 1) throw SchemaMismatch("edge list: missing or invalid agent count header");
    std::vector<std::pair<int, int>> e;
    int u = 0, v = 0;
    while (is >> u >> v) e.emplace_back(u, v);
    if (!is.eof()) throw SchemaMismatch("edge list: malformed edge line");
    return Topology(k, e);
}

BaseWeights metropolis_weights(const Topology& t) {
    if (!t.is_connected()) throw ContractViolation("metropolis_weights: topology is not connected");
    const int n = t.num_agents();
    Matrix m(n, n);
    for (int k = 0; k < n; ++k) {
        double off = 0.0;
        for (int l : t.neighborhood(k)) {
            if (l == k) continue;
            const double a = 1.0 / std::max(t.degree(k), t.degree(l));
            m(l, k) = a;
            off += a;
        }
        m(k, k) = 1.0 - off;
    }
    return BaseWeights{std::move(m)};
}

void validate_base_weights(const BaseWeights& w, const Topology& t, double tol) {
    const int n = t.num_agents();
    if (w.num_agents() != n || w.matrix.cols() != static_cast<std::size_t>(n))
        throw ContractViolation("base weights: size does not match topology");
    for (int k = 0; k < n; ++k) {
        double sum = 0.0;
        for (int l = 0; l < n; ++l) {
            const double c = w(l, k);
            const bool in_hood = (l == k) || t.adjacent(l, k);
            if (c < 0.0 || !std::isfinite(c))
                throw ContractViolation("base weights: entry (" + std::to_string(l) + "," + std::to_string(k) +
                                        ") is negative or non-finite");
            if (in_hood != (c > 0.0))
                throw ContractViolation("base weights: sparsity of entry (" + std::to_string(l) + "," +
                                        std::to_string(k) + ") does not match the topology");
            sum += c;
        }
        if (std::abs(sum - 1.0) > tol)
            throw ContractViolation("base weights: column " + std::to_string(k) + " sums to " + std::to_string(sum));
    }
}

namespace {

// y = B x with B = W - (1/K) 1 1^T.
void apply_deflated(const Matrix& w, std::span<const double> x, std::span<double> y) {
    const std::size_t n = w.rows();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += w(r, c) * x[c];
        y[r] = s - mean;
    }
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

double mixing_rate(const BaseWeights& bw, const MixingRateOptions& opts) {
    const Matrix& w = bw.matrix;
    const std::size_t n = w.rows();
    if (n == 0 || w.cols() != n) throw ContractViolation("mixing_rate: matrix must be square and non-empty");
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = r + 1; c < n; ++c)
            if (std::abs(w(r, c) - w(c, r)) > 1e-12)
                throw ContractViolation("mixing_rate: matrix is not symmetric at (" + std::to_string(r) + "," +
                                        std::to_string(c) + ")");
    if (n == 1) return 0.0;

    // Fixed-seed start vector, projected off the consensus direction.
    Rng rng(0x6d6978ULL);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> x(n), y(n), z(n);
    for (auto& v : x) v = g(rng);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    for (auto& v : x) v -= mean;
    double nx = norm2(x);
    for (auto& v : x) v /= nx;

    double lambda_sq = 0.0;
    double residual = 0.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        apply_deflated(w, x, y);
        apply_deflated(w, y, z);
        // Rayleigh quotient of B^2 at unit x equals ||B x||^2.
        const double ny = norm2(y);
        const double rq = ny * ny;
        const double nz = norm2(z);
        if (nz == 0.0) return 0.0;
        residual = 0.0;
        for (std::size_t i = 0; i < n; ++i) residual = std::max(residual, std::abs(z[i] - rq * x[i]));
        const bool settled = std::abs(rq - lambda_sq) <= opts.tolerance * std::max(1.0, rq);
        lambda_sq = rq;
        for (std::size_t i = 0; i < n; ++i) x[i] = z[i] / nz;
        if (settled && it > 0) return std::sqrt(std::max(0.0, lambda_sq));
    }
    throw ToleranceFailure("mixing_rate: power iteration did not converge, residual " + std::to_string(residual),
                           residual);
}

}  // namespace drtdiff::topology
