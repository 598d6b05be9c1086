#include <cmath>

#include "doctest.h"
#include "drtdiff/diagnostics.hpp"
#include "drtdiff/error.hpp"

using namespace drtdiff;
using namespace drtdiff::diagnostics;
using mixing::MixingTensor;

namespace {

Matrix two_by_two(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m.data() = {a, b, c, d};
    return m;
}

std::vector<MixingTensor> constant_run(const Matrix& a, long first, int count) {
    std::vector<MixingTensor> out;
    for (int i = 0; i < count; ++i) out.push_back(mixing::constant_tensor(a, 1, first + i));
    return out;
}

}  // namespace

TEST_CASE("backward product") {
    // Column-stochastic A; products of transposes converge to 1 phi^T with A phi = phi.
    const Matrix a = two_by_two(0.9, 0.2, 0.1, 0.8);
    auto ts = constant_run(a, 10, 60);

    SUBCASE("single factor is the transpose") { CHECK(backward_product(ts, 0, 12, 12) == a.transposed()); }
    SUBCASE("two factors in the right order") {
        const Matrix b = two_by_two(0.5, 0.3, 0.5, 0.7);
        std::vector<MixingTensor> mixed{mixing::constant_tensor(a, 1, 0), mixing::constant_tensor(b, 1, 1)};
        // A_1^T A_0^T = (A_0 A_1)^T
        CHECK(max_abs_diff(backward_product(mixed, 0, 0, 1), matmul(a, b).transposed()) < 1e-15);
    }
    SUBCASE("phi converges to the Perron vector") {
        auto phi = estimate_phi(ts, 0, 10, 50);
        CHECK(phi.horizon_used == 50);
        // residual ~ 0.7^50 ~ 2e-8 bounds the error of the row average
        CHECK(phi.converged());
        CHECK(phi.weights[0] == doctest::Approx(2.0 / 3).epsilon(1e-7));
        CHECK(phi.weights[1] == doctest::Approx(1.0 / 3).epsilon(1e-7));
    }
    SUBCASE("residual decays like the second eigenvalue 0.7") {
        const double r5 = rank_one_residual(backward_product(ts, 0, 10, 14));
        const double r6 = rank_one_residual(backward_product(ts, 0, 10, 15));
        CHECK(r6 / r5 == doctest::Approx(0.7).epsilon(1e-9));
    }
    SUBCASE("missing iterations") {
        CHECK_THROWS_AS(backward_product(ts, 0, 5, 20), DataUnavailable);
        CHECK_THROWS_AS(estimate_phi(ts, 0, 60, 20), DataUnavailable);
        auto cut = estimate_phi(ts, 0, 60, 20, true);
        CHECK(cut.horizon_used == 9);
        std::vector<MixingTensor> gap{ts[0], ts[2]};
        CHECK_THROWS_AS(backward_product(gap, 0, 10, 12), DataUnavailable);
    }
}

TEST_CASE("doubly stochastic mixing gives the uniform centroid") {
    auto base = topology::metropolis_weights(topology::build_ring(6));
    auto ts = constant_run(base.matrix, 0, 120);
    auto phi = estimate_phi(ts, 0, 0, 100);
    for (double w : phi.weights) CHECK(w == doctest::Approx(1.0 / 6).epsilon(1e-9));
    CHECK(rank_one_residual(Matrix(3, 3, 0.25)) == 0.0);
}

TEST_CASE("centroid and disagreement") {
    using nn::LayeredParams;
    std::vector<LayeredParams> ps{LayeredParams{{{0.0}, {4.0}}}, LayeredParams{{{3.0}, {0.0}}}};
    std::vector<PhiEstimate> phi{{{2.0 / 3, 1.0 / 3}, 0, 0.0}, {{0.5, 0.5}, 0, 0.0}};
    auto c = centroid(ps, phi);
    CHECK(c.layers[0][0] == doctest::Approx(1.0));
    CHECK(c.layers[1][0] == doctest::Approx(2.0));
    // (1 + 4) + (4 + 4)
    CHECK(network_disagreement(ps, c) == doctest::Approx(13.0));
    std::vector<LayeredParams> same(3, ps[0]);
    CHECK(network_disagreement(same, centroid(same, uniform_phi(3, 2))) == 0.0);
    CHECK(uniform_phi(4, 2)[1].weights == std::vector<double>(4, 0.25));
}

TEST_CASE("centroid gradient norm") {
    nn::Architecture arch{{2, 2}, nn::Activation::identity, false};
    data::Dataset ds{Matrix(2, 2), {0, 1}, 2};
    ds.inputs.data() = {1, 0, 0, 1};
    // Zero weights: softmax uniform, grad of row r = (p - e_y) x^T averaged.
    // Entries: +-0.25 on four positions, norm = sqrt(4 * 0.0625) = 0.5.
    CHECK(centroid_grad_norm(arch, nn::zeros_like(arch), ds) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("generalization gap") {
    CHECK(generalization_gap(0.9, 0.8) == doctest::Approx(0.1));
    CHECK(generalization_gap(0.5, 0.5) == 0.0);
    CHECK_THROWS_AS(generalization_gap(1.2, 0.5), InvalidArgument);
}

TEST_CASE("geometric fit") {
    std::vector<double> h, r;
    for (int k = 5; k <= 50; ++k) {
        h.push_back(k);
        r.push_back(3.0 * std::pow(0.9, k));
    }
    auto fit = fit_geometric(h, r);
    CHECK(fit.ratio == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(fit.scale == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    r[3] = 0.0;
    CHECK_THROWS_AS(fit_geometric(h, r), InvalidArgument);
}
