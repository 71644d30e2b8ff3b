// Copyright 2026 The qfilter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qfilter/hilbert.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace qfilter {
namespace {

TEST(Hilbert, AdjointIsInvolutionAndTraceIsCyclic) {
    testutil::Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const Operator x = rng.matrix(4);
        const Operator y = rng.matrix(4);
        EXPECT_EQ(adjoint(adjoint(x)), x);
        EXPECT_NEAR(std::abs(trace(x * y) - trace(y * x)), 0.0, 1e-12);
    }
}

TEST(Hilbert, ExpectationAndPurityMatchDirectProducts) {
    testutil::Rng rng(2);
    const Operator x = rng.matrix(3);
    const Operator rho = rng.density(3);
    EXPECT_NEAR(std::abs(expectation(x, rho) - (x * rho).trace()), 0.0, 1e-13);
    EXPECT_NEAR(purity(rho), (rho * rho).trace().real(), 1e-13);
}

TEST(Hilbert, SpectralFloorExamples) {
    EXPECT_NEAR(spectral_floor(Operator::Identity(3, 3)), 1.0, 1e-14);
    Operator d = Operator::Zero(2, 2);
    d(0, 0) = 2.0;
    EXPECT_NEAR(spectral_floor(d), 0.0, 1e-14);
    EXPECT_NEAR(spectral_floor(ops::sigma3()), -1.0, 1e-14);
    EXPECT_THROW(spectral_floor(ops::sigma_plus()), ContractViolation);
}

TEST(Hilbert, ExpmIdentityAtZeroTime) {
    testutil::Rng rng(3);
    const Operator x = rng.matrix(2);
    const Operator a = rng.matrix(2);
    LinearMap g(2, [a](const Operator &y) { return Operator(a * y); });
    EXPECT_EQ(expm_propagate(g, x, 0.0), x);
    EXPECT_THROW(expm_propagate(g, x, -1.0), ContractViolation);
}

TEST(Hilbert, ExpmScalarDamping) {
    testutil::Rng rng(4);
    const Operator x = rng.matrix(3);
    LinearMap g(3, [](const Operator &y) { return Operator(-y); });
    EXPECT_LT((expm_propagate(g, x, 1.0) - std::exp(-1.0) * x).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Hilbert, ExpmNilpotentGeneratorTruncatesSeries) {
    Operator n = Operator::Zero(2, 2);
    n(0, 1) = 1.7;
    testutil::Rng rng(5);
    const Operator x = rng.matrix(2);
    LinearMap g(2, [n](const Operator &y) { return Operator(n * y); });
    const double dt = 0.8;
    const Operator expected = (Operator::Identity(2, 2) + dt * n) * x;
    EXPECT_LT((expm_propagate(g, x, dt) - expected).cwiseAbs().maxCoeff(), 1e-13);
}

// Runs the same properties on the dense path and the RK4 path.
class ExpmPaths : public ::testing::TestWithParam<Eigen::Index> {};

TEST_P(ExpmPaths, LinearSemigroupAndHermiticity) {
    const Eigen::Index d = GetParam();
    testutil::Rng rng(6 + d);
    const Operator a = 0.3 * rng.matrix(d);
    const Operator h = rng.hermitian(d);
    LinearMap sandwich(d, [a](const Operator &y) { return Operator(a * y * a.adjoint()); });
    LinearMap lind(d, [a, h](const Operator &y) {
        return Operator(-kI * commutator(h, y) + a * y * a.adjoint() - 0.5 * anticommutator(a.adjoint() * a, y));
    });
    const Operator x = rng.matrix(d), y = rng.matrix(d);
    const Complex al(0.3, -1.2), be(-0.7, 0.4);
    const Operator lhs = expm_propagate(lind, al * x + be * y, 0.7);
    const Operator rhs = al * expm_propagate(lind, x, 0.7) + be * expm_propagate(lind, y, 0.7);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);

    const Operator once = expm_propagate(lind, x, 0.9);
    const Operator twice = expm_propagate(lind, expm_propagate(lind, x, 0.4), 0.5);
    EXPECT_LT((once - twice).cwiseAbs().maxCoeff(), 1e-8);

    const Operator herm = expm_propagate(sandwich, rng.hermitian(d), 0.6);
    EXPECT_LT(hermiticity_error(herm), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(DenseAndRk4, ExpmPaths, ::testing::Values(Eigen::Index(4), Eigen::Index(20)));

TEST(Hilbert, OverflowIsReported) {
    LinearMap g(2, [](const Operator &y) { return Operator(1e6 * y); });
    EXPECT_THROW(expm_propagate(g, Operator::Identity(2, 2), 1e3), NumericalError);
}

TEST(Hilbert, VecUnvecRoundTrip) {
    testutil::Rng rng(7);
    const Operator a = rng.matrix(3), x = rng.matrix(3), b = rng.matrix(3);
    Eigen::MatrixXcd kron(9, 9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) kron.block(3 * i, 3 * j, 3, 3) = b.transpose()(i, j) * a;
    EXPECT_LT((unvec(kron * vec(x), 3) - a * x * b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Hilbert, PauliAlgebra) {
    using namespace ops;
    EXPECT_LT((sigma_plus() * sigma_minus() - 0.5 * (sigma0() + sigma3())).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((commutator(sigma1(), sigma2()) - 2.0 * kI * sigma3()).cwiseAbs().maxCoeff(), 1e-15);
    // sigma_- maps the excited state (index 0) to the ground state (index 1).
    EXPECT_LT((sigma_minus() * basis(2, 0) - basis(2, 1)).norm(), 1e-15);
}

TEST(Hilbert, FockOperators) {
    const Operator a = ops::annihilation(6);
    EXPECT_NEAR((a.adjoint() * a).diagonal().real()(4), 4.0, 1e-14);
    const PureState c = ops::coherent(40, Complex(0.8, -0.3));
    EXPECT_NEAR(std::abs(c.dot(ops::annihilation(40) * c) - Complex(0.8, -0.3)), 0.0, 1e-10);
    const Operator th = ops::thermal(60, 0.4);
    EXPECT_NEAR(expectation(ops::annihilation(60).adjoint() * ops::annihilation(60), th).real(), 0.4, 1e-10);
    const Operator d = ops::displacement(40, Complex(0.5, 0.2));
    EXPECT_LT((d * ops::basis(40, 0) - ops::coherent(40, Complex(0.5, 0.2))).norm(), 1e-8);
}

}  // namespace
}  // namespace qfilter
