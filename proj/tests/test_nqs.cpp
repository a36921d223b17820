// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>

#include "fd_check.hpp"
#include "flownqs/exact_diag.hpp"
#include "flownqs/nqs.hpp"
#include "flownqs/rng.hpp"
#include "flownqs/trainer.hpp"

using namespace flownqs;

namespace {

Subspace full_basis(int n) {
    Subspace s;
    for (std::uint64_t b = 0; b < (std::uint64_t(1) << n); ++b) s.insert(SpinConfig(b, n));
    return s;
}

Subspace random_subspace(int n, std::size_t size, Rng& rng) {
    Subspace s;
    while (s.size() < size) s.insert(SpinConfig(rng.next_u64() & SpinConfig::mask(n), n));
    return s;
}

}  // namespace

TEST_CASE("amplitudes") {
    Rng rng(11);
    NqsModel m = NqsModel::make(4, 16, 2);
    m.init(rng);
    Subspace s = random_subspace(4, 9, rng);

    SECTION("outputs live in (-1, 1) and are deterministic") {
        Eigen::VectorXd a1 = m.amplitudes(s);
        Eigen::VectorXd a2 = m.amplitudes(s);
        for (Eigen::Index i = 0; i < a1.size(); ++i) {
            CHECK(std::abs(a1[i]) < 1.0);
            CHECK(a1[i] == a2[i]);
        }
    }
    SECTION("zeroed output layer gives all-zero amplitudes") {
        NqsModel z = m;
        z.net.zero_output();
        CHECK(z.amplitudes(s).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("permuting the subspace permutes the outputs identically") {
        Eigen::VectorXd base = m.amplitudes(s);
        Subspace perm;
        for (std::size_t i = s.size(); i-- > 0;) perm.insert(s[i]);
        Eigen::VectorXd flipped = m.amplitudes(perm);
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(flipped[static_cast<Eigen::Index>(s.size() - 1 - i)] ==
                  base[static_cast<Eigen::Index>(i)]);
    }
    SECTION("batch evaluation equals per-config evaluation") {
        Eigen::VectorXd batch = m.amplitudes(s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            Subspace single;
            single.insert(s[i]);
            CHECK(m.amplitudes(single)[0] ==
                  Catch::Approx(batch[static_cast<Eigen::Index>(i)]).epsilon(1e-13));
        }
    }
}

TEST_CASE("target probabilities") {
    Eigen::VectorXd amps(2);
    amps << 1.0, 1.0;
    Eigen::VectorXd p = target_probs(amps);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);

    Eigen::VectorXd amps3(3);
    amps3 << 1.0, 0.0, 0.0;
    Eigen::VectorXd p3 = target_probs(amps3);
    CHECK(p3[0] == 1.0);
    CHECK(p3[1] == 0.0);
    CHECK(p3[2] == 0.0);

    SECTION("invariant under a global sign flip") {
        Rng rng(5);
        Eigen::VectorXd a(7);
        for (Eigen::Index i = 0; i < 7; ++i) a[i] = rng.normal();
        Eigen::VectorXd pa = target_probs(a);
        Eigen::VectorXd pb = target_probs(Eigen::VectorXd(-a));
        for (Eigen::Index i = 0; i < 7; ++i) CHECK(pa[i] == pb[i]);
    }
    SECTION("sums to 1 with nonnegative entries") {
        Rng rng(6);
        for (int trial = 0; trial < 25; ++trial) {
            Eigen::VectorXd a(1 + static_cast<Eigen::Index>(rng.below(12)));
            for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, 0.3);
            if (a.squaredNorm() < 1e-20) continue;
            Eigen::VectorXd p = target_probs(a);
            CHECK(std::abs(p.sum() - 1.0) < 1e-12);
            CHECK(p.minCoeff() >= 0.0);
        }
    }
    SECTION("all-zero amplitudes are a degenerate-state error") {
        CHECK_THROWS_AS(target_probs(Eigen::VectorXd::Zero(4)), DegenerateStateError);
    }
}

TEST_CASE("variational energy") {
    InteractionGraph g2 = build_ring_graph(2, 1, 1.0);
    SECTION("a 1x1 subspace returns the diagonal element") {
        Rng rng(21);
        InteractionGraph g = build_ring_graph(5, 2, 1.3);
        NqsModel m = NqsModel::make(5, 8, 2);
        m.init(rng);
        Subspace s;
        s.insert(SpinConfig(SpinConfig::mask(5), 5));
        CHECK(variational_energy(m, s, g) ==
              Catch::Approx(diagonal_element(s[0], g)).margin(1e-13));
    }
    SECTION("the exact ground vector gives -sqrt(5) on the full 2-spin basis") {
        Subspace s = full_basis(2);
        SymmetricSparse h = subspace_hamiltonian_sparse(s, g2);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(subspace_hamiltonian(s, g2));
        ad::Tape t;
        ad::Tensor psi0(4, 1);
        for (int i = 0; i < 4; ++i) psi0.at(i, 0) = es.eigenvectors()(i, 0);
        ad::Var e = rayleigh_quotient_tape(t, t.leaf(psi0), h);
        CHECK(t.val(e).item() == Catch::Approx(-std::sqrt(5.0)).margin(1e-9));
    }
    SECTION("theta gradient matches finite differences on a width-8 network") {
        Rng rng(23);
        InteractionGraph g = build_ring_graph(3, 1, 1.0);
        NqsModel m = NqsModel::make(3, 8, 2);
        m.init(rng);
        Subspace s = random_subspace(3, 5, rng);
        SymmetricSparse h = subspace_hamiltonian_sparse(s, g);

        std::vector<ad::Tensor> params;
        for (const ad::Tensor* p : m.params()) params.push_back(*p);
        auto value = [&](const std::vector<ad::Tensor>& ps) {
            NqsModel mm = m;
            auto ptrs = mm.params();
            for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = ps[i];
            return variational_energy(mm, s, g);
        };
        ad::Tape t;
        std::vector<ad::Var> leaves;
        for (const ad::Tensor& p : params) leaves.push_back(t.leaf(p));
        ad::Var e = variational_energy_tape(t, m, s, h, leaves);
        auto grads = t.backward(e);
        std::vector<ad::Tensor> analytic;
        for (ad::Var v : leaves) analytic.push_back(t.grad(grads, v));
        auto numeric = fd::gradient(value, params);
        CHECK(fd::max_rel_error(analytic, numeric) < 1e-4);
    }
    SECTION("degenerate amplitudes raise the documented error") {
        NqsModel m = NqsModel::make(3, 8, 2);
        m.net.zero_output();  // hidden layers untouched: amplitudes identically zero
        Subspace s = full_basis(3);
        CHECK_THROWS_AS(variational_energy(m, s, build_ring_graph(3, 1, 1.0)),
                        DegenerateStateError);
    }
}

TEST_CASE("variational bound holds for random subspaces and parameters") {
    Rng rng(31);
    InteractionGraph g = build_ring_graph(6, 2, 1.0);
    double e0 = dense_ground_state(g).energy;
    for (int trial = 0; trial < 20; ++trial) {
        NqsModel m = NqsModel::make(6, 12, 2);
        m.init(rng);
        Subspace s = random_subspace(6, 2 + rng.below(40), rng);
        CHECK(variational_energy(m, s, g) >= e0 - 1e-9);
    }
}

TEST_CASE("minimizing over the fixed full basis reaches the exact energy") {
    // Isolates the NQS optimizer from the sampler: n = 4 full basis, 2000
    // Adam steps with the inference schedule must land within 0.1% of ED.
    Rng rng(41);
    InteractionGraph g = build_ring_graph(4, 1, 1.0);
    double e0 = dense_ground_state(g).energy;
    Subspace s = full_basis(4);
    SymmetricSparse h = subspace_hamiltonian_sparse(s, g);

    NqsModel m = NqsModel::make(4, 32, 2);
    m.init(rng);
    ad::AdamState state;
    PlateauScheduler sched(1e-3, 0.5, 20);
    double lr = 1e-3;
    std::vector<ad::Tensor*> params = m.params();
    for (int it = 0; it < 2000; ++it) {
        ad::Tape t;
        std::vector<ad::Var> leaves = train_detail::make_leaves(t, m.params());
        ad::Var e = variational_energy_tape(t, m, s, h, leaves);
        auto grads = t.backward(e);
        std::vector<ad::Tensor> leaf_grads;
        train_detail::accumulate_leaf_grads(leaf_grads, t, grads, leaves);
        ad::clip_gradient_norm(leaf_grads, 1000.0);
        ad::adam_step(params, leaf_grads, state, lr);
        lr = sched.observe(t.val(e).item());
    }
    double final_e = variational_energy(m, s, g);
    CAPTURE(final_e, e0);
    CHECK(std::abs(percentage_error(final_e, e0)) < 0.1);
    CHECK(final_e >= e0 - 1e-9);
}
