// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file exact_diag.hpp
 * @brief Reference ground-state energies: dense eigensolver up to n = 14,
 *        matrix-free Lanczos with full reorthogonalization up to n = 20.
 */

#pragma once

#include <lapacke.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flownqs/rng.hpp"
#include "flownqs/spin.hpp"

namespace flownqs {

struct GroundStateResult {
    double energy = 0.0;
    double residual_norm = 0.0;  // ||H psi - E psi|| / ||psi||
    int iterations = 0;
    bool converged = true;
};

namespace ed_detail {

/// Diagonal of H over the full 2^n basis.
inline std::vector<double> full_diagonal(const InteractionGraph& g) {
    std::size_t dim = std::size_t(1) << g.n;
    std::vector<double> diag(dim);
    for (std::size_t i = 0; i < dim; ++i) diag[i] = diagonal_element(SpinConfig(i, g.n), g);
    return diag;
}

/// y = H x without materializing the 2^n x 2^n matrix. The transverse-field
/// term couples index i to i^(1<<k) with amplitude -1.
inline void apply_full_hamiltonian(const InteractionGraph& g, const std::vector<double>& diag,
                                   const double* x, double* y) {
    std::size_t dim = std::size_t(1) << g.n;
    for (std::size_t i = 0; i < dim; ++i) {
        double acc = diag[i] * x[i];
        for (int k = 0; k < g.n; ++k) acc -= x[i ^ (std::size_t(1) << k)];
        y[i] = acc;
    }
}

}  // namespace ed_detail

/// Lowest eigenpair of the explicitly assembled 2^n x 2^n Hamiltonian.
/// Fails for n > 14 (dense storage grows as 4^n).
inline GroundStateResult dense_ground_state(const InteractionGraph& g) {
    if (g.n > 14)
        throw std::invalid_argument("dense_ground_state: n = " + std::to_string(g.n) +
                                    " exceeds the dense limit of 14");
    const lapack_int dim = lapack_int(1) << g.n;
    std::vector<double> diag = ed_detail::full_diagonal(g);

    std::vector<double> a(static_cast<std::size_t>(dim) * dim, 0.0);
    for (lapack_int i = 0; i < dim; ++i) {
        a[static_cast<std::size_t>(i) * dim + i] = diag[static_cast<std::size_t>(i)];
        for (int k = 0; k < g.n; ++k) {
            lapack_int j = i ^ (lapack_int(1) << k);
            a[static_cast<std::size_t>(j) * dim + i] = -1.0;  // column-major (i,j)
        }
    }

    std::vector<double> w(static_cast<std::size_t>(dim));
    std::vector<double> z(static_cast<std::size_t>(dim));
    std::vector<lapack_int> isuppz(2);
    lapack_int found = 0;
    lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', dim, a.data(), dim, 0.0,
                                     0.0, 1, 1, 0.0, &found, w.data(), z.data(), dim,
                                     isuppz.data());
    if (info != 0 || found < 1)
        throw std::runtime_error("dense_ground_state: dsyevr failed, info = " +
                                 std::to_string(info));

    GroundStateResult res;
    res.energy = w[0];
    std::vector<double> hz(static_cast<std::size_t>(dim));
    ed_detail::apply_full_hamiltonian(g, diag, z.data(), hz.data());
    double rsq = 0.0, nsq = 0.0;
    for (lapack_int i = 0; i < dim; ++i) {
        double r = hz[static_cast<std::size_t>(i)] - res.energy * z[static_cast<std::size_t>(i)];
        rsq += r * r;
        nsq += z[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
    }
    res.residual_norm = std::sqrt(rsq / nsq);
    res.iterations = 1;
    return res;
}

/// Lanczos with full reorthogonalization and a seeded random start vector.
/// Never materializes H; suitable up to n = 20. On non-convergence the best
/// estimate is returned with converged = false.
inline GroundStateResult lanczos_ground_state(const InteractionGraph& g, double tol = 1e-10,
                                              int max_iter = 500, std::uint64_t seed = 0) {
    if (g.n > 20)
        throw std::invalid_argument("lanczos_ground_state: n = " + std::to_string(g.n) +
                                    " exceeds the matrix-free limit of 20");
    const std::size_t dim = std::size_t(1) << g.n;
    std::vector<double> diag = ed_detail::full_diagonal(g);

    Rng rng(derive_seed(seed, 0x1a9c50ULL, 57));
    std::vector<std::vector<double>> basis;
    basis.emplace_back(dim);
    {
        double nrm = 0.0;
        for (double& x : basis[0]) {
            x = rng.normal();
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        for (double& x : basis[0]) x /= nrm;
    }

    std::vector<double> alpha, beta;
    std::vector<double> w(dim);
    Eigen::VectorXd ritz;  // ground eigenvector of the tridiagonal matrix

    auto tridiag_ground = [&](double& theta) {
        Eigen::Index m = static_cast<Eigen::Index>(alpha.size());
        Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
        Eigen::VectorXd e(m > 1 ? m - 1 : 0);
        for (Eigen::Index i = 0; i + 1 < m; ++i) e[i] = beta[static_cast<std::size_t>(i)];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
        es.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
        theta = es.eigenvalues()(0);
        ritz = es.eigenvectors().col(0);
    };

    GroundStateResult res;
    double theta = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const std::vector<double>& q = basis.back();
        ed_detail::apply_full_hamiltonian(g, diag, q.data(), w.data());
        double a = 0.0;
        for (std::size_t i = 0; i < dim; ++i) a += q[i] * w[i];
        alpha.push_back(a);

        // Full reorthogonalization against every Lanczos vector kept so far.
        for (const auto& qi : basis) {
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += qi[i] * w[i];
            for (std::size_t i = 0; i < dim; ++i) w[i] -= proj * qi[i];
        }

        double b = 0.0;
        for (std::size_t i = 0; i < dim; ++i) b += w[i] * w[i];
        b = std::sqrt(b);

        tridiag_ground(theta);
        res.iterations = it + 1;
        // Residual of the Ritz pair is beta_m * |last component|.
        double est = b * std::abs(ritz(ritz.size() - 1));
        bool breakdown = b < 1e-14 || basis.size() == dim;
        if (est <= tol || breakdown || it + 1 == max_iter) {
            // Assemble the Ritz vector and measure the true residual.
            std::vector<double> psi(dim, 0.0);
            for (std::size_t k = 0; k < basis.size(); ++k) {
                double c = ritz(static_cast<Eigen::Index>(k));
                const std::vector<double>& qk = basis[k];
                for (std::size_t i = 0; i < dim; ++i) psi[i] += c * qk[i];
            }
            std::vector<double>& hpsi = w;
            ed_detail::apply_full_hamiltonian(g, diag, psi.data(), hpsi.data());
            double rsq = 0.0, nsq = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                double r = hpsi[i] - theta * psi[i];
                rsq += r * r;
                nsq += psi[i] * psi[i];
            }
            res.energy = theta;
            res.residual_norm = std::sqrt(rsq / nsq);
            res.converged = res.residual_norm <= tol || breakdown;
            if (res.converged || it + 1 == max_iter) return res;
        }
        basis.emplace_back(dim);
        for (std::size_t i = 0; i < dim; ++i) basis.back()[i] = w[i] / b;
        beta.push_back(b);
    }
    res.converged = false;
    return res;
}

/// (e_method - e_true) / |e_true| * 100.
inline double percentage_error(double e_method, double e_true) {
    if (e_true == 0.0) throw std::invalid_argument("percentage_error: e_true is zero");
    return (e_method - e_true) / std::abs(e_true) * 100.0;
}

}  // namespace flownqs
