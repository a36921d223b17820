// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file nqs.hpp
 * @brief Real-valued neural quantum state: a dense network mapping a spin
 *        configuration (encoded +-1) to an amplitude in (-1, 1), plus the
 *        subspace energy expectation recorded for reverse-mode gradients.
 */

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "flownqs/autodiff.hpp"
#include "flownqs/mlp.hpp"
#include "flownqs/rng.hpp"
#include "flownqs/spin.hpp"

namespace flownqs {

/// Thrown when an amplitude vector has (numerically) zero norm; the trainer
/// reacts by re-initializing the model.
struct DegenerateStateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kDegenerateNormSq = 1e-30;

/// Spin configurations as network input rows, spins encoded as -1/+1.
inline ad::RowMat encode_configs(const Subspace& s) {
    if (s.empty()) throw std::invalid_argument("encode_configs: empty subspace");
    ad::RowMat x(s.size(), s[0].n);
    for (std::size_t r = 0; r < s.size(); ++r)
        for (int i = 0; i < s[r].n; ++i)
            x(static_cast<Eigen::Index>(r), i) = static_cast<double>(s[r].spin(i));
    return x;
}

struct NqsModel {
    int n = 0;
    Mlp net;

    static NqsModel make(int n, std::size_t hidden = 512, std::size_t n_hidden = 4) {
        if (n < 1) throw std::invalid_argument("NqsModel: need n >= 1");
        NqsModel m;
        m.n = n;
        m.net = Mlp::make(static_cast<std::size_t>(n), hidden, n_hidden, 1);
        return m;
    }

    /// Kaiming hidden layers; small random (not zero) output weights so the
    /// initial amplitudes are nonzero.
    void init(Rng& rng) {
        net.init_hidden(rng);
        net.init_output_uniform(rng, 1e-2);
    }

    std::vector<ad::Tensor*> params() { return net.params(); }
    std::vector<const ad::Tensor*> params() const { return net.params(); }

    /// psi_theta(x) for every config in the subspace, batched.
    Eigen::VectorXd amplitudes(const Subspace& s) const {
        ad::RowMat out = net.apply(encode_configs(s));
        return Eigen::VectorXd(out.col(0));
    }

    /// Tape version; `leaves` holds params() in order starting at `offset`.
    ad::Var amplitudes_tape(ad::Tape& t, const Subspace& s, const std::vector<ad::Var>& leaves,
                            std::size_t offset = 0) const {
        ad::RowMat x = encode_configs(s);
        ad::Tensor xt(static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(x.cols()));
        ad::mat(xt) = x;
        return net.apply_tape(t, t.constant(std::move(xt)), leaves, offset);
    }
};

/// p_theta(x) = psi(x)^2 / sum psi^2.
inline Eigen::VectorXd target_probs(const Eigen::VectorXd& amps) {
    double nrm2 = amps.squaredNorm();
    if (nrm2 < kDegenerateNormSq)
        throw DegenerateStateError("target_probs: all-zero amplitude vector");
    return (amps.array().square() / nrm2).matrix();
}

/// Rayleigh quotient of a (constant) sparse subspace Hamiltonian at a tape
/// amplitude vector: (psi^T H psi) / (psi^T psi). h must outlive the tape.
inline ad::Var rayleigh_quotient_tape(ad::Tape& t, ad::Var psi, const SymmetricSparse& h) {
    ad::Var hpsi = t.spmv(h, psi);
    ad::Var num = t.sum(t.mul(psi, hpsi));
    ad::Var den = t.sum(t.mul(psi, psi));
    if (t.val(den).item() < kDegenerateNormSq)
        throw DegenerateStateError("variational_energy: zero-norm amplitude vector");
    return t.div(num, den);
}

/// Differentiable subspace energy E[psi_theta]; records the network forward
/// pass and the quotient on `t` so backward() yields dE/dtheta.
inline ad::Var variational_energy_tape(ad::Tape& t, const NqsModel& model, const Subspace& s,
                                       const SymmetricSparse& h,
                                       const std::vector<ad::Var>& leaves,
                                       std::size_t offset = 0) {
    if (s.empty()) throw std::invalid_argument("variational_energy: empty subspace");
    ad::Var psi = model.amplitudes_tape(t, s, leaves, offset);
    return rayleigh_quotient_tape(t, psi, h);
}

/// Value-only convenience path.
inline double variational_energy(const NqsModel& model, const Subspace& s,
                                 const InteractionGraph& g) {
    Eigen::VectorXd amps = model.amplitudes(s);
    if (amps.squaredNorm() < kDegenerateNormSq)
        throw DegenerateStateError("variational_energy: zero-norm amplitude vector");
    SymmetricSparse h = subspace_hamiltonian_sparse(s, g);
    std::vector<double> av(amps.data(), amps.data() + amps.size());
    return energy_expectation(h, av);
}

}  // namespace flownqs
