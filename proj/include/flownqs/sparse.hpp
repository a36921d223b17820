// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace flownqs {

/// Symmetric sparse matrix stored as a diagonal plus strictly-upper triplets.
/// This is the natural shape of a spin Hamiltonian restricted to a sampled
/// subspace: one diagonal entry per basis state and one off-diagonal entry
/// per single-flip pair inside the subspace.
struct SymmetricSparse {
    std::size_t dim = 0;
    std::vector<double> diag;
    struct Entry {
        std::uint32_t i, j;  // i < j
        double value;
    };
    std::vector<Entry> offdiag;

    /// y = A x.
    void apply(const double* x, double* y) const {
        for (std::size_t k = 0; k < dim; ++k) y[k] = diag[k] * x[k];
        for (const Entry& e : offdiag) {
            y[e.i] += e.value * x[e.j];
            y[e.j] += e.value * x[e.i];
        }
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        if (x.size() != dim) throw std::invalid_argument("SymmetricSparse::apply: size mismatch");
        std::vector<double> y(dim);
        apply(x.data(), y.data());
        return y;
    }
};

}  // namespace flownqs
