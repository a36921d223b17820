// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file spin.hpp
 * @brief Transverse-field Ising Hamiltonian on an interaction graph:
 *        H = -V sum_{{i,j} in E} sz_i sz_j - sum_i sx_i.
 *
 * Basis states are packed bit strings (bit = 1 means spin up, eigenvalue +1).
 * The sz-sz part is diagonal in this basis; the transverse field connects a
 * state to its N single-spin-flip partners with amplitude -1.
 */

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flownqs/sparse.hpp"

namespace flownqs {

/// One basis state of n spins packed into a 64-bit word; bit i = spin i,
/// 0 = down, 1 = up. Bits at positions >= n are always zero.
struct SpinConfig {
    std::uint64_t bits = 0;
    int n = 0;

    SpinConfig() = default;
    SpinConfig(std::uint64_t bits_, int n_) : bits(bits_ & mask(n_)), n(n_) {
        if (n_ < 1 || n_ > 64) throw std::invalid_argument("SpinConfig: n must be in [1,64]");
    }

    static std::uint64_t mask(int n) {
        return n >= 64 ? ~std::uint64_t(0) : ((std::uint64_t(1) << n) - 1);
    }

    /// Eigenvalue of sz at site i: -1 (down) or +1 (up).
    int spin(int i) const { return ((bits >> i) & 1u) ? +1 : -1; }
    bool up(int i) const { return ((bits >> i) & 1u) != 0; }

    SpinConfig flipped(int i) const { return SpinConfig(bits ^ (std::uint64_t(1) << i), n); }

    bool operator==(const SpinConfig& o) const { return bits == o.bits && n == o.n; }

    std::string to_string() const {
        std::string s(static_cast<std::size_t>(n), '0');
        for (int i = 0; i < n; ++i)
            if (up(i)) s[static_cast<std::size_t>(i)] = '1';
        return s;
    }
};

struct SpinConfigHash {
    std::size_t operator()(const SpinConfig& c) const {
        return std::hash<std::uint64_t>()(c.bits * 0x9e3779b97f4a7c15ULL + std::uint64_t(c.n));
    }
};

/// Undirected interaction graph with a common coupling strength.
struct InteractionGraph {
    int n = 0;
    std::vector<std::pair<int, int>> edges;  // i < j, no duplicates, no self-loops
    double v = 1.0;
};

/// Ring of n sites under periodic boundary conditions with all pairs at ring
/// distance 1..l coupled. Antipodal pairs (even n, l = n/2) are inserted once,
/// so |edges| = n*l for l < n/2 and n*(l-1) + n/2 for l = n/2.
inline InteractionGraph build_ring_graph(int n, int l, double v) {
    if (n < 2) throw std::invalid_argument("build_ring_graph: need n >= 2");
    if (l < 1 || l > n / 2)
        throw std::invalid_argument("build_ring_graph: interaction length " + std::to_string(l) +
                                    " outside [1, floor(n/2)] for n = " + std::to_string(n));
    InteractionGraph g;
    g.n = n;
    g.v = v;
    for (int d = 1; d <= l; ++d) {
        // For d = n/2 (even n) the pair {i, i+d} repeats once i passes n/2.
        int count = (2 * d == n) ? n / 2 : n;
        for (int i = 0; i < count; ++i) {
            int j = (i + d) % n;
            g.edges.emplace_back(std::min(i, j), std::max(i, j));
        }
    }
    return g;
}

/// Diagonal matrix element <x|H|x> = -v * sum_edges s_i s_j.
inline double diagonal_element(const SpinConfig& x, const InteractionGraph& g) {
    if (x.n != g.n)
        throw std::invalid_argument("diagonal_element: spin count " + std::to_string(x.n) +
                                    " != graph size " + std::to_string(g.n));
    long aligned = 0;
    for (const auto& [i, j] : g.edges)
        aligned += (((x.bits >> i) ^ (x.bits >> j)) & 1u) ? -1 : +1;
    return -g.v * static_cast<double>(aligned);
}

/// The n single-spin-flip partners of x; each carries amplitude -1 from the
/// transverse-field term. No other off-diagonal element is nonzero.
inline std::vector<std::pair<SpinConfig, double>> offdiagonal_neighbors(const SpinConfig& x) {
    std::vector<std::pair<SpinConfig, double>> out;
    out.reserve(static_cast<std::size_t>(x.n));
    for (int i = 0; i < x.n; ++i) out.emplace_back(x.flipped(i), -1.0);
    return out;
}

/// Ordered, duplicate-free collection of basis states with O(1) membership.
class Subspace {
public:
    Subspace() = default;

    /// Returns true if the config was new and inserted.
    bool insert(const SpinConfig& c) {
        if (!configs_.empty() && c.n != configs_.front().n)
            throw std::invalid_argument("Subspace: mixed spin counts");
        auto [it, fresh] = index_.emplace(c, configs_.size());
        if (fresh) configs_.push_back(c);
        return fresh;
    }

    std::size_t size() const { return configs_.size(); }
    bool empty() const { return configs_.empty(); }
    const SpinConfig& operator[](std::size_t k) const { return configs_[k]; }
    const std::vector<SpinConfig>& configs() const { return configs_; }

    /// Position of c, or npos when absent.
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t find(const SpinConfig& c) const {
        auto it = index_.find(c);
        return it == index_.end() ? npos : it->second;
    }

private:
    std::vector<SpinConfig> configs_;
    std::unordered_map<SpinConfig, std::size_t, SpinConfigHash> index_;
};

/// H restricted to the subspace, in sparse symmetric form. Off-diagonal
/// entries exist only between members that differ by exactly one flip; each
/// row is found by hashing the n flipped partners rather than scanning pairs.
inline SymmetricSparse subspace_hamiltonian_sparse(const Subspace& s, const InteractionGraph& g) {
    if (s.empty()) throw std::invalid_argument("subspace_hamiltonian: empty subspace");
    SymmetricSparse h;
    h.dim = s.size();
    h.diag.resize(h.dim);
    for (std::size_t a = 0; a < s.size(); ++a) {
        h.diag[a] = diagonal_element(s[a], g);
        for (int i = 0; i < s[a].n; ++i) {
            std::size_t b = s.find(s[a].flipped(i));
            if (b != Subspace::npos && a < b)
                h.offdiag.push_back({static_cast<std::uint32_t>(a),
                                     static_cast<std::uint32_t>(b), -1.0});
        }
    }
    return h;
}

/// Dense k x k subspace Hamiltonian; exactly symmetric by construction.
inline Eigen::MatrixXd subspace_hamiltonian(const Subspace& s, const InteractionGraph& g) {
    SymmetricSparse h = subspace_hamiltonian_sparse(s, g);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h.dim),
                                              static_cast<Eigen::Index>(h.dim));
    for (std::size_t a = 0; a < h.dim; ++a) m(a, a) = h.diag[a];
    for (const auto& e : h.offdiag) {
        m(e.i, e.j) = e.value;
        m(e.j, e.i) = e.value;
    }
    return m;
}

/// Rayleigh quotient (psi^T H psi) / (psi^T psi) on the subspace.
inline double energy_expectation(const Eigen::MatrixXd& h_sub, const Eigen::VectorXd& amplitudes) {
    if (h_sub.rows() != amplitudes.size())
        throw std::invalid_argument("energy_expectation: dimension mismatch");
    double nrm2 = amplitudes.squaredNorm();
    if (nrm2 == 0.0) throw std::invalid_argument("energy_expectation: zero-norm amplitude vector");
    return amplitudes.dot(h_sub * amplitudes) / nrm2;
}

inline double energy_expectation(const SymmetricSparse& h_sub, const std::vector<double>& amps) {
    if (h_sub.dim != amps.size())
        throw std::invalid_argument("energy_expectation: dimension mismatch");
    double nrm2 = 0.0;
    for (double a : amps) nrm2 += a * a;
    if (nrm2 == 0.0) throw std::invalid_argument("energy_expectation: zero-norm amplitude vector");
    std::vector<double> hx = h_sub.apply(amps);
    double num = 0.0;
    for (std::size_t i = 0; i < amps.size(); ++i) num += amps[i] * hx[i];
    return num / nrm2;
}

}  // namespace flownqs
