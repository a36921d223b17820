// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file sampler.hpp
 * @brief Orthant discretization of flow samples, unique-sample subspaces,
 *        and the Monte Carlo region-probability estimator.
 *
 * Each basis state x owns one orthant R_x of the hypercube (-1,1)^n, with
 * Vol(R_x) = 1. Points for the region estimate are drawn from an isotropic
 * normal at the orthant center (+-0.5 coordinates, sigma = 0.1), which sits
 * five standard deviations from every orthant boundary.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "flownqs/autodiff.hpp"
#include "flownqs/flow.hpp"
#include "flownqs/rng.hpp"
#include "flownqs/spin.hpp"

namespace flownqs {

struct RegionSpec {
    double sigma = 0.1;
    int n_mc = 25;
};

/// Sign map y -> x: bit i = 1 iff y_i > 0, with the tie sign(0) -> up so the
/// map is total and deterministic.
inline SpinConfig discretize(const Eigen::RowVectorXd& y) {
    std::uint64_t bits = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] >= 0.0) bits |= std::uint64_t(1) << i;
    return SpinConfig(bits, static_cast<int>(y.size()));
}

/// Orthant center of x: coordinate i is +0.5 for spin up, -0.5 for down.
inline Eigen::RowVectorXd region_center(const SpinConfig& x) {
    Eigen::RowVectorXd c(x.n);
    for (int i = 0; i < x.n; ++i) c[i] = x.up(i) ? 0.5 : -0.5;
    return c;
}

/// Result of drawing and deduplicating flow samples: the subspace S plus the
/// raw/unique counts consumed by the 90% convergence rule.
struct SampleSet {
    Subspace subspace;
    std::size_t raw_count = 0;
    std::size_t unique_count = 0;
};

/// Draws `target_size` posterior samples, discretizes them, and keeps unique
/// configs in first-seen order. A small unique count is data, not an error.
inline SampleSet draw_subspace(const FlowModel& flow, const Prior& prior,
                               std::size_t target_size, Rng& rng) {
    if (target_size < 1) throw std::invalid_argument("draw_subspace: target_size must be >= 1");
    ad::RowMat z = prior.sample(target_size, rng);
    ad::RowMat y;
    flow.forward(z, &y, nullptr);
    SampleSet out;
    out.raw_count = target_size;
    for (Eigen::Index r = 0; r < y.rows(); ++r) out.subspace.insert(discretize(y.row(r)));
    out.unique_count = out.subspace.size();
    return out;
}

/// n_mc isotropic normal draws centered on the region of x. Draws that land
/// outside R_x (wrong orthant or outside the cube) are rejected and redrawn;
/// at five sigma this is a sub-1e-6 event per draw.
inline ad::RowMat region_mc_points(const SpinConfig& x, const RegionSpec& spec, Rng& rng) {
    Eigen::RowVectorXd center = region_center(x);
    ad::RowMat pts(spec.n_mc, x.n);
    for (int p = 0; p < spec.n_mc; ++p) {
        for (;;) {
            bool ok = true;
            for (int i = 0; i < x.n; ++i) {
                double v = rng.normal(center[i], spec.sigma);
                pts(p, i) = v;
                if (std::abs(v) >= 1.0 || (v >= 0.0) != x.up(i)) ok = false;
            }
            if (ok) break;
        }
    }
    return pts;
}

/// Monte Carlo estimate of the region probability,
///   p_hat(x) = Vol(R_x)/n_mc * sum_{y in M_x} p_Y(y),  Vol(R_x) = 1.
/// `density` evaluates p_Y at a single point. The mean is computed relative
/// to the first sample so constant densities reproduce exactly.
template <class Density>
inline double mc_region_prob(const Density& density, const SpinConfig& x, const RegionSpec& spec,
                             Rng& rng) {
    ad::RowMat pts = region_mc_points(x, spec, rng);
    double base = density(Eigen::RowVectorXd(pts.row(0)));
    double acc = 0.0;
    for (int p = 1; p < spec.n_mc; ++p)
        acc += density(Eigen::RowVectorXd(pts.row(p))) - base;
    return base + acc / static_cast<double>(spec.n_mc);
}

/// Posterior density of a flow, for use with mc_region_prob.
struct FlowDensity {
    const FlowModel& flow;
    const Prior& prior;
    double operator()(const Eigen::RowVectorXd& y) const {
        ad::RowMat row(1, y.size());
        row.row(0) = y;
        return std::exp(flow.posterior_logprob(prior, row)[0]);
    }
};

inline double mc_region_prob(const FlowModel& flow, const Prior& prior, const SpinConfig& x,
                             const RegionSpec& spec, Rng& rng) {
    return mc_region_prob(FlowDensity{flow, prior}, x, spec, rng);
}

}  // namespace flownqs
