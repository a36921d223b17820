// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file flow.hpp
 * @brief RealNVP-style normalizing flow on [-1,1]^n with exact log-density.
 *
 * Architecture: a bimodal Gaussian prior, four affine coupling layers whose
 * scale/translation nets share one MLP each (two tanh-bounded output halves),
 * and a final elementwise tanh that confines samples to the open hypercube.
 * Coupling masks alternate so every coordinate is transformed.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "flownqs/autodiff.hpp"
#include "flownqs/mlp.hpp"
#include "flownqs/rng.hpp"

namespace flownqs {

/// Independent per-coordinate mixture 0.5 N(+1, sigma^2) + 0.5 N(-1, sigma^2).
/// Its sign symmetry gives every orthant equal integrated weight 2^-n.
struct Prior {
    int dim = 0;
    double sigma = 0.33;

    /// log of the per-coordinate mixture density, evaluated stably as
    /// log(c) - (z^2+1)/(2 s^2) + |z|/s^2 + log1p(exp(-2|z|/s^2)).
    double coord_logprob(double z) const {
        double s2 = sigma * sigma;
        double w = std::abs(z) / s2;
        return std::log(0.5 / (sigma * std::sqrt(2.0 * M_PI))) - (z * z + 1.0) / (2.0 * s2) + w +
               std::log1p(std::exp(-2.0 * w));
    }

    double logprob(const double* z) const {
        double acc = 0.0;
        for (int i = 0; i < dim; ++i) acc += coord_logprob(z[i]);
        return acc;
    }
    double logprob(const Eigen::RowVectorXd& z) const { return logprob(z.data()); }

    Eigen::VectorXd logprob_batch(const ad::RowMat& z) const {
        Eigen::VectorXd out(z.rows());
        for (Eigen::Index r = 0; r < z.rows(); ++r) out[r] = logprob(z.row(r).data());
        return out;
    }

    /// i.i.d. draws: a fair coin picks the component, then a normal draw.
    ad::RowMat sample(std::size_t count, Rng& rng) const {
        if (count < 1) throw std::invalid_argument("Prior::sample: count must be >= 1");
        ad::RowMat z(count, dim);
        for (std::size_t r = 0; r < count; ++r)
            for (int i = 0; i < dim; ++i) {
                double mean = rng.coin() ? 1.0 : -1.0;
                z(static_cast<Eigen::Index>(r), i) = rng.normal(mean, sigma);
            }
        return z;
    }

    /// Tape version of logprob over a (batch, dim) node; returns (batch, 1).
    ad::Var logprob_tape(ad::Tape& t, ad::Var z) const {
        double s2 = sigma * sigma;
        ad::Var z2 = t.mul(z, z);
        ad::Var quad = t.mul_scalar(t.add_scalar(z2, 1.0), -1.0 / (2.0 * s2));
        ad::Var aw = t.abs(t.mul_scalar(z, 1.0 / s2));
        ad::Var soft = t.log(t.add_scalar(t.exp(t.mul_scalar(aw, -2.0)), 1.0));
        ad::Var per_coord = t.add(t.add(quad, aw), soft);
        double c = static_cast<double>(dim) * std::log(0.5 / (sigma * std::sqrt(2.0 * M_PI)));
        return t.add_scalar(t.row_sum(per_coord), c);
    }
};

/// One affine coupling layer. The pass-through block feeds a net producing
/// tanh-bounded s and t; the other block maps as u -> u*exp(s) + t, which is
/// invertible for any parameter values with log|det| = sum(s).
struct CouplingLayer {
    bool swap = false;  // false: block [0,d) passes through; true: block [d,n)
    Mlp net;
};

struct FlowModel {
    int n = 0;
    int d = 0;  // split point, ceil(n/2)
    std::vector<CouplingLayer> layers;

    static FlowModel make(int n, int coupling_layers = 4, std::size_t hidden = 512,
                          std::size_t n_hidden = 2) {
        if (n < 2) throw std::invalid_argument("FlowModel: need n >= 2");
        if (coupling_layers < 1) throw std::invalid_argument("FlowModel: need >= 1 layer");
        FlowModel m;
        m.n = n;
        m.d = (n + 1) / 2;
        for (int i = 0; i < coupling_layers; ++i) {
            bool swap = (i % 2) == 1;
            std::size_t pass = swap ? static_cast<std::size_t>(n - m.d)
                                    : static_cast<std::size_t>(m.d);
            std::size_t trans = static_cast<std::size_t>(n) - pass;
            m.layers.push_back({swap, Mlp::make(pass, hidden, n_hidden, 2 * trans)});
        }
        return m;
    }

    std::size_t pass_dim(std::size_t layer) const {
        return layers[layer].swap ? static_cast<std::size_t>(n - d) : static_cast<std::size_t>(d);
    }
    std::size_t trans_dim(std::size_t layer) const {
        return static_cast<std::size_t>(n) - pass_dim(layer);
    }
    // Column ranges of the pass-through and transformed blocks; both contiguous.
    std::size_t pass_begin(std::size_t layer) const {
        return layers[layer].swap ? static_cast<std::size_t>(d) : 0;
    }
    std::size_t trans_begin(std::size_t layer) const {
        return layers[layer].swap ? 0 : static_cast<std::size_t>(d);
    }

    std::vector<ad::Tensor*> params() {
        std::vector<ad::Tensor*> ps;
        for (CouplingLayer& l : layers)
            for (ad::Tensor* p : l.net.params()) ps.push_back(p);
        return ps;
    }
    std::vector<const ad::Tensor*> params() const {
        std::vector<const ad::Tensor*> ps;
        for (const CouplingLayer& l : layers)
            for (const ad::Tensor* p : l.net.params()) ps.push_back(p);
        return ps;
    }

    /// Random hidden layers, zeroed output layers: s = t = 0 everywhere, so
    /// the flow starts as z -> tanh(z) and the discretized distribution
    /// inherits the prior's exact orthant symmetry.
    void init_near_identity(Rng& rng) {
        for (CouplingLayer& l : layers) {
            l.net.init_hidden(rng);
            l.net.zero_output();
        }
    }

    /// Applies the coupling stack and the final tanh. If logdet is non-null
    /// it receives log|det df/dz| per sample, including the tanh Jacobian.
    void forward(const ad::RowMat& z, ad::RowMat* y_out, Eigen::VectorXd* logdet) const {
        ad::RowMat u = z;
        Eigen::VectorXd ld = Eigen::VectorXd::Zero(z.rows());
        for (std::size_t li = 0; li < layers.size(); ++li) {
            std::size_t pd = pass_dim(li), td = trans_dim(li);
            std::size_t pb = pass_begin(li), tb = trans_begin(li);
            ad::RowMat st = layers[li].net.apply(u.middleCols(pb, pd));
            auto s = st.leftCols(td).array();
            auto t = st.rightCols(td).array();
            u.middleCols(tb, td) =
                (u.middleCols(tb, td).array() * s.exp() + t).matrix();
            if (logdet) ld += st.leftCols(td).rowwise().sum();
        }
        if (logdet) {
            // log(1 - tanh(u)^2) = 2*(log 2 - |u| - log1p(exp(-2|u|))), stable
            // for any u.
            for (Eigen::Index r = 0; r < u.rows(); ++r)
                for (Eigen::Index c = 0; c < u.cols(); ++c) {
                    double a = std::abs(u(r, c));
                    ld[r] += 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
                }
            *logdet = ld;
        }
        if (y_out) *y_out = u.array().tanh().matrix();
    }

    static constexpr double kAtanhClamp = 1.0 - 1e-12;

    /// Exact inverse: atanh, then the coupling layers in reverse order.
    /// Inputs must lie strictly inside the cube; values within rounding of
    /// +-1 are clamped before atanh.
    ad::RowMat inverse(const ad::RowMat& y) const {
        ad::RowMat u = clamped_atanh(y);
        for (std::size_t li = layers.size(); li-- > 0;) {
            std::size_t pd = pass_dim(li), td = trans_dim(li);
            std::size_t pb = pass_begin(li), tb = trans_begin(li);
            ad::RowMat st = layers[li].net.apply(u.middleCols(pb, pd));
            auto s = st.leftCols(td).array();
            auto t = st.rightCols(td).array();
            u.middleCols(tb, td) =
                ((u.middleCols(tb, td).array() - t) * (-s).exp()).matrix();
        }
        return u;
    }

    /// log p_Y(y) = log p_Z(f^-1(y)) - sum_layers sum(s) - sum_i log(1-y_i^2).
    Eigen::VectorXd posterior_logprob(const Prior& prior, const ad::RowMat& y) const {
        Eigen::VectorXd ld(y.rows());
        ad::RowMat u = clamped_atanh(y, &ld);
        for (std::size_t li = layers.size(); li-- > 0;) {
            std::size_t pd = pass_dim(li), td = trans_dim(li);
            std::size_t pb = pass_begin(li), tb = trans_begin(li);
            ad::RowMat st = layers[li].net.apply(u.middleCols(pb, pd));
            auto s = st.leftCols(td).array();
            auto t = st.rightCols(td).array();
            u.middleCols(tb, td) =
                ((u.middleCols(tb, td).array() - t) * (-s).exp()).matrix();
            ld += st.leftCols(td).rowwise().sum();
        }
        return prior.logprob_batch(u) - ld;
    }

    /// Tape version of posterior_logprob for fixed points y; gradients flow
    /// into the coupling-net parameters only. `leaves` holds params() in
    /// order. Returns a (batch, 1) node of log p_Y values.
    ad::Var posterior_logprob_tape(ad::Tape& t, const Prior& prior, const ad::RowMat& y,
                                   const std::vector<ad::Var>& leaves) const {
        const std::size_t rows = static_cast<std::size_t>(y.rows());
        Eigen::VectorXd ld(y.rows());
        ad::RowMat u0 = clamped_atanh(y, &ld);
        ad::Tensor u0t(rows, static_cast<std::size_t>(n));
        ad::Tensor tanh_ld(rows, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            for (int c = 0; c < n; ++c)
                u0t.at(r, static_cast<std::size_t>(c)) = u0(static_cast<Eigen::Index>(r), c);
            tanh_ld.at(r, 0) = ld[static_cast<Eigen::Index>(r)];
        }
        ad::Var u = t.constant(std::move(u0t));
        ad::Var s_total{};
        bool have_s = false;
        std::size_t leaf_off = 0;
        std::vector<std::size_t> offsets(layers.size());
        for (std::size_t li = 0; li < layers.size(); ++li) {
            offsets[li] = leaf_off;
            leaf_off += layers[li].net.param_count();
        }
        for (std::size_t li = layers.size(); li-- > 0;) {
            std::size_t pd = pass_dim(li), td = trans_dim(li);
            std::size_t pb = pass_begin(li), tb = trans_begin(li);
            ad::Var p = t.slice_cols(u, pb, pb + pd);
            ad::Var st = layers[li].net.apply_tape(t, p, leaves, offsets[li]);
            ad::Var s = t.slice_cols(st, 0, td);
            ad::Var tt = t.slice_cols(st, td, 2 * td);
            ad::Var trans = t.mul(t.sub(t.slice_cols(u, tb, tb + td), tt),
                                  t.exp(t.mul_scalar(s, -1.0)));
            u = layers[li].swap ? t.concat_cols(trans, p) : t.concat_cols(p, trans);
            ad::Var srow = t.row_sum(s);
            s_total = have_s ? t.add(s_total, srow) : srow;
            have_s = true;
        }
        ad::Var prior_lp = prior.logprob_tape(t, u);
        return t.sub(t.sub(prior_lp, s_total), t.constant(std::move(tanh_ld)));
    }

private:
    /// atanh with the documented clamp; optionally accumulates the tanh
    /// Jacobian term sum_i log(1 - y_i^2) per row (from the clamped values).
    ad::RowMat clamped_atanh(const ad::RowMat& y, Eigen::VectorXd* tanh_ld = nullptr) const {
        if (y.cols() != n) throw std::invalid_argument("flow: dimension mismatch");
        ad::RowMat u(y.rows(), y.cols());
        if (tanh_ld) tanh_ld->setZero(y.rows());
        for (Eigen::Index r = 0; r < y.rows(); ++r)
            for (Eigen::Index c = 0; c < y.cols(); ++c) {
                double v = y(r, c);
                if (std::abs(v) >= 1.0)
                    throw std::invalid_argument("flow inverse: |y| >= 1 is outside the cube");
                v = std::max(-kAtanhClamp, std::min(kAtanhClamp, v));
                u(r, c) = std::atanh(v);
                if (tanh_ld) (*tanh_ld)[r] += std::log1p(-v * v);
            }
        return u;
    }
};

/// Convenience wrappers matching the sampling-side call sites.
inline ad::RowMat prior_sample(const Prior& prior, std::size_t count, Rng& rng) {
    return prior.sample(count, rng);
}
inline double prior_logprob(const Prior& prior, const Eigen::RowVectorXd& z) {
    return prior.logprob(z);
}

}  // namespace flownqs
