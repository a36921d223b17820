// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file trainer.hpp
 * @brief Coupled flow/NQS training loop, uniqueness-based stopping rule, and
 *        the post-convergence inference protocol.
 *
 * One update: draw |B| independent subspaces from the flow; on each, evaluate
 * the NQS subspace energy E (differentiable in theta) and the flow loss
 *   L_phi = -(|E|/|S|) * sum_x p_theta(x) * log(p_hat_phi(x)),
 * where p_theta and E enter as detached constants, so phi gradients come only
 * from the region log-probabilities. The per-update loss is the batch mean of
 * (L_phi + E); NQS gradients are norm-clipped before the Adam step.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "flownqs/autodiff.hpp"
#include "flownqs/flow.hpp"
#include "flownqs/nqs.hpp"
#include "flownqs/parallel.hpp"
#include "flownqs/rng.hpp"
#include "flownqs/sampler.hpp"
#include "flownqs/spin.hpp"

namespace flownqs {

struct TrainConfig {
    int n = 10;
    int l = 1;
    double v = 1.0;
    std::size_t subspace_size = 150;   // |S|: 150 for n = 10, 5000 for larger systems
    std::size_t batch_subspaces = 30;  // |B|
    int n_mc = 25;
    double flow_lr = 1e-4;
    double nqs_lr = 1e-4;  // the batch loss is driven by one optimizer setting
    double uniqueness_threshold = 0.9;
    std::uint64_t seed = 1;
    int max_updates = 5000;
    double clip_threshold = 1000.0;
    int threads = 0;                    // 0 = hardware concurrency
    std::size_t regions_per_chunk = 0;  // 0 = auto; bounds tape memory

    void validate() const {
        if (subspace_size < 1 || batch_subspaces < 1 || n_mc < 1 || max_updates < 1)
            throw std::invalid_argument("TrainConfig: counts must be positive");
        if (!(uniqueness_threshold > 0.0 && uniqueness_threshold < 1.0))
            throw std::invalid_argument("TrainConfig: uniqueness_threshold must be in (0,1)");
    }
};

struct InferConfig {
    int iterations = 2000;
    double nqs_lr = 1e-3;
    double plateau_factor = 0.5;
    int plateau_patience = 20;
    int n_repeats = 20;
    double clip_threshold = 1000.0;
    int threads = 0;

    void validate() const {
        if (iterations < 1 || n_repeats < 1 || plateau_patience < 1)
            throw std::invalid_argument("InferConfig: counts must be positive");
        if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
            throw std::invalid_argument("InferConfig: plateau_factor must be in (0,1)");
    }
};

/// Reduce-on-plateau: halves (by `factor`) the learning rate whenever the
/// monitored energy has not improved on its best value for `patience`
/// consecutive steps. Zero minimum delta; the rate never increases.
struct PlateauScheduler {
    double lr;
    double factor;
    int patience;
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;

    PlateauScheduler(double initial_lr, double factor_, int patience_)
        : lr(initial_lr), factor(factor_), patience(patience_) {}

    /// Feed one energy observation; returns the rate to use for the next step.
    double observe(double energy) {
        if (energy < best) {
            best = energy;
            stall = 0;
        } else if (++stall >= patience) {
            lr *= factor;
            stall = 0;
        }
        return lr;
    }
};

/// Network sizes; defaults follow the reference setup (512-wide layers, four
/// coupling layers, four NQS hidden layers). Reduced widths are used by the
/// fast test configurations.
struct ModelConfig {
    int flow_coupling_layers = 4;
    std::size_t flow_hidden_width = 512;
    std::size_t flow_hidden_layers = 2;
    std::size_t nqs_hidden_width = 512;
    std::size_t nqs_hidden_layers = 4;
};

/// Flow-parameter loss for one subspace, value form:
///   -(|e_psi|/k) * sum_x p_theta(x) * log(p_hat(x)).
inline double nf_loss(double e_psi, const Eigen::VectorXd& p_theta,
                      const Eigen::VectorXd& p_hat) {
    if (p_theta.size() != p_hat.size() || p_theta.size() == 0)
        throw std::invalid_argument("nf_loss: size mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p_hat.size(); ++i) {
        if (!(p_hat[i] > 0.0))
            throw std::invalid_argument("nf_loss: nonpositive region probability estimate");
        acc += p_theta[i] * std::log(p_hat[i]);
    }
    return -std::abs(e_psi) / static_cast<double>(p_theta.size()) * acc;
}

/// log of the grouped mean of exp(logp), evaluated in log space so that
/// underflowing regions stay finite; gradients are the exact softmax weights.
inline ad::Var log_mean_exp_groups(ad::Tape& t, ad::Var logp, std::size_t group) {
    const ad::Tensor& v = t.val(logp);
    if (v.cols() != 1 || group == 0 || v.rows() % group != 0)
        throw std::invalid_argument("log_mean_exp_groups: bad shape");
    std::size_t n_groups = v.rows() / group;
    ad::Tensor m(n_groups, 1);
    for (std::size_t gi = 0; gi < n_groups; ++gi) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < group; ++j) mx = std::max(mx, v.at(gi * group + j, 0));
        m.at(gi, 0) = mx;
    }
    ad::Var mc = t.constant(std::move(m));
    ad::Var centered = t.sub(logp, t.expand_rows(mc, group));
    ad::Var lse = t.add(t.log(t.segment_sum(t.exp(centered), group)), mc);
    return t.add_scalar(lse, -std::log(static_cast<double>(group)));
}

namespace train_detail {

// Sub-stream purposes for seed derivation.
inline constexpr std::uint64_t kStreamInit = 0x696e6974;    // model init
inline constexpr std::uint64_t kStreamDraw = 0x64726177;    // subspace draws
inline constexpr std::uint64_t kStreamMc = 0x6d63706d;      // region MC points
inline constexpr std::uint64_t kStreamInfer = 0x696e6665;   // inference repeats
inline constexpr std::uint64_t kStreamReinit = 0x7265696e;  // degenerate-NQS reinit

template <class TensorPtrVec>
inline std::vector<ad::Var> make_leaves(ad::Tape& t, const TensorPtrVec& ps) {
    std::vector<ad::Var> vars;
    vars.reserve(ps.size());
    for (const auto* p : ps) vars.push_back(t.leaf(*p));
    return vars;
}

inline void accumulate_leaf_grads(std::vector<ad::Tensor>& dst, const ad::Tape& t,
                                  const std::vector<ad::Tensor>& grads,
                                  const std::vector<ad::Var>& leaves) {
    if (dst.empty()) {
        dst.reserve(leaves.size());
        for (ad::Var v : leaves) dst.push_back(ad::Tensor::zeros_like(t.val(v)));
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const ad::Tensor& gi = grads[leaves[i].id];
        if (!gi.data.empty()) ad::arr(dst[i]) += ad::arr(gi);
    }
}

inline std::size_t auto_regions_per_chunk(std::size_t requested, int n_mc) {
    if (requested > 0) return requested;
    return std::max<std::size_t>(1, 2048 / static_cast<std::size_t>(n_mc));
}

}  // namespace train_detail

/// Per-subspace outcome inside one batch evaluation.
struct SubspaceEval {
    double energy = 0.0;
    double nf_value = 0.0;
    std::size_t raw_count = 0;
    std::size_t unique_count = 0;
    bool degenerate = false;
    std::vector<ad::Tensor> flow_grads;
    std::vector<ad::Tensor> nqs_grads;
};

/// Averaged loss over a batch of sample sets with its gradients.
struct BatchEval {
    double value = 0.0;            // mean of (nf_loss + energy)
    double mean_energy = 0.0;
    double mean_nf_loss = 0.0;
    double mean_unique_fraction = 0.0;
    bool any_degenerate = false;
    std::vector<ad::Tensor> flow_grads;  // d value / d phi
    std::vector<ad::Tensor> nqs_grads;   // d value / d theta (unclipped)
};

/// Evaluates nf_loss + variational energy for one pre-drawn subspace, with
/// gradients. Region MC points are drawn fresh from `mc_seed`. Flow work is
/// chunked over regions to bound tape memory; chunking only regroups the
/// floating-point reduction.
inline SubspaceEval eval_subspace_loss(const SampleSet& ss, const FlowModel& flow,
                                       const NqsModel& nqs, const InteractionGraph& g,
                                       const Prior& prior, const RegionSpec& spec,
                                       std::uint64_t mc_seed,
                                       std::size_t regions_per_chunk = 0) {
    SubspaceEval out;
    out.raw_count = ss.raw_count;
    out.unique_count = ss.unique_count;
    const std::size_t k = ss.subspace.size();
    SymmetricSparse h = subspace_hamiltonian_sparse(ss.subspace, g);

    // NQS term: differentiable energy; p_theta and |E| are detached below.
    Eigen::VectorXd p_theta;
    {
        ad::Tape tn;
        std::vector<ad::Var> leaves = train_detail::make_leaves(tn, nqs.params());
        ad::Var psi = nqs.amplitudes_tape(tn, ss.subspace, leaves);
        Eigen::VectorXd amps =
            Eigen::Map<const Eigen::VectorXd>(tn.val(psi).data.data(), static_cast<Eigen::Index>(k));
        if (amps.squaredNorm() < kDegenerateNormSq) {
            out.degenerate = true;
            return out;
        }
        ad::Var e = rayleigh_quotient_tape(tn, psi, h);
        out.energy = tn.val(e).item();
        p_theta = target_probs(amps);
        std::vector<ad::Tensor> grads = tn.backward(e);
        train_detail::accumulate_leaf_grads(out.nqs_grads, tn, grads, leaves);
    }

    // Flow term, chunked over regions.
    Rng mc_rng(mc_seed);
    const std::size_t chunk = train_detail::auto_regions_per_chunk(regions_per_chunk, spec.n_mc);
    const double weight_scale = std::abs(out.energy) / static_cast<double>(k);
    for (std::size_t begin = 0; begin < k; begin += chunk) {
        const std::size_t end = std::min(k, begin + chunk);
        const std::size_t nreg = end - begin;
        ad::RowMat points(nreg * static_cast<std::size_t>(spec.n_mc), flow.n);
        for (std::size_t r = 0; r < nreg; ++r)
            points.middleRows(static_cast<Eigen::Index>(r * spec.n_mc), spec.n_mc) =
                region_mc_points(ss.subspace[begin + r], spec, mc_rng);

        ad::Tape tf;
        std::vector<ad::Var> leaves = train_detail::make_leaves(tf, flow.params());
        ad::Var logp = flow.posterior_logprob_tape(tf, prior, points, leaves);
        ad::Var log_phat = log_mean_exp_groups(tf, logp, static_cast<std::size_t>(spec.n_mc));
        ad::Tensor w(nreg, 1);
        for (std::size_t r = 0; r < nreg; ++r) w.at(r, 0) = weight_scale * p_theta[begin + r];
        ad::Var chunk_loss =
            tf.mul_scalar(tf.sum(tf.mul(tf.constant(std::move(w)), log_phat)), -1.0);
        out.nf_value += tf.val(chunk_loss).item();
        std::vector<ad::Tensor> grads = tf.backward(chunk_loss);
        train_detail::accumulate_leaf_grads(out.flow_grads, tf, grads, leaves);
    }
    return out;
}

/// The averaged batch loss over |B| subspaces. Subspace contributions are
/// evaluated independently (optionally in parallel) and reduced in subspace
/// order, so results are independent of thread scheduling.
inline BatchEval batch_loss(const std::vector<SampleSet>& subspaces, const FlowModel& flow,
                            const NqsModel& nqs, const InteractionGraph& g, const Prior& prior,
                            const RegionSpec& spec, std::uint64_t mc_seed, int threads = 0,
                            std::size_t regions_per_chunk = 0) {
    if (subspaces.empty()) throw std::invalid_argument("batch_loss: need at least one subspace");
    std::vector<SubspaceEval> evals(subspaces.size());
    parallel_for(subspaces.size(), threads, [&](std::size_t i) {
        evals[i] = eval_subspace_loss(subspaces[i], flow, nqs, g, prior, spec,
                                      derive_seed(mc_seed, train_detail::kStreamMc, i),
                                      regions_per_chunk);
    });

    BatchEval out;
    const double inv_b = 1.0 / static_cast<double>(subspaces.size());
    for (const SubspaceEval& ev : evals) {
        if (ev.degenerate) {
            out.any_degenerate = true;
            continue;
        }
        out.mean_energy += ev.energy * inv_b;
        out.mean_nf_loss += ev.nf_value * inv_b;
        out.mean_unique_fraction +=
            static_cast<double>(ev.unique_count) / static_cast<double>(ev.raw_count) * inv_b;
        if (out.flow_grads.empty()) {
            out.flow_grads = ev.flow_grads;
            for (ad::Tensor& t : out.flow_grads) ad::arr(t) *= inv_b;
        } else {
            for (std::size_t j = 0; j < out.flow_grads.size(); ++j)
                ad::arr(out.flow_grads[j]) += inv_b * ad::arr(ev.flow_grads[j]);
        }
        if (out.nqs_grads.empty()) {
            out.nqs_grads = ev.nqs_grads;
            for (ad::Tensor& t : out.nqs_grads) ad::arr(t) *= inv_b;
        } else {
            for (std::size_t j = 0; j < out.nqs_grads.size(); ++j)
                ad::arr(out.nqs_grads[j]) += inv_b * ad::arr(ev.nqs_grads[j]);
        }
    }
    out.value = out.mean_nf_loss + out.mean_energy;
    return out;
}

struct UpdateStats {
    int update = 0;
    double mean_energy = 0.0;
    double mean_unique_fraction = 0.0;
    double flow_loss = 0.0;
};

struct TrainResult {
    FlowModel flow;
    NqsModel nqs;
    std::vector<UpdateStats> history;
    bool converged = false;
    int updates_run = 0;
};

/// Runs coupled updates until the unique-sample fraction falls below the
/// threshold in every subspace of an update, or max_updates is reached (the
/// result is then flagged unconverged but still returned).
inline TrainResult train(const TrainConfig& cfg, const ModelConfig& models = {}) {
    cfg.validate();
    InteractionGraph g = build_ring_graph(cfg.n, cfg.l, cfg.v);
    Prior prior{cfg.n};
    RegionSpec spec;
    spec.n_mc = cfg.n_mc;

    Rng init_rng(derive_seed(cfg.seed, train_detail::kStreamInit));
    TrainResult res;
    res.flow = FlowModel::make(cfg.n, models.flow_coupling_layers, models.flow_hidden_width,
                               models.flow_hidden_layers);
    res.flow.init_near_identity(init_rng);
    res.nqs = NqsModel::make(cfg.n, models.nqs_hidden_width, models.nqs_hidden_layers);
    res.nqs.init(init_rng);

    ad::AdamState flow_state, nqs_state;
    std::vector<ad::Tensor*> flow_params = res.flow.params();
    std::vector<ad::Tensor*> nqs_params = res.nqs.params();

    int reinit_count = 0;
    for (int update = 1; update <= cfg.max_updates; ++update) {
        std::vector<SampleSet> subspaces(cfg.batch_subspaces);
        parallel_for(cfg.batch_subspaces, cfg.threads, [&](std::size_t i) {
            Rng rng(derive_seed(cfg.seed, train_detail::kStreamDraw + std::uint64_t(update), i));
            subspaces[i] = draw_subspace(res.flow, prior, cfg.subspace_size, rng);
        });

        BatchEval be = batch_loss(subspaces, res.flow, res.nqs, g, prior, spec,
                                  derive_seed(cfg.seed, train_detail::kStreamMc,
                                              std::uint64_t(update)),
                                  cfg.threads, cfg.regions_per_chunk);
        if (be.any_degenerate) {
            // Pathological all-zero amplitudes: reinitialize and retry.
            if (++reinit_count > 5)
                throw DegenerateStateError("train: repeated degenerate NQS initializations");
            Rng r(derive_seed(cfg.seed, train_detail::kStreamReinit,
                              std::uint64_t(reinit_count)));
            res.nqs.init(r);
            nqs_state = ad::AdamState{};
            --update;
            continue;
        }

        ad::clip_gradient_norm(be.nqs_grads, cfg.clip_threshold);
        ad::adam_step(flow_params, be.flow_grads, flow_state, cfg.flow_lr);
        ad::adam_step(nqs_params, be.nqs_grads, nqs_state, cfg.nqs_lr);

        res.updates_run = update;
        res.history.push_back(
            {update, be.mean_energy, be.mean_unique_fraction, be.mean_nf_loss});

        const double cut = cfg.uniqueness_threshold * static_cast<double>(cfg.subspace_size);
        bool all_below = true;
        for (const SampleSet& ss : subspaces)
            if (!(static_cast<double>(ss.unique_count) < cut)) {
                all_below = false;
                break;
            }
        if (all_below) {
            res.converged = true;
            break;
        }
    }
    return res;
}

struct InferResult {
    double mean_energy = 0.0;
    double std_energy = 0.0;
    std::vector<double> energies;  // one per repeat
};

/// Post-convergence protocol: for each repeat, draw a fresh subspace from the
/// flow and train a freshly initialized NQS on its energy expectation with
/// Adam plus reduce-on-plateau, then report mean and standard deviation of
/// the final energies over repeats.
inline InferResult infer(const FlowModel& flow, const InteractionGraph& g,
                         std::size_t subspace_size, const InferConfig& cfg,
                         const ModelConfig& models = {}, std::uint64_t seed = 1) {
    cfg.validate();
    Prior prior{flow.n};
    InferResult res;
    res.energies.resize(static_cast<std::size_t>(cfg.n_repeats));
    parallel_for(static_cast<std::size_t>(cfg.n_repeats), cfg.threads, [&](std::size_t rep) {
        Rng rng(derive_seed(seed, train_detail::kStreamInfer, rep));
        SampleSet ss = draw_subspace(flow, prior, subspace_size, rng);
        SymmetricSparse h = subspace_hamiltonian_sparse(ss.subspace, g);

        NqsModel nqs = NqsModel::make(flow.n, models.nqs_hidden_width, models.nqs_hidden_layers);
        nqs.init(rng);
        for (int attempt = 0; attempt < 5; ++attempt) {
            if (nqs.amplitudes(ss.subspace).squaredNorm() >= kDegenerateNormSq) break;
            nqs.init(rng);
        }

        ad::AdamState state;
        std::vector<ad::Tensor*> params = nqs.params();
        PlateauScheduler sched(cfg.nqs_lr, cfg.plateau_factor, cfg.plateau_patience);
        double lr = cfg.nqs_lr;
        for (int it = 0; it < cfg.iterations; ++it) {
            ad::Tape t;
            std::vector<ad::Var> leaves = train_detail::make_leaves(t, nqs.params());
            ad::Var e = variational_energy_tape(t, nqs, ss.subspace, h, leaves);
            double ev = t.val(e).item();
            std::vector<ad::Tensor> grads = t.backward(e);
            std::vector<ad::Tensor> leaf_grads;
            train_detail::accumulate_leaf_grads(leaf_grads, t, grads, leaves);
            ad::clip_gradient_norm(leaf_grads, cfg.clip_threshold);
            ad::adam_step(params, leaf_grads, state, lr);
            lr = sched.observe(ev);
        }
        res.energies[rep] = variational_energy(nqs, ss.subspace, g);
    });

    double mean = 0.0;
    for (double e : res.energies) mean += e;
    mean /= static_cast<double>(res.energies.size());
    double var = 0.0;
    if (res.energies.size() > 1) {
        for (double e : res.energies) var += (e - mean) * (e - mean);
        var /= static_cast<double>(res.energies.size() - 1);
    }
    res.mean_energy = mean;
    res.std_energy = std::sqrt(var);
    return res;
}

}  // namespace flownqs
