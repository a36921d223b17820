// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "flownqs/autodiff.hpp"
#include "flownqs/rng.hpp"

namespace flownqs {

/// Dense network with ReLU hidden layers and a tanh output layer, the shape
/// used by both the coupling nets and the neural quantum state. The plain
/// and tape forward passes execute the same Eigen expressions in the same
/// order, so their outputs are bitwise identical.
struct Mlp {
    struct DenseLayer {
        ad::Tensor w;  // (in, out)
        ad::Tensor b;  // (1, out)
    };
    std::vector<DenseLayer> layers;  // hidden layers followed by the output layer

    static Mlp make(std::size_t in, std::size_t hidden, std::size_t n_hidden, std::size_t out) {
        if (n_hidden < 1) throw std::invalid_argument("Mlp: need at least one hidden layer");
        Mlp net;
        std::size_t prev = in;
        for (std::size_t i = 0; i < n_hidden; ++i) {
            net.layers.push_back({ad::Tensor(prev, hidden), ad::Tensor(1, hidden)});
            prev = hidden;
        }
        net.layers.push_back({ad::Tensor(prev, out), ad::Tensor(1, out)});
        return net;
    }

    std::size_t in_dim() const { return layers.front().w.rows(); }
    std::size_t out_dim() const { return layers.back().w.cols(); }

    /// Kaiming-uniform fan-in initialization of the hidden layers; biases
    /// start at zero. The output layer is left untouched.
    void init_hidden(Rng& rng) {
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
            double bound = std::sqrt(6.0 / static_cast<double>(layers[i].w.rows()));
            for (double& x : layers[i].w.data) x = rng.uniform(-bound, bound);
            for (double& x : layers[i].b.data) x = 0.0;
        }
    }

    void zero_output() {
        for (double& x : layers.back().w.data) x = 0.0;
        for (double& x : layers.back().b.data) x = 0.0;
    }

    void init_output_uniform(Rng& rng, double bound) {
        for (double& x : layers.back().w.data) x = rng.uniform(-bound, bound);
        for (double& x : layers.back().b.data) x = 0.0;
    }

    std::vector<ad::Tensor*> params() {
        std::vector<ad::Tensor*> ps;
        for (DenseLayer& l : layers) {
            ps.push_back(&l.w);
            ps.push_back(&l.b);
        }
        return ps;
    }
    std::vector<const ad::Tensor*> params() const {
        std::vector<const ad::Tensor*> ps;
        for (const DenseLayer& l : layers) {
            ps.push_back(&l.w);
            ps.push_back(&l.b);
        }
        return ps;
    }
    std::size_t param_count() const { return 2 * layers.size(); }

    /// Forward pass on a (batch, in) matrix.
    ad::RowMat apply(const ad::RowMat& x) const {
        ad::RowMat h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const DenseLayer& l = layers[i];
            ad::RowMat prod(h.rows(), l.w.cols());
            prod.noalias() = h * ad::mat(l.w);
            prod = prod.rowwise() + ad::mat(l.b).row(0);
            if (i + 1 < layers.size())
                h = prod.array().max(0.0).matrix();
            else
                h = prod.array().tanh().matrix();
        }
        return h;
    }

    /// Tape forward pass. `leaves` must hold this net's parameters in
    /// params() order starting at `offset`; consumes param_count() entries.
    ad::Var apply_tape(ad::Tape& t, ad::Var x, const std::vector<ad::Var>& leaves,
                       std::size_t offset) const {
        ad::Var h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            ad::Var w = leaves.at(offset + 2 * i);
            ad::Var b = leaves.at(offset + 2 * i + 1);
            h = t.add(t.matmul(h, w), b);
            h = (i + 1 < layers.size()) ? t.relu(h) : t.tanh(h);
        }
        return h;
    }
};

}  // namespace flownqs
