// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <functional>

#include "fd_check.hpp"
#include "flownqs/flow.hpp"
#include "flownqs/rng.hpp"
#include "flownqs/sampler.hpp"

using namespace flownqs;

namespace {

/// Randomize every layer (including outputs) so s and t are nontrivial while
/// staying in a well-conditioned range.
FlowModel random_flow(int n, Rng& rng, std::size_t hidden = 16, double out_scale = 0.4) {
    FlowModel m = FlowModel::make(n, 4, hidden, 2);
    for (CouplingLayer& l : m.layers) {
        l.net.init_hidden(rng);
        l.net.init_output_uniform(rng, out_scale);
    }
    return m;
}

ad::RowMat random_batch(std::size_t rows, int n, Rng& rng, double lo = -2.0, double hi = 2.0) {
    ad::RowMat z(rows, n);
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = rng.uniform(lo, hi);
    return z;
}

/// Composite Simpson weights on [a, b] with an even interval count.
double simpson(const std::function<double(double)>& f, double a, double b, int intervals) {
    double h = (b - a) / intervals;
    double acc = f(a) + f(b);
    for (int i = 1; i < intervals; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace

TEST_CASE("prior sampling statistics") {
    Prior prior{3};
    Rng rng(606);
    const std::size_t count = 100000;
    ad::RowMat z = prior.sample(count, rng);
    for (int c = 0; c < 3; ++c) {
        double mean = z.col(c).mean();
        double var = (z.col(c).array() - mean).square().sum() / (count - 1);
        double pos = (z.col(c).array() > 0).cast<double>().mean();
        CHECK(std::abs(mean) < 0.01);            // symmetric mixture
        CHECK(pos == Catch::Approx(0.5).margin(0.01));
        CHECK(var == Catch::Approx(1.0 + 0.33 * 0.33).margin(0.02));  // mu^2 + sigma^2
    }
    CHECK_THROWS_AS(prior.sample(0, rng), std::invalid_argument);
}

TEST_CASE("prior log-density") {
    Prior prior{1};
    SECTION("direct mixture-density evaluation at z = +1") {
        double sigma = 0.33;
        auto phi = [&](double x) {
            return std::exp(-x * x / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * M_PI));
        };
        double expect = std::log(0.5 * (phi(0.0) + phi(2.0)));
        CHECK(prior.coord_logprob(1.0) == Catch::Approx(expect).margin(1e-12));
        // The near component dominates; the far one is a ~1e-8 correction.
        CHECK(prior.coord_logprob(1.0) ==
              Catch::Approx(std::log(0.5 * phi(0.0))).margin(1e-7));
    }
    SECTION("symmetric under z -> -z") {
        Prior p3{3};
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            Eigen::RowVectorXd z(3);
            for (int i = 0; i < 3; ++i) z[i] = rng.uniform(-4.0, 4.0);
            Eigen::RowVectorXd neg = -z;
            CHECK(p3.logprob(z) == Catch::Approx(p3.logprob(neg)).margin(1e-13));
        }
    }
    SECTION("normalizes to 1 by quadrature") {
        double integral = simpson([&](double z) { return std::exp(prior.coord_logprob(z)); },
                                  -5.0, 5.0, 4000);
        CHECK(integral == Catch::Approx(1.0).margin(1e-6));
    }
    SECTION("stable far into the tails") {
        CHECK(std::isfinite(prior.coord_logprob(1000.0)));
        CHECK(prior.coord_logprob(1000.0) < -1e5);
    }
}

TEST_CASE("near-identity initialization acts as tanh") {
    Rng rng(808);
    FlowModel m = FlowModel::make(5, 4, 8, 2);
    m.init_near_identity(rng);
    ad::RowMat z = random_batch(40, 5, rng);
    ad::RowMat y;
    Eigen::VectorXd logdet;
    m.forward(z, &y, &logdet);
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            CHECK(y(r, c) == std::tanh(z(r, c)));  // identity coupling, exactly
            CHECK(std::abs(y(r, c)) < 1.0);
        }
    SECTION("log-determinant reduces to the tanh Jacobian") {
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            double expect = 0.0;
            for (Eigen::Index c = 0; c < z.cols(); ++c)
                expect += std::log1p(-std::tanh(z(r, c)) * std::tanh(z(r, c)));
            CHECK(logdet[r] == Catch::Approx(expect).margin(1e-11));
        }
    }
    SECTION("z = 0 maps to y = 0 with zero log-determinant") {
        ad::RowMat z0 = ad::RowMat::Zero(1, 5);
        ad::RowMat y0;
        Eigen::VectorXd ld0;
        m.forward(z0, &y0, &ld0);
        CHECK(y0.cwiseAbs().maxCoeff() == 0.0);
        CHECK(ld0[0] == 0.0);
    }
    SECTION("inverse reduces to atanh") {
        ad::RowMat y2 = random_batch(10, 5, rng, -0.95, 0.95);
        ad::RowMat z2 = m.inverse(y2);
        for (Eigen::Index r = 0; r < 10; ++r)
            for (Eigen::Index c = 0; c < 5; ++c)
                CHECK(z2(r, c) == Catch::Approx(std::atanh(y2(r, c))).margin(1e-14));
    }
}

TEST_CASE("invertibility round trips under random parameters") {
    Rng rng(909);
    for (int trial = 0; trial < 25; ++trial) {
        int n = 2 + static_cast<int>(rng.below(6));
        FlowModel m = random_flow(n, rng);
        ad::RowMat z = random_batch(8, n, rng);
        ad::RowMat y;
        m.forward(z, &y, nullptr);
        ad::RowMat z_back = m.inverse(y);
        CAPTURE(trial, n);
        CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-8);

        ad::RowMat y0 = random_batch(8, n, rng, -0.99, 0.99);
        ad::RowMat y_back;
        m.forward(m.inverse(y0), &y_back, nullptr);
        CHECK((y_back - y0).cwiseAbs().maxCoeff() < 1e-8);
    }
    SECTION("points on or outside the cube are rejected") {
        FlowModel m = random_flow(4, rng);
        ad::RowMat y = ad::RowMat::Zero(1, 4);
        y(0, 2) = 1.0;
        CHECK_THROWS_AS(m.inverse(y), std::invalid_argument);
    }
}

TEST_CASE("analytic log-determinant matches the numeric Jacobian") {
    Rng rng(111);
    for (int n : {2, 3, 4, 6}) {
        FlowModel m = random_flow(n, rng);
        ad::RowMat z = random_batch(1, n, rng, -1.5, 1.5);
        ad::RowMat y;
        Eigen::VectorXd logdet;
        m.forward(z, &y, &logdet);

        // Central-difference Jacobian of the full map z -> y.
        const double h = 1e-6;
        Eigen::MatrixXd jac(n, n);
        for (int c = 0; c < n; ++c) {
            ad::RowMat zp = z, zm = z;
            zp(0, c) += h;
            zm(0, c) -= h;
            ad::RowMat yp, ym;
            m.forward(zp, &yp, nullptr);
            m.forward(zm, &ym, nullptr);
            jac.col(c) = ((yp - ym) / (2 * h)).row(0).transpose();
        }
        double num_logdet = std::log(std::abs(jac.determinant()));
        CAPTURE(n);
        CHECK(fd::rel_error(logdet[0], num_logdet) < 1e-5);
    }
}

TEST_CASE("posterior log-density") {
    Rng rng(222);
    SECTION("identity coupling reduces to the prior plus tanh Jacobian") {
        Prior prior{4};
        FlowModel m = FlowModel::make(4, 4, 8, 2);
        m.init_near_identity(rng);
        ad::RowMat z = random_batch(6, 4, rng);
        ad::RowMat y;
        m.forward(z, &y, nullptr);
        Eigen::VectorXd lp = m.posterior_logprob(prior, y);
        for (Eigen::Index r = 0; r < 6; ++r) {
            double expect = prior.logprob(Eigen::RowVectorXd(z.row(r)));
            for (Eigen::Index c = 0; c < 4; ++c) expect -= std::log1p(-y(r, c) * y(r, c));
            CHECK(lp[r] == Catch::Approx(expect).margin(1e-10));
        }
    }
    SECTION("consistency: log p_Y(f(z)) + logdet(z) = log p_Z(z)") {
        Prior prior{5};
        for (int trial = 0; trial < 10; ++trial) {
            FlowModel m = random_flow(5, rng);
            ad::RowMat z = random_batch(4, 5, rng, -1.5, 1.5);
            ad::RowMat y;
            Eigen::VectorXd logdet;
            m.forward(z, &y, &logdet);
            Eigen::VectorXd lp = m.posterior_logprob(prior, y);
            for (Eigen::Index r = 0; r < 4; ++r) {
                double lhs = lp[r] + logdet[r];
                double rhs = prior.logprob(Eigen::RowVectorXd(z.row(r)));
                CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
            }
        }
    }
    SECTION("N = 2 posterior integrates to 1 over the open cube") {
        Prior prior{2};
        FlowModel m = random_flow(2, rng, 12, 0.3);
        // 2-D composite Simpson; the integrand vanishes on the boundary.
        const int k = 400;
        const double h = 2.0 / k;
        auto weight = [&](int i) { return i == 0 || i == k ? 1.0 : (i % 2 ? 4.0 : 2.0); };
        double acc = 0.0;
        for (int i = 0; i <= k; ++i) {
            double yi = -1.0 + i * h;
            for (int j = 0; j <= k; ++j) {
                double yj = -1.0 + j * h;
                double f = 0.0;
                if (std::abs(yi) < 1.0 && std::abs(yj) < 1.0) {
                    ad::RowMat y(1, 2);
                    y << yi, yj;
                    f = std::exp(m.posterior_logprob(prior, y)[0]);
                }
                acc += weight(i) * weight(j) * f;
            }
        }
        double integral = acc * h * h / 9.0;
        CHECK(integral == Catch::Approx(1.0).margin(1e-3));
    }
    SECTION("out-of-cube points are rejected") {
        Prior prior{3};
        FlowModel m = random_flow(3, rng);
        ad::RowMat y = ad::RowMat::Zero(1, 3);
        y(0, 0) = -1.0;
        CHECK_THROWS_AS(m.posterior_logprob(prior, y), std::invalid_argument);
    }
}

TEST_CASE("tape posterior matches the plain path and finite differences") {
    Rng rng(333);
    Prior prior{4};
    FlowModel m = random_flow(4, rng, 8, 0.3);
    ad::RowMat y = random_batch(6, 4, rng, -0.9, 0.9);

    SECTION("values agree") {
        ad::Tape t;
        std::vector<ad::Var> leaves;
        for (const ad::Tensor* p : m.params()) leaves.push_back(t.leaf(*p));
        ad::Var lp = m.posterior_logprob_tape(t, prior, y, leaves);
        Eigen::VectorXd plain = m.posterior_logprob(prior, y);
        for (Eigen::Index r = 0; r < 6; ++r)
            CHECK(t.val(lp).at(static_cast<std::size_t>(r), 0) ==
                  Catch::Approx(plain[r]).margin(1e-11));
    }
    SECTION("parameter gradients match finite differences") {
        std::vector<ad::Tensor> params;
        for (const ad::Tensor* p : m.params()) params.push_back(*p);
        auto value = [&](const std::vector<ad::Tensor>& ps) {
            FlowModel mm = m;
            auto ptrs = mm.params();
            for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = ps[i];
            return mm.posterior_logprob(prior, y).sum();
        };
        ad::Tape t;
        std::vector<ad::Var> leaves;
        for (const ad::Tensor& p : params) leaves.push_back(t.leaf(p));
        ad::Var root = t.sum(m.posterior_logprob_tape(t, prior, y, leaves));
        auto grads = t.backward(root);
        std::vector<ad::Tensor> analytic;
        for (ad::Var v : leaves) analytic.push_back(t.grad(grads, v));
        auto numeric = fd::gradient(value, params);
        CHECK(fd::max_rel_error(analytic, numeric) < 1e-5);
    }
}

TEST_CASE("discretized near-identity samples are uniform over sign patterns") {
    Rng rng(444);
    FlowModel m = FlowModel::make(4, 4, 8, 2);
    m.init_near_identity(rng);
    Prior prior{4};
    const std::size_t draws = 100000;
    ad::RowMat z = prior.sample(draws, rng);
    ad::RowMat y;
    m.forward(z, &y, nullptr);
    std::vector<int> counts(16, 0);
    for (Eigen::Index r = 0; r < y.rows(); ++r)
        counts[discretize(y.row(r)).bits] += 1;
    double expect = static_cast<double>(draws) / 16.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // chi-square critical value at p = 0.01 with 15 degrees of freedom.
    CHECK(chi2 < 30.577914166892724);
}
