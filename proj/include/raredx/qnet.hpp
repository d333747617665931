#pragma once

// Q-value approximator for one task:
//   per-position ternary embedding (dim -> 3 dim), dense+ReLU (3 dim -> 2 dim),
//   dense+ReLU (2 dim -> dim), dense linear (dim -> dim).
// Parameters live in one flat vector so the optimizer and serialization see a
// single buffer.

#include "raredx/env.hpp"
#include "raredx/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace raredx {

struct QSample {
    KnowledgeState s;
    int a = -1;
    double target = 0;
};

class QNetwork {
public:
    using Mat = Eigen::MatrixXd;
    using Vec = Eigen::VectorXd;
    using MatMap = Eigen::Map<Mat>;
    using CMatMap = Eigen::Map<const Mat>;
    using VecMap = Eigen::Map<Vec>;
    using CVecMap = Eigen::Map<const Vec>;

    QNetwork() = default;

    explicit QNetwork(int dim) : dim_(dim) {
        if (dim < 1) fail(Errc::dimension, "network dimension must be >= 1");
        params_ = Vec::Zero(param_count(dim));
        m_ = Vec::Zero(params_.size());
        v_ = Vec::Zero(params_.size());
    }

    template <class Rng>
    QNetwork(int dim, Rng& rng, double scale = 0.05) : QNetwork(dim) {
        std::uniform_real_distribution<double> u(-scale, scale);
        for (Eigen::Index i = 0; i < params_.size(); ++i) params_[i] = u(rng);
    }

    static Eigen::Index param_count(int n) {
        return Eigen::Index(9) * n + (2 * n) * (3 * n) + 2 * n + n * (2 * n) + n + n * n + n;
    }

    int dim() const { return dim_; }
    long steps() const { return steps_; }
    Vec& params() { return params_; }
    const Vec& params() const { return params_; }

    /// Raw Q-values; observed positions are not masked here.
    Vec forward(const KnowledgeState& s) const {
        check(s);
        Vec h0(3 * dim_);
        embed(s, h0.data());
        const Vec a1 = (W1() * h0 + b1()).cwiseMax(0.0);
        const Vec a2 = (W2() * a1 + b2()).cwiseMax(0.0);
        return W3() * a2 + b3();
    }

    /// Q-values with observed positions at -inf.
    Vec masked(const KnowledgeState& s) const {
        Vec q = forward(s);
        for (int i = 0; i < dim_; ++i) {
            if (s[i] != kUnobserved) q[i] = -std::numeric_limits<double>::infinity();
        }
        return q;
    }

    int greedy(const KnowledgeState& s) const {
        const Vec q = masked(s);
        int best = -1;
        for (int i = 0; i < dim_; ++i) {
            if (s[i] == kUnobserved && (best < 0 || q[i] > q[best])) best = i;
        }
        if (best < 0) fail(Errc::contract_violation, "no unobserved action left");
        return best;
    }

    double value(const KnowledgeState& s) const { return masked(s)[greedy(s)]; }

    /// Mean squared error on the taken-action outputs and its gradient.
    double loss_and_grad(const std::vector<QSample>& batch, Vec& grad) const {
        const int B = static_cast<int>(batch.size());
        if (B == 0) fail(Errc::invalid_argument, "empty batch");
        Mat H0(3 * dim_, B);
        for (int b = 0; b < B; ++b) {
            check(batch[b].s);
            if (batch[b].a < 0 || batch[b].a >= dim_) fail(Errc::dimension, "action index out of range");
            if (!std::isfinite(batch[b].target)) fail(Errc::invalid_argument, "non-finite training target");
            embed(batch[b].s, H0.col(b).data());
        }
        const Mat Z1 = (W1() * H0).colwise() + b1();
        const Mat A1 = Z1.cwiseMax(0.0);
        const Mat Z2 = (W2() * A1).colwise() + b2();
        const Mat A2 = Z2.cwiseMax(0.0);
        const Mat Q = (W3() * A2).colwise() + b3();

        Mat dQ = Mat::Zero(dim_, B);
        double loss = 0;
        for (int b = 0; b < B; ++b) {
            const double r = Q(batch[b].a, b) - batch[b].target;
            loss += r * r;
            dQ(batch[b].a, b) = 2 * r / B;
        }
        loss /= B;

        grad = Vec::Zero(params_.size());
        auto gW1 = MatMap(grad.data() + off_W1(), 2 * dim_, 3 * dim_);
        auto gb1 = VecMap(grad.data() + off_b1(), 2 * dim_);
        auto gW2 = MatMap(grad.data() + off_W2(), dim_, 2 * dim_);
        auto gb2 = VecMap(grad.data() + off_b2(), dim_);
        auto gW3 = MatMap(grad.data() + off_W3(), dim_, dim_);
        auto gb3 = VecMap(grad.data() + off_b3(), dim_);

        gW3.noalias() = dQ * A2.transpose();
        gb3 = dQ.rowwise().sum();
        const Mat dZ2 = (W3().transpose() * dQ).cwiseProduct((Z2.array() > 0).cast<double>().matrix());
        gW2.noalias() = dZ2 * A1.transpose();
        gb2 = dZ2.rowwise().sum();
        const Mat dZ1 = (W2().transpose() * dZ2).cwiseProduct((Z1.array() > 0).cast<double>().matrix());
        gW1.noalias() = dZ1 * H0.transpose();
        gb1 = dZ1.rowwise().sum();
        const Mat dH0 = W1().transpose() * dZ1;
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < dim_; ++i) {
                const int row = off_E() + 9 * i + 3 * batch[b].s[i];
                for (int u = 0; u < 3; ++u) grad[row + u] += dH0(3 * i + u, b);
            }
        }
        return loss;
    }

    double loss(const std::vector<QSample>& batch) const {
        Vec g;
        return loss_and_grad(batch, g);
    }

    /// One Adam step on the batch; returns the loss before the step.
    double train_step(const std::vector<QSample>& batch, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
        Vec g;
        const double l = loss_and_grad(batch, g);
        if (!std::isfinite(l) || !g.allFinite()) {
            fail(Errc::diverged, "non-finite loss or gradient", "step " + std::to_string(steps_) + ", loss " + std::to_string(l));
        }
        ++steps_;
        m_ = beta1 * m_ + (1 - beta1) * g;
        v_ = beta2 * v_ + (1 - beta2) * g.cwiseProduct(g);
        const double c1 = 1 - std::pow(beta1, static_cast<double>(steps_));
        const double c2 = 1 - std::pow(beta2, static_cast<double>(steps_));
        params_.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
        return l;
    }

    /// Plain gradient step (used where a first-order descent check is wanted).
    double sgd_step(const std::vector<QSample>& batch, double lr) {
        Vec g;
        const double l = loss_and_grad(batch, g);
        if (!std::isfinite(l)) fail(Errc::diverged, "non-finite loss");
        params_ -= lr * g;
        ++steps_;
        return l;
    }

    void set_params(const Vec& p) {
        if (p.size() != params_.size()) fail(Errc::dimension, "parameter vector size mismatch");
        params_ = p;
    }

    void set_optimizer_state(const Vec& m, const Vec& v, long steps) {
        if (m.size() != params_.size() || v.size() != params_.size()) fail(Errc::dimension, "optimizer state size mismatch");
        m_ = m;
        v_ = v;
        steps_ = steps;
    }

    const Vec& adam_m() const { return m_; }
    const Vec& adam_v() const { return v_; }

    bool operator==(const QNetwork& o) const {
        return dim_ == o.dim_ && steps_ == o.steps_ && params_ == o.params_ && m_ == o.m_ && v_ == o.v_;
    }

private:
    int dim_ = 0;
    long steps_ = 0;
    Vec params_, m_, v_;

    // Layout: E (dim x 3 x 3), W1 (2d x 3d), b1, W2 (d x 2d), b2, W3 (d x d), b3.
    int off_E() const { return 0; }
    int off_W1() const { return 9 * dim_; }
    int off_b1() const { return off_W1() + 6 * dim_ * dim_; }
    int off_W2() const { return off_b1() + 2 * dim_; }
    int off_b2() const { return off_W2() + 2 * dim_ * dim_; }
    int off_W3() const { return off_b2() + dim_; }
    int off_b3() const { return off_W3() + dim_ * dim_; }

    CMatMap W1() const { return CMatMap(params_.data() + off_W1(), 2 * dim_, 3 * dim_); }
    CVecMap b1() const { return CVecMap(params_.data() + off_b1(), 2 * dim_); }
    CMatMap W2() const { return CMatMap(params_.data() + off_W2(), dim_, 2 * dim_); }
    CVecMap b2() const { return CVecMap(params_.data() + off_b2(), dim_); }
    CMatMap W3() const { return CMatMap(params_.data() + off_W3(), dim_, dim_); }
    CVecMap b3() const { return CVecMap(params_.data() + off_b3(), dim_); }

    void check(const KnowledgeState& s) const {
        if (static_cast<int>(s.size()) != dim_) {
            fail(Errc::dimension, "state length " + std::to_string(s.size()) + " != network dimension " + std::to_string(dim_));
        }
    }

    void embed(const KnowledgeState& s, double* out) const {
        for (int i = 0; i < dim_; ++i) {
            if (s[i] > kUnobserved) fail(Errc::invalid_argument, "state entries must be 0, 1 or 2");
            const double* row = params_.data() + off_E() + 9 * i + 3 * s[i];
            out[3 * i] = row[0];
            out[3 * i + 1] = row[1];
            out[3 * i + 2] = row[2];
        }
    }
};

} // namespace raredx
