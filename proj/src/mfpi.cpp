#include "dfc/mfpi.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "dfc/errors.hpp"

namespace dfc {

namespace {

// vec-pair(a, b)[i*nb + j] = a_i * b_j.  Matches the block layout of the
// matrix Kronecker products used in build_regression.
Eigen::VectorXd vec_pair(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    Eigen::VectorXd out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index p = 0; p < A.rows(); ++p)
        for (Eigen::Index q = 0; q < A.cols(); ++q)
            out.block(p * B.rows(), q * B.cols(), B.rows(), B.cols()) = A(p, q) * B;
    return out;
}

} // namespace

int svec_dim(int n) {
    if (n < 1) throw UsageError("svec_dim needs n >= 1");
    return n * (n + 1) / 2;
}

Eigen::VectorXd svec_compress(const Eigen::VectorXd& d, int n) {
    if (d.size() != static_cast<Eigen::Index>(n) * n)
        throw UsageError("svec_compress expects an n^2 feature vector");
    Eigen::VectorXd s(svec_dim(n));
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
            s(k++) = (i == j) ? d(i * n + i) : d(i * n + j) + d(j * n + i);
    return s;
}

Eigen::MatrixXd svec_to_matrix(const Eigen::VectorXd& s, int n) {
    if (s.size() != svec_dim(n)) throw UsageError("svec_to_matrix size mismatch");
    Eigen::MatrixXd P(n, n);
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            P(i, j) = s(k);
            P(j, i) = s(k);
            ++k;
        }
    return P;
}

Eigen::VectorXd matrix_to_svec(const Eigen::MatrixXd& P) {
    if (P.rows() != P.cols()) throw UsageError("matrix_to_svec needs a square matrix");
    const int n = static_cast<int>(P.rows());
    Eigen::VectorXd s(svec_dim(n));
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) s(k++) = 0.5 * (P(i, j) + P(j, i));
    return s;
}

int regression_width(int n, int m) {
    if (n < 1 || m < 1) throw UsageError("regression_width needs n, m >= 1");
    return svec_dim(n) + n + n * m;
}

KronIntegrals kron_integrals(const Trajectory& traj, double window) {
    traj.validate();
    if (!(window > 0.0)) throw UsageError("regression window must be positive");
    const int per = static_cast<int>(std::lround(window / traj.ts));
    if (per < 2 || std::abs(per * traj.ts - window) > 1e-9 * window + 1e-15)
        throw UsageError("regression window must be a multiple (>= 2) of the sample period");
    if (per % 2 != 0)
        throw UsageError("regression window must span an even number of steps for the quadrature");
    const int n = traj.n(), m = traj.m();
    const int N = (traj.samples() - 1) / per;
    if (N < 1) throw UsageError("trajectory too short for a single regression window");

    KronIntegrals out;
    out.n = n;
    out.m = m;
    out.Ixx.setZero(N, n * n);
    out.Ixu.setZero(N, n * m);
    out.Dq.setZero(N, svec_dim(n));
    out.Dx.setZero(N, n);

    // Composite Simpson weights on per+1 grid points.
    Eigen::VectorXd w(per + 1);
    w(0) = 1.0;
    w(per) = 1.0;
    for (int k = 1; k < per; ++k) w(k) = (k % 2 == 1) ? 4.0 : 2.0;
    w *= traj.ts / 3.0;

    for (int j = 0; j < N; ++j) {
        const int lo = j * per;
        Eigen::RowVectorXd ixx = Eigen::RowVectorXd::Zero(n * n);
        Eigen::RowVectorXd ixu = Eigen::RowVectorXd::Zero(n * m);
        for (int k = 0; k <= per; ++k) {
            const Eigen::VectorXd xd = traj.xdot_meas.row(lo + k).transpose();
            const Eigen::VectorXd u = traj.u.row(lo + k).transpose();
            ixx += w(k) * vec_pair(xd, xd).transpose();
            ixu += w(k) * vec_pair(xd, u).transpose();
        }
        out.Ixx.row(j) = ixx;
        out.Ixu.row(j) = ixu;
        const Eigen::VectorXd xa = traj.x_meas.row(lo).transpose();
        const Eigen::VectorXd xb = traj.x_meas.row(lo + per).transpose();
        out.Dq.row(j) = svec_compress(vec_pair(xb, xb) - vec_pair(xa, xa), n).transpose();
        out.Dx.row(j) = (xb - xa).transpose();
    }
    return out;
}

RegressionSystem build_regression(const KronIntegrals& data, const Gain& K_i,
                                  const CostWeights& weights) {
    const int n = data.n, m = data.m;
    if (K_i.K.rows() != m || K_i.K.cols() != n)
        throw UsageError("gain dimensions do not match the window integrals");
    if (weights.Q.rows() != n || weights.R.rows() != m)
        throw UsageError("cost weight dimensions do not match the window integrals");
    const int N = data.windows();
    const int L = regression_width(n, m);

    const Eigen::MatrixXd I_n = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd KtR = K_i.K.transpose() * weights.R;           // n x m
    const Eigen::MatrixXd gain_map = -2.0 * (data.Ixx * kron(I_n, KtR)   // N x n*m
                                             + data.Ixu * kron(I_n, weights.R));

    const Eigen::MatrixXd S = weights.Q + K_i.K.transpose() * weights.R * K_i.K;
    Eigen::VectorXd vecS(n * n);
    for (int p = 0; p < n; ++p)
        for (int r = 0; r < n; ++r) vecS(p * n + r) = S(p, r);

    RegressionSystem sys;
    sys.n = n;
    sys.m = m;
    sys.X.resize(N, L);
    sys.X.leftCols(svec_dim(n)) = data.Dq;
    sys.X.middleCols(svec_dim(n), n) = data.Dx;
    sys.X.rightCols(n * m) = gain_map;
    sys.Y = -(data.Ixx * vecS);
    return sys;
}

PiIterate pi_solve(const RegressionSystem& sys, double ridge) {
    const int n = sys.n, m = sys.m;
    const int L = regression_width(n, m);
    if (sys.X.cols() != L || sys.X.rows() != sys.Y.size())
        throw UsageError("regression system is inconsistent");
    if (sys.X.rows() < L) {
        std::ostringstream msg;
        msg << "insufficient excitation: " << sys.X.rows() << " regression windows for " << L
            << " unknowns";
        throw ExcitationError(msg.str());
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(sys.X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double smax = sv(0), smin = sv(L - 1);
    if (!(smin > 1e-8 * smax)) {
        std::ostringstream msg;
        msg << "insufficient excitation: regression matrix is rank deficient; singular values = [";
        for (int i = 0; i < L; ++i) msg << (i ? ", " : "") << sv(i);
        msg << "]";
        throw ExcitationError(msg.str());
    }
    Eigen::VectorXd theta;
    if (ridge > 0.0) {
        // Augmented orthogonal solve keeps the conditioning of X itself.
        Eigen::MatrixXd Xa(sys.X.rows() + L, L);
        Xa.topRows(sys.X.rows()) = sys.X;
        Xa.bottomRows(L) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(L, L);
        Eigen::VectorXd Ya = Eigen::VectorXd::Zero(Xa.rows());
        Ya.head(sys.X.rows()) = sys.Y;
        theta = Xa.colPivHouseholderQr().solve(Ya);
    } else {
        theta = svd.solve(sys.Y);
    }

    PiIterate it;
    it.P = svec_to_matrix(theta.head(svec_dim(n)), n);
    it.eps = theta.segment(svec_dim(n), n);
    Eigen::MatrixXd K(m, n);
    for (int c = 0; c < n * m; ++c) K(c % m, c / m) = theta(svec_dim(n) + n + c);
    it.K_next = Gain{std::move(K)};
    it.ls_residual = (sys.X * theta - sys.Y).norm();
    it.condition_number = smax / smin;
    return it;
}

void PiConfig::validate() const {
    if (!(window > 0.0)) throw UsageError("PiConfig.window must be positive");
    if (!(eta_bar > 0.0)) throw UsageError("PiConfig.eta_bar must be positive");
    if (!(zeta_bar > 0.0)) throw UsageError("PiConfig.zeta_bar must be positive");
    if (max_inner_iters < 1) throw UsageError("PiConfig.max_inner_iters must be >= 1");
    if (max_epochs < 1) throw UsageError("PiConfig.max_epochs must be >= 1");
    if (min_epochs < 1 || min_epochs > max_epochs)
        throw UsageError("PiConfig.min_epochs must be in [1, max_epochs]");
    if (ridge < 0.0) throw UsageError("PiConfig.ridge must be non-negative");
}

InnerPiResult inner_pi(const KronIntegrals& data, const Gain& K_init,
                       const CostWeights& weights, const PiConfig& cfg) {
    cfg.validate();
    InnerPiResult res;
    Gain K = K_init;
    Eigen::MatrixXd P_prev;
    double last_dp = 0.0;
    for (int i = 1; i <= cfg.max_inner_iters; ++i) {
        const RegressionSystem sys = build_regression(data, K, weights);
        PiIterate it = pi_solve(sys, cfg.ridge);
        K = it.K_next;
        res.iterates.push_back(std::move(it));
        res.iterations = i;
        if (i > 1) {
            last_dp = (res.iterates.back().P - P_prev).norm();
            if (last_dp < cfg.eta_bar) {
                res.converged = true;
                break;
            }
        }
        P_prev = res.iterates.back().P;
    }
    if (!res.converged && cfg.max_inner_iters > 1 && cfg.require_inner_convergence) {
        std::ostringstream msg;
        msg << "inner policy iteration did not converge after " << res.iterations
            << " iterations; last ||P_i - P_{i-1}||_F = " << last_dp << " (tolerance "
            << cfg.eta_bar << ")";
        throw NumericalError(msg.str());
    }
    res.K_final = K;
    res.P_final = res.iterates.back().P;
    res.eps_final = res.iterates.back().eps;
    return res;
}

InnerPiResult inner_pi(const Trajectory& traj, const Gain& K_init, const CostWeights& weights,
                       const PiConfig& cfg) {
    return inner_pi(kron_integrals(traj, cfg.window), K_init, weights, cfg);
}

TrainingResult multi_epoch_train(const Gain& K0, const CostWeights& weights,
                                 const PiConfig& cfg, const TrainingEnv& env) {
    cfg.validate();
    if (!env.collect || !env.evaluate)
        throw UsageError("training environment needs collect and evaluate callbacks");
    TrainingResult res;
    Gain K = K0;
    double V_prev = 0.0;
    for (int e = 1; e <= cfg.max_epochs; ++e) {
        const Trajectory traj = env.collect(K);
        const KronIntegrals data = kron_integrals(traj, cfg.window);
        const InnerPiResult inner = inner_pi(data, K, weights, cfg);

        EpochRecord rec;
        rec.epoch = e;
        rec.gain_in = K;
        rec.gain_out = inner.K_final;
        rec.inner_iterations = inner.iterations;
        rec.inner_converged = inner.converged;
        for (std::size_t i = 0; i < inner.iterates.size(); ++i) {
            const PiIterate& it = inner.iterates[i];
            rec.condition_number = std::max(rec.condition_number, it.condition_number);
            rec.inner_dp.push_back(i > 0 ? (it.P - inner.iterates[i - 1].P).norm() : 0.0);
            rec.inner_dk.push_back(i > 0 ? (it.K_next.K - inner.iterates[i - 1].K_next.K).norm()
                                         : (it.K_next.K - K.K).norm());
        }
        rec.cost = env.evaluate(inner.K_final);
        rec.delta_v = e > 1 ? std::abs(rec.cost - V_prev) : 0.0;
        res.epochs.push_back(rec);
        if (env.on_epoch) env.on_epoch(rec);

        K = inner.K_final;
        if (e >= 2 && e >= cfg.min_epochs && rec.delta_v < cfg.zeta_bar) {
            res.stopped_by_tolerance = true;
            break;
        }
        V_prev = rec.cost;
    }
    res.K_final = K;
    res.final_cost = res.epochs.back().cost;
    return res;
}

} // namespace dfc
