#include "dfc/design.hpp"

#include <cmath>
#include <complex>
#include <random>
#include <set>
#include <string>

#include "dfc/errors.hpp"

namespace dfc {

namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index p = 0; p < A.rows(); ++p)
        for (Eigen::Index q = 0; q < A.cols(); ++q)
            out.block(p * B.rows(), q * B.cols(), B.rows(), B.cols()) = A(p, q) * B;
    return out;
}

Eigen::MatrixXd inverse_of(const Eigen::MatrixXd& A) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw NumericalError("matrix inverse required but matrix is singular");
    return lu.inverse();
}

// Sylvester-based eigenstructure assignment: returns K with
// eig(F + G_map*K) = lam, where the columns of the solved X span the assigned
// eigenvectors.  Retries with fresh seeded right-hand sides when X is
// ill-conditioned.
Eigen::MatrixXd place_gain(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G_map,
                           const Eigen::VectorXd& lam, std::uint64_t seed) {
    const int n = static_cast<int>(F.rows()), m = static_cast<int>(G_map.cols());
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd lhs = kron(I, F) - kron(Eigen::MatrixXd(lam.asDiagonal()), I);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
    if (!lu.isInvertible())
        throw NumericalError("pole placement failed: requested poles collide with fixed modes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0; attempt < 20; ++attempt) {
        Eigen::MatrixXd G(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) G(i, j) = unit(rng);
        const Eigen::MatrixXd BG = -G_map * G;  // F X - X Lam = -G_map G
        const Eigen::Map<const Eigen::VectorXd> bg(BG.data(), n * n);
        const Eigen::VectorXd xv = lu.solve(bg);
        const Eigen::MatrixXd X = Eigen::Map<const Eigen::MatrixXd>(xv.data(), n, n);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
        if (svd.singularValues()(n - 1) <= 1e-10 * svd.singularValues()(0)) continue;
        // K = G X^-1 solved via X^T K^T = G^T.
        return X.transpose().partialPivLu().solve(G.transpose()).transpose();
    }
    throw NumericalError(
        "pole placement failed: could not construct a well-conditioned eigenvector basis");
}

} // namespace

Eigen::MatrixXd lyapunov_solve(const Eigen::MatrixXd& M, const Eigen::MatrixXd& S) {
    if (M.rows() != M.cols() || S.rows() != S.cols() || M.rows() != S.rows())
        throw UsageError("lyapunov_solve needs square matrices of equal size");
    if ((S - S.transpose()).norm() > 1e-9 * (S.norm() + 1.0))
        throw UsageError("lyapunov_solve needs a symmetric right-hand side");
    if (!is_hurwitz(M))
        throw NumericalError("lyapunov_solve requires a Hurwitz coefficient matrix");
    const Eigen::Index n = M.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd lhs = kron(I, M.transpose()) + kron(M.transpose(), I);
    const Eigen::Map<const Eigen::VectorXd> svec(S.data(), n * n);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
    if (!lu.isInvertible())
        throw NumericalError("Lyapunov operator is singular (eigenvalue pairing hits zero)");
    const Eigen::VectorXd pvec = lu.solve(-svec);
    Eigen::MatrixXd P = Eigen::Map<const Eigen::MatrixXd>(pvec.data(), n, n);
    P = 0.5 * (P + P.transpose());
    const double resid = (P * M + M.transpose() * P + S).norm();
    if (!(resid <= 1e-9 * (S.norm() + 1.0)))
        throw NumericalError("Lyapunov solve residual too large: " + std::to_string(resid));
    return P;
}

Gain pole_placement_gain(const StateSpaceModel& model, const std::vector<double>& poles,
                         std::uint64_t seed) {
    const int n = model.n();
    if (static_cast<int>(poles.size()) != n) throw UsageError("need exactly one pole per state");
    std::set<double> uniq(poles.begin(), poles.end());
    if (static_cast<int>(uniq.size()) != n) throw UsageError("placement poles must be distinct");
    for (double p : poles)
        if (!(p < 0.0)) throw UsageError("placement poles must be strictly negative reals");
    // Work in inverse coordinates: eig((I+BK)^-1 A) = p  <=>  eig(A^-1 + A^-1 B K) = 1/p.
    const Eigen::MatrixXd Abar = inverse_of(model.A);
    const Eigen::MatrixXd Bbar = Abar * model.B;
    Eigen::VectorXd lam(n);
    for (int j = 0; j < n; ++j) lam(j) = 1.0 / poles[j];
    return Gain{place_gain(Abar, Bbar, lam, seed)};
}

DfcSolution model_based_pi(const StateSpaceModel& model, const CostWeights& weights,
                           const Gain& K1, int max_iters, double eta, ModelPiTrace* trace) {
    if (K1.K.rows() != model.m() || K1.K.cols() != model.n())
        throw UsageError("initial gain dimensions do not match the model");
    if (max_iters < 1) throw UsageError("model_based_pi needs max_iters >= 1");
    if (!(eta > 0.0)) throw UsageError("model_based_pi needs eta > 0");
    const Eigen::MatrixXd Abar = inverse_of(model.A);
    const Eigen::MatrixXd Bbar = Abar * model.B;
    Eigen::MatrixXd K = K1.K;
    Eigen::MatrixXd P_prev;
    Eigen::MatrixXd P;
    int iters = 0;
    for (int i = 1; i <= max_iters; ++i) {
        // Policy evaluation in inverse coordinates: M_i is the inverse of the
        // closed-loop matrix, Hurwitz exactly when the policy is admissible.
        const Eigen::MatrixXd Mi = Abar + Bbar * K;
        if (!is_hurwitz(Mi)) {
            if (i == 1)
                throw NumericalError(
                    "initial gain is not admissible (derivative-feedback loop not Hurwitz)");
            throw NumericalError("policy iteration lost admissibility at iteration " +
                                 std::to_string(i));
        }
        const Eigen::MatrixXd S = weights.Q + K.transpose() * weights.R * K;
        P = lyapunov_solve(Mi, S);
        // Policy improvement with the open-loop input map.
        K = -weights.R.partialPivLu().solve(Bbar.transpose() * P);
        iters = i;
        if (trace) {
            trace->P.push_back(P);
            trace->K_next.push_back(K);
            trace->lyap_residual.push_back((P * Mi + Mi.transpose() * P + S).norm());
            trace->delta_p.push_back(i > 1 ? (P - P_prev).norm() : 0.0);
        }
        if (i > 1 && (P - P_prev).norm() < eta) break;
        P_prev = P;
    }
    const Eigen::MatrixXd Rinv_Bt = weights.R.partialPivLu().solve(Bbar.transpose());
    const double residual =
        (P * Abar + Abar.transpose() * P - P * Bbar * Rinv_Bt * P + weights.Q).norm();
    return DfcSolution{P, Gain{K}, iters, residual};
}

DfcSolution solve_dfc_are(const StateSpaceModel& model, const CostWeights& weights) {
    const int n = model.n(), m = model.m();
    if (weights.Q.rows() != n || weights.R.rows() != m)
        throw UsageError("cost weight dimensions do not match the model");
    // Zero state cost: the value function and the optimal gain are both zero.
    if (weights.Q.norm() == 0.0)
        return DfcSolution{Eigen::MatrixXd::Zero(n, n), Gain{Eigen::MatrixXd::Zero(m, n)}, 0, 0.0};

    const Eigen::MatrixXd Abar = inverse_of(model.A);
    const Eigen::MatrixXd Bbar = Abar * model.B;

    // PBH rank tests on the transformed pair.
    Eigen::EigenSolver<Eigen::MatrixXd> eig(Abar);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qeig(0.5 *
                                                              (weights.Q + weights.Q.transpose()));
    const Eigen::MatrixXd Qhalf =
        qeig.eigenvectors() *
        qeig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        qeig.eigenvectors().transpose();
    for (int k = 0; k < n; ++k) {
        const std::complex<double> lam = eig.eigenvalues()(k);
        Eigen::MatrixXcd pencil(n, n + m);
        pencil.leftCols(n) = Abar.cast<std::complex<double>>() -
                             lam * Eigen::MatrixXcd::Identity(n, n);
        pencil.rightCols(m) = Bbar.cast<std::complex<double>>();
        Eigen::JacobiSVD<Eigen::MatrixXcd> ssvd(pencil);
        if (lam.real() >= 0.0 && !(ssvd.singularValues()(n - 1) > 1e-9 * ssvd.singularValues()(0)))
            throw NumericalError("derivative-feedback Riccati design: pair is not stabilizable");
        Eigen::MatrixXcd obs(2 * n, n);
        obs.topRows(n) = Abar.cast<std::complex<double>>() -
                         lam * Eigen::MatrixXcd::Identity(n, n);
        obs.bottomRows(n) = Qhalf.cast<std::complex<double>>();
        Eigen::JacobiSVD<Eigen::MatrixXcd> osvd(obs);
        if (!(osvd.singularValues()(n - 1) > 1e-9 * osvd.singularValues()(0)))
            throw NumericalError(
                "derivative-feedback Riccati design: (Q^1/2, A^-1) is not observable");
    }

    std::vector<double> poles(n);
    for (int j = 0; j < n; ++j) poles[j] = -(5.0 + j);
    const Gain seed = pole_placement_gain(model, poles);
    DfcSolution sol = model_based_pi(model, weights, seed, 50, 1e-12);
    if (!(sol.residual < 1e-8 * weights.Q.norm()))
        throw NumericalError("derivative-feedback Riccati iteration did not converge: residual " +
                             std::to_string(sol.residual));
    return sol;
}

DfcSolution solve_state_feedback_are(const StateSpaceModel& model, const CostWeights& weights) {
    const int n = model.n(), m = model.m();
    if (weights.Q.rows() != n || weights.R.rows() != m)
        throw UsageError("cost weight dimensions do not match the model");
    if (weights.Q.norm() == 0.0)
        return DfcSolution{Eigen::MatrixXd::Zero(n, n), Gain{Eigen::MatrixXd::Zero(m, n)}, 0, 0.0};
    // Seed: place eig(A - B K) by the same Sylvester construction, direct coordinates.
    std::vector<double> poles(n);
    Eigen::VectorXd lam(n);
    for (int j = 0; j < n; ++j) lam(j) = -(5.0 + j);
    const Eigen::MatrixXd K0 = place_gain(model.A, -model.B, lam, 1);
    Eigen::MatrixXd K = K0, P, P_prev;
    int iters = 0;
    for (int i = 1; i <= 50; ++i) {
        const Eigen::MatrixXd Acl = model.A - model.B * K;
        if (!is_hurwitz(Acl))
            throw NumericalError("state-feedback iteration lost admissibility at iteration " +
                                 std::to_string(i));
        const Eigen::MatrixXd S = weights.Q + K.transpose() * weights.R * K;
        P = lyapunov_solve(Acl, S);
        K = weights.R.partialPivLu().solve(model.B.transpose() * P);
        iters = i;
        if (i > 1 && (P - P_prev).norm() < 1e-12) break;
        P_prev = P;
    }
    const Eigen::MatrixXd Rinv_Bt = weights.R.partialPivLu().solve(model.B.transpose());
    const double residual = (model.A.transpose() * P + P * model.A -
                             P * model.B * Rinv_Bt * P + weights.Q)
                                .norm();
    if (!(residual < 1e-8 * weights.Q.norm()))
        throw NumericalError("state-feedback Riccati iteration did not converge");
    return DfcSolution{P, Gain{K}, iters, residual};
}

CostEvaluation evaluate_policy_cost(const Trajectory& test_run, const CostWeights& weights) {
    test_run.validate();
    if (weights.Q.rows() != test_run.n() || weights.R.rows() != test_run.m())
        throw UsageError("cost weight dimensions do not match the trajectory");
    const int N = test_run.samples();
    Eigen::VectorXd g(N);
    for (int k = 0; k < N; ++k) {
        const Eigen::VectorXd xd = test_run.xdot_meas.row(k).transpose();
        const Eigen::VectorXd u = test_run.u.row(k).transpose();
        g(k) = xd.dot(weights.Q * xd) + u.dot(weights.R * u);
    }
    CostEvaluation out;
    out.cost = test_run.ts * (g.sum() - 0.5 * (g(0) + g(N - 1)));
    const int tail_start = N - std::max(1, N / 10);
    const double total = g.sum();
    out.tail_fraction = total > 0.0 ? g.segment(tail_start, N - tail_start).sum() / total : 0.0;
    out.tail_warning = out.tail_fraction > 0.01;
    return out;
}

double quadratic_value(const Eigen::MatrixXd& P, const Eigen::VectorXd& x0) {
    if (P.rows() != P.cols() || P.rows() != x0.size()) throw UsageError("value dimension mismatch");
    return x0.dot(P * x0);
}

} // namespace dfc
