#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dfc/design.hpp"
#include "dfc/errors.hpp"
#include "dfc/maglev.hpp"
#include "dfc/mfpi.hpp"
#include "dfc/sim.hpp"

namespace {

dfc::CostWeights nominal_weights() {
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2);
    R(1, 1) = 2.0;
    return dfc::CostWeights{Eigen::MatrixXd::Identity(4, 4), R};
}

// Ideal learning run: reference model, exact derivatives, broadband excitation.
dfc::Trajectory ideal_learning_run(const dfc::Gain& K, std::uint64_t seed,
                                   const Eigen::VectorXd& bias = Eigen::VectorXd()) {
    dfc::ExcitationSpec spec;
    spec.amplitude = 0.1;
    spec.seed = seed;
    const dfc::Multisine ms(spec, 2, 2.0);
    dfc::SensingOptions sensing;
    if (bias.size() > 0) sensing.bias = bias;
    return dfc::simulate_dfc_closed_loop(dfc::nominal_reference_model(), K, &ms, sensing,
                                         Eigen::VectorXd::Zero(4), 1e-3, 2.0);
}

dfc::Trajectory constant_rate_trajectory(int samples, const Eigen::VectorXd& c,
                                         const Eigen::VectorXd& d) {
    dfc::Trajectory traj;
    traj.ts = 1e-3;
    traj.t = Eigen::VectorXd::LinSpaced(samples, 0.0, (samples - 1) * traj.ts);
    const int n = static_cast<int>(c.size());
    traj.x = traj.t * c.transpose();  // x(t) = c * t  =>  xdot = c
    traj.x_meas = traj.x;
    traj.xdot_meas = Eigen::MatrixXd::Ones(samples, 1) * c.transpose();
    traj.u = Eigen::MatrixXd::Ones(samples, 1) * d.transpose();
    (void)n;
    return traj;
}

} // namespace

TEST(Mfpi, RegressionWidthForPlantIsTwentyTwo) {
    EXPECT_EQ(dfc::regression_width(4, 2), 22);
    EXPECT_EQ(dfc::svec_dim(4), 10);
    EXPECT_EQ(dfc::regression_width(1, 1), 3);
}

TEST(Mfpi, SvecRoundTrips) {
    Eigen::MatrixXd P(3, 3);
    P << 4.0, 1.5, -2.0,
        1.5, 3.0, 0.25,
        -2.0, 0.25, 7.0;
    const Eigen::VectorXd s = dfc::matrix_to_svec(P);
    ASSERT_EQ(s.size(), dfc::svec_dim(3));
    const Eigen::MatrixXd back = dfc::svec_to_matrix(s, 3);
    EXPECT_EQ((back - P).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((back - back.transpose()).norm(), 0.0);

    // Compression/parametrization adjointness: for any symmetric P and any x,
    // svec_compress(vec-pair(x,x))ᵀ · svec(P) = xᵀ P x.
    Eigen::VectorXd x(3);
    x << 0.3, -1.2, 0.7;
    Eigen::VectorXd d(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d(i * 3 + j) = x(i) * x(j);
    const Eigen::VectorXd comp = dfc::svec_compress(d, 3);
    EXPECT_NEAR(comp.dot(s), x.dot(P * x), 1e-14);
}

TEST(Mfpi, KronIntegralsConstantRates) {
    Eigen::VectorXd c(2), d(1);
    c << 0.5, -1.5;
    d << 2.0;
    // 41 samples at 1 ms; windows of 10 ms -> 4 full windows.
    const dfc::Trajectory traj = constant_rate_trajectory(41, c, d);
    const dfc::KronIntegrals ki = dfc::kron_integrals(traj, 0.01);
    EXPECT_EQ(ki.windows(), 4);
    EXPECT_EQ(ki.n, 2);
    EXPECT_EQ(ki.m, 1);
    const double T = 0.01;
    for (int w = 0; w < 4; ++w) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                EXPECT_NEAR(ki.Ixx(w, i * 2 + j), T * c(i) * c(j), 1e-12);
        for (int i = 0; i < 2; ++i)
            EXPECT_NEAR(ki.Ixu(w, i), T * c(i) * d(0), 1e-12);
        // Endpoint differences of x(t) = c·t over [wT, (w+1)T].
        const double t0 = w * T, t1 = (w + 1) * T;
        EXPECT_NEAR(ki.Dx(w, 0), c(0) * (t1 - t0), 1e-12);
        EXPECT_NEAR(ki.Dx(w, 1), c(1) * (t1 - t0), 1e-12);
        // Compressed quadratic features: diag then doubled off-diagonal.
        EXPECT_NEAR(ki.Dq(w, 0), c(0) * c(0) * (t1 * t1 - t0 * t0), 1e-12);
        EXPECT_NEAR(ki.Dq(w, 1), 2.0 * c(0) * c(1) * (t1 * t1 - t0 * t0), 1e-12);
        EXPECT_NEAR(ki.Dq(w, 2), c(1) * c(1) * (t1 * t1 - t0 * t0), 1e-12);
    }
}

TEST(Mfpi, KronIntegralsExponentialOracle) {
    // x(t) = e^{-t}: integral of xdot^2 over [0, 1] is (1 - e^{-2})/2.
    dfc::Trajectory traj;
    traj.ts = 1e-3;
    const int N = 1001;
    traj.t = Eigen::VectorXd::LinSpaced(N, 0.0, 1.0);
    traj.x.resize(N, 1);
    traj.u = Eigen::MatrixXd::Zero(N, 1);
    for (int k = 0; k < N; ++k) traj.x(k, 0) = std::exp(-traj.t(k));
    traj.x_meas = traj.x;
    traj.xdot_meas = -traj.x;
    const dfc::KronIntegrals ki = dfc::kron_integrals(traj, 1.0);
    ASSERT_EQ(ki.windows(), 1);
    EXPECT_NEAR(ki.Ixx(0, 0), (1.0 - std::exp(-2.0)) / 2.0, 1e-6);
    EXPECT_NEAR(ki.Dq(0, 0), std::exp(-2.0) - 1.0, 1e-12);
    EXPECT_NEAR(ki.Dx(0, 0), std::exp(-1.0) - 1.0, 1e-12);

    // A resting trajectory integrates to all zeros.
    dfc::Trajectory rest = traj;
    rest.x.setZero();
    rest.x_meas.setZero();
    rest.xdot_meas.setZero();
    const dfc::KronIntegrals zero = dfc::kron_integrals(rest, 1.0);
    EXPECT_EQ(zero.Ixx.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(zero.Dq.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mfpi, KronIntegralsGridAlignment) {
    Eigen::VectorXd c(1), d(1);
    c << 1.0;
    d << 0.0;
    const dfc::Trajectory traj = constant_rate_trajectory(101, c, d);
    // Window not a multiple of the sample period.
    EXPECT_THROW(dfc::kron_integrals(traj, 0.0105), dfc::UsageError);
    // Window spanning an odd number of steps (quadrature needs an even count).
    EXPECT_THROW(dfc::kron_integrals(traj, 0.009), dfc::UsageError);
    // Window longer than the data.
    EXPECT_THROW(dfc::kron_integrals(traj, 0.2), dfc::UsageError);
    EXPECT_THROW(dfc::kron_integrals(traj, 0.0), dfc::UsageError);
    // A single sample-pair window is degenerate for Simpson quadrature.
    EXPECT_NO_THROW(dfc::kron_integrals(traj, 0.002));
}

TEST(Mfpi, PiSolveRecoversPlantedParameters) {
    // Y = X·theta with a well-conditioned synthetic X: the solver must recover
    // theta and unpack the blocks with the documented layout.
    const int n = 4, m = 2;
    const int L = dfc::regression_width(n, m);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd P(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) P(i, j) = dist(rng);
    P = (0.5 * (P + P.transpose())).eval();
    Eigen::VectorXd eps(n);
    Eigen::MatrixXd K(m, n);
    for (int i = 0; i < n; ++i) eps(i) = dist(rng);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) K(r, c) = dist(rng);

    Eigen::VectorXd theta(L);
    theta << dfc::matrix_to_svec(P), eps, Eigen::Map<const Eigen::VectorXd>(K.data(), m * n);

    dfc::RegressionSystem sys;
    sys.n = n;
    sys.m = m;
    sys.X.resize(3 * L, L);
    for (int r = 0; r < sys.X.rows(); ++r)
        for (int c = 0; c < L; ++c) sys.X(r, c) = dist(rng);
    sys.Y = sys.X * theta;

    const dfc::PiIterate it = dfc::pi_solve(sys);
    EXPECT_LT((it.P - P).norm(), 1e-8);
    EXPECT_LT((it.eps - eps).norm(), 1e-8);
    EXPECT_LT((it.K_next.K - K).norm(), 1e-8);
    EXPECT_EQ((it.P - it.P.transpose()).norm(), 0.0);  // symmetric by construction
    EXPECT_LT(it.ls_residual, 1e-8);
    EXPECT_GT(it.condition_number, 1.0);

    // Duplicating every row leaves the least-squares solution unchanged.
    dfc::RegressionSystem doubled;
    doubled.n = n;
    doubled.m = m;
    doubled.X.resize(2 * sys.X.rows(), L);
    doubled.X << sys.X, sys.X;
    doubled.Y.resize(2 * sys.Y.size());
    doubled.Y << sys.Y, sys.Y;
    const dfc::PiIterate it2 = dfc::pi_solve(doubled);
    EXPECT_LT((it2.P - it.P).norm(), 1e-9);
    EXPECT_LT((it2.K_next.K - it.K_next.K).norm(), 1e-9);
}

TEST(Mfpi, PiSolveFlagsInsufficientExcitation) {
    const int L = dfc::regression_width(4, 2);
    dfc::RegressionSystem sys;
    sys.n = 4;
    sys.m = 2;
    // Enough rows but rank-deficient content (every row identical).
    sys.X = Eigen::MatrixXd::Ones(2 * L, L);
    sys.Y = Eigen::VectorXd::Ones(2 * L);
    try {
        dfc::pi_solve(sys);
        FAIL() << "expected excitation rejection";
    } catch (const dfc::ExcitationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("insufficient excitation"), std::string::npos);
        EXPECT_NE(msg.find("singular value"), std::string::npos);
    }
    // Fewer rows than unknowns is rejected up front.
    sys.X = Eigen::MatrixXd::Ones(L - 1, L);
    sys.Y = Eigen::VectorXd::Ones(L - 1);
    EXPECT_THROW(dfc::pi_solve(sys), dfc::ExcitationError);
}

TEST(Mfpi, FirstIterateMatchesModelBasedPolicyEvaluation) {
    // On ideal data the data-driven evaluation of K1 must match the
    // model-based Lyapunov evaluation and improvement step.
    const dfc::StateSpaceModel model = dfc::nominal_reference_model();
    const dfc::CostWeights w = nominal_weights();
    const dfc::Gain K1 = dfc::nominal_initial_gain();

    dfc::ModelPiTrace trace;
    dfc::model_based_pi(model, w, K1, 2, 1e-12, &trace);

    const dfc::Trajectory traj = ideal_learning_run(K1, 1);
    dfc::PiConfig cfg;
    cfg.max_inner_iters = 1;
    cfg.require_inner_convergence = false;
    const dfc::InnerPiResult res = dfc::inner_pi(traj, K1, w, cfg);
    ASSERT_EQ(res.iterations, 1);
    EXPECT_LT((res.P_final - trace.P[0]).norm() / trace.P[0].norm(), 1e-4);
    EXPECT_LT((res.K_final.K - trace.K_next[0]).norm() / trace.K_next[0].norm(), 1e-4);
    // No bias in the data: the linear value term vanishes.
    EXPECT_LT(res.eps_final.cwiseAbs().maxCoeff(), 1e-6 * res.P_final.norm());
}

TEST(Mfpi, InnerPiReachesOptimalGain) {
    const dfc::StateSpaceModel model = dfc::nominal_reference_model();
    const dfc::CostWeights w = nominal_weights();
    const dfc::DfcSolution star = dfc::solve_dfc_are(model, w);

    const dfc::Trajectory traj = ideal_learning_run(dfc::nominal_initial_gain(), 1);
    dfc::PiConfig cfg;  // eta_bar 1e-6, up to 60 sweeps
    const dfc::InnerPiResult res = dfc::inner_pi(traj, dfc::nominal_initial_gain(), w, cfg);
    EXPECT_TRUE(res.converged);
    EXPECT_LE(res.iterations, 8);
    EXPECT_LT((res.K_final.K - star.K.K).norm(), 1e-2);
    EXPECT_LT((res.P_final - star.P).norm() / star.P.norm(), 1e-3);
    // Per-iterate values stay symmetric and the trace is populated.
    ASSERT_EQ(static_cast<int>(res.iterates.size()), res.iterations);
    for (const auto& it : res.iterates)
        EXPECT_EQ((it.P - it.P.transpose()).norm(), 0.0);
}

TEST(Mfpi, BiasIsAbsorbedByLinearTerm) {
    // Constant measurement bias x_b shifts only the linear coefficients:
    // eps ≈ -2·P·x_b while P and K are unchanged.
    const dfc::CostWeights w = nominal_weights();
    Eigen::VectorXd xb(4);
    xb << 0.002, 0.0, -0.001, 0.0;

    const dfc::Trajectory clean = ideal_learning_run(dfc::nominal_initial_gain(), 1);
    const dfc::Trajectory biased = ideal_learning_run(dfc::nominal_initial_gain(), 1, xb);
    dfc::PiConfig cfg;
    cfg.max_inner_iters = 1;
    cfg.require_inner_convergence = false;
    const dfc::InnerPiResult free_run = dfc::inner_pi(clean, dfc::nominal_initial_gain(), w, cfg);
    const dfc::InnerPiResult bias_run = dfc::inner_pi(biased, dfc::nominal_initial_gain(), w, cfg);

    const Eigen::VectorXd expected = -2.0 * bias_run.P_final * xb;
    EXPECT_LT((bias_run.eps_final - expected).norm() / expected.norm(), 0.05);
    EXPECT_LT((bias_run.K_final.K - free_run.K_final.K).norm(), 1e-3);
    EXPECT_LT((bias_run.P_final - free_run.P_final).norm() / free_run.P_final.norm(), 1e-3);
}

TEST(Mfpi, InnerNonConvergenceRaises) {
    dfc::PiConfig cfg;
    cfg.max_inner_iters = 2;
    cfg.eta_bar = 1e-300;  // unreachable tolerance
    const dfc::Trajectory traj = ideal_learning_run(dfc::nominal_initial_gain(), 2);
    try {
        dfc::inner_pi(traj, dfc::nominal_initial_gain(), nominal_weights(), cfg);
        FAIL() << "expected non-convergence error";
    } catch (const dfc::NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("did not converge"), std::string::npos);
    }
    // The single-sweep protocol opts out of the inner convergence requirement.
    cfg.max_inner_iters = 1;
    cfg.require_inner_convergence = false;
    EXPECT_NO_THROW(dfc::inner_pi(traj, dfc::nominal_initial_gain(), nominal_weights(), cfg));
}

TEST(Mfpi, ConfigValidation) {
    dfc::PiConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    dfc::PiConfig bad = cfg;
    bad.max_epochs = 0;
    EXPECT_THROW(bad.validate(), dfc::UsageError);
    bad = cfg;
    bad.window = 0.0;
    EXPECT_THROW(bad.validate(), dfc::UsageError);
    bad = cfg;
    bad.max_inner_iters = 0;
    EXPECT_THROW(bad.validate(), dfc::UsageError);
    bad = cfg;
    bad.min_epochs = 0;
    EXPECT_THROW(bad.validate(), dfc::UsageError);
    bad = cfg;
    bad.ridge = -1.0;
    EXPECT_THROW(bad.validate(), dfc::UsageError);
}

TEST(Mfpi, MultiEpochTrainingConvergesAndReusesData) {
    const dfc::StateSpaceModel model = dfc::nominal_reference_model();
    const dfc::CostWeights w = nominal_weights();
    const dfc::DfcSolution star = dfc::solve_dfc_are(model, w);
    Eigen::VectorXd x0(4);
    x0 << 0.005, 0.0, -0.005, 0.0;

    int collects = 0, evaluates = 0, callbacks = 0;
    dfc::TrainingEnv env;
    env.collect = [&](const dfc::Gain& K) {
        ++collects;
        return ideal_learning_run(K, 10 + collects);
    };
    env.evaluate = [&](const dfc::Gain& K) {
        ++evaluates;
        const dfc::Trajectory test =
            dfc::simulate_dfc_closed_loop(model, K, nullptr, {}, x0, 1e-3, 8.0);
        return dfc::evaluate_policy_cost(test, w).cost;
    };
    env.on_epoch = [&](const dfc::EpochRecord& rec) {
        ++callbacks;
        EXPECT_EQ(rec.epoch, callbacks);
        EXPECT_EQ(static_cast<int>(rec.inner_dp.size()), rec.inner_iterations);
        EXPECT_EQ(static_cast<int>(rec.inner_dk.size()), rec.inner_iterations);
    };

    dfc::PiConfig cfg;
    cfg.max_epochs = 6;
    const dfc::TrainingResult res = dfc::multi_epoch_train(dfc::nominal_initial_gain(), w, cfg, env);

    // Exactly one data collection and one evaluation per epoch.
    EXPECT_EQ(collects, static_cast<int>(res.epochs.size()));
    EXPECT_EQ(evaluates, static_cast<int>(res.epochs.size()));
    EXPECT_EQ(callbacks, static_cast<int>(res.epochs.size()));
    EXPECT_TRUE(res.stopped_by_tolerance);
    EXPECT_LT(static_cast<int>(res.epochs.size()), 6);

    // Every epoch already achieves the optimal cost (ideal data converges in
    // one inner loop); the first-epoch cost equals x0ᵀP*x0.
    const double v_star = dfc::quadratic_value(star.P, x0);
    EXPECT_NEAR(res.epochs.front().cost, v_star, 0.02 * v_star);
    EXPECT_LE(res.final_cost, res.epochs.front().cost * (1.0 + 1e-9));
    EXPECT_LT((res.K_final.K - star.K.K).norm(), 1e-2);
    for (const auto& rec : res.epochs)
        EXPECT_TRUE(dfc::is_hurwitz(dfc::closed_loop_matrix(model, rec.gain_out)));

    // min_epochs defers the tolerance stop.
    collects = 0;
    evaluates = 0;
    callbacks = 0;
    dfc::PiConfig strict = cfg;
    strict.min_epochs = 4;
    const dfc::TrainingResult longer =
        dfc::multi_epoch_train(dfc::nominal_initial_gain(), w, strict, env);
    EXPECT_GE(static_cast<int>(longer.epochs.size()), 4);

    dfc::TrainingEnv missing;
    EXPECT_THROW(dfc::multi_epoch_train(dfc::nominal_initial_gain(), w, cfg, missing),
                 dfc::UsageError);
}
