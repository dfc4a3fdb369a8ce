#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "dfc/linmodel.hpp"
#include "dfc/sim.hpp"

namespace dfc {

// ---------------------------------------------------------------------------
// Symmetric-vectorization helpers.
//
// A symmetric n-by-n matrix is packed into n(n+1)/2 coefficients ordered along
// the upper triangle row by row: (0,0),(0,1),..,(0,n-1),(1,1),..,(n-1,n-1).
// The matching data-side compression folds the redundant entries of an
// outer-product feature vector d = vec-pair(x,x) (layout d[i*n+j] = x_i*x_j)
// so that theta_k multiplies x_i^2 on the diagonal and 2*x_i*x_j off it.
// ---------------------------------------------------------------------------
int svec_dim(int n);
Eigen::VectorXd svec_compress(const Eigen::VectorXd& d, int n);
Eigen::MatrixXd svec_to_matrix(const Eigen::VectorXd& s, int n);
Eigen::VectorXd matrix_to_svec(const Eigen::MatrixXd& P);

// Width of the regression unknown: n(n+1)/2 value coefficients, n bias
// coefficients, and n*m gain coefficients.  (22 for the four-state two-input
// levitation plant.)
int regression_width(int n, int m);

// ---------------------------------------------------------------------------
// Window integrals.
//
// The learning trajectory is chopped into consecutive windows of equal
// duration `window`.  For every window j the constructor precomputes the
// pieces of the policy-evaluation identity that do not depend on the current
// policy iterate:
//   Ixx  - integral of vec-pair(xdot_meas, xdot_meas) over the window
//   Ixu  - integral of vec-pair(xdot_meas, u) over the window
//   Dq   - difference of compressed quadratic features of x_meas between the
//          window endpoints
//   Dx   - difference of x_meas between the window endpoints
// Integrals use composite Simpson quadrature on the sample grid, so the
// window must span an even number (>= 2) of simulation steps.
// ---------------------------------------------------------------------------
struct KronIntegrals {
    Eigen::MatrixXd Ixx;  // windows x n^2
    Eigen::MatrixXd Ixu;  // windows x n*m
    Eigen::MatrixXd Dq;   // windows x n(n+1)/2
    Eigen::MatrixXd Dx;   // windows x n
    int n = 0;
    int m = 0;
    int windows() const { return static_cast<int>(Ixx.rows()); }
};

KronIntegrals kron_integrals(const Trajectory& traj, double window);

// One least-squares system X*theta = Y for a fixed policy iterate.
// theta = [svec(P); eps; vec(K_next) column-major].
struct RegressionSystem {
    Eigen::MatrixXd X;  // windows x regression_width(n, m)
    Eigen::VectorXd Y;  // windows
    int n = 0;
    int m = 0;
};

RegressionSystem build_regression(const KronIntegrals& data, const Gain& K_i,
                                  const CostWeights& weights);

// Solution of one regression.  eps estimates -2*P*x_b, the linear value term
// induced by a constant measurement bias x_b.
struct PiIterate {
    Eigen::MatrixXd P;
    Eigen::VectorXd eps;
    Gain K_next;
    double ls_residual = 0.0;       // ||X*theta - Y||_2
    double condition_number = 0.0;  // sigma_max / sigma_min of X
};

// Solves the regression by SVD.  Throws ExcitationError when the system is
// rank deficient (smallest singular value <= 1e-8 times the largest, or fewer
// rows than unknowns); the message carries the singular-value profile.
PiIterate pi_solve(const RegressionSystem& sys, double ridge = 0.0);

struct PiConfig {
    double window = 0.01;      // regression window length T in seconds
    double eta_bar = 1e-6;     // inner stop: ||P_i - P_{i-1}||_F < eta_bar
    double zeta_bar = 1e-8;    // epoch stop: |V_j - V_{j-1}| < zeta_bar
    int max_inner_iters = 60;
    int max_epochs = 10;
    int min_epochs = 1;        // epochs to run before the zeta_bar test applies
    double ridge = 0.0;        // optional Tikhonov weight for the LS solve
    // When true (default), an inner loop that exhausts max_inner_iters without
    // meeting eta_bar raises an error; single-sweep protocols set it false and
    // rely on the epoch loop for convergence.
    bool require_inner_convergence = true;
    void validate() const;
};

// Policy iteration on one batch of data: repeatedly rebuild the gain-dependent
// regression blocks (the window integrals are reused) and re-solve.
struct InnerPiResult {
    std::vector<PiIterate> iterates;
    Gain K_final;
    Eigen::MatrixXd P_final;
    Eigen::VectorXd eps_final;
    int iterations = 0;
    bool converged = false;
};

InnerPiResult inner_pi(const KronIntegrals& data, const Gain& K_init,
                       const CostWeights& weights, const PiConfig& cfg);

// Convenience overload: chops the trajectory into cfg.window-long intervals
// first.  All inner iterations reuse the one set of window integrals.
InnerPiResult inner_pi(const Trajectory& traj, const Gain& K_init, const CostWeights& weights,
                       const PiConfig& cfg);

// ---------------------------------------------------------------------------
// Multi-epoch training.  The environment supplies the plant interaction:
//   collect(K)  - run the excited closed loop under gain K, return the
//                 processed learning trajectory
//   evaluate(K) - cost of a candidate gain on the evaluation scenario
//   on_epoch    - optional progress callback (persistence, logging)
// ---------------------------------------------------------------------------
struct EpochRecord {
    int epoch = 0;  // 1-based
    Gain gain_in;
    Gain gain_out;
    double cost = 0.0;
    double delta_v = 0.0;  // |V_e - V_{e-1}|, 0 for the first epoch
    int inner_iterations = 0;
    bool inner_converged = false;
    double condition_number = 0.0;   // worst regression condition this epoch
    std::vector<double> inner_dp;    // ||P_i - P_{i-1}||_F per inner iteration (0 first)
    std::vector<double> inner_dk;    // ||K_{i+1} - K_i||_F per inner iteration
};

struct TrainingEnv {
    std::function<Trajectory(const Gain&)> collect;
    std::function<double(const Gain&)> evaluate;
    std::function<void(const EpochRecord&)> on_epoch;  // may be empty
};

struct TrainingResult {
    std::vector<EpochRecord> epochs;
    Gain K_final;
    double final_cost = 0.0;
    bool stopped_by_tolerance = false;
};

TrainingResult multi_epoch_train(const Gain& K0, const CostWeights& weights,
                                 const PiConfig& cfg, const TrainingEnv& env);

} // namespace dfc
