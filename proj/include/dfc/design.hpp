#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "dfc/linmodel.hpp"
#include "dfc/sim.hpp"

namespace dfc {

// Model-based derivative-feedback design result. P is the value matrix of the
// derivative-feedback Riccati equation posed in A^-1; K the optimal gain;
// residual the Frobenius norm of the Riccati residual at P.
struct DfcSolution {
    Eigen::MatrixXd P;
    Gain K;
    int iterations = 0;
    double residual = 0.0;
};

// Per-iteration record of the model-based policy iteration: row i holds the
// policy-evaluation value matrix P_i, the improved gain K_{i+1}, the Lyapunov
// residual of the evaluation solve, and ||P_i - P_{i-1}||_F (0 for i = 1).
struct ModelPiTrace {
    std::vector<Eigen::MatrixXd> P;
    std::vector<Eigen::MatrixXd> K_next;
    std::vector<double> lyap_residual;
    std::vector<double> delta_p;
};

// Solves P·M + Mᵀ·P + S = 0 for symmetric S via Kronecker vectorization
// (I⊗Mᵀ + Mᵀ⊗I)·vec(P) = -vec(S). M must be Hurwitz and S symmetric; throws
// NumericalError when the solve is ill-posed or the residual exceeds
// 1e-9·(‖S‖_F + 1).
Eigen::MatrixXd lyapunov_solve(const Eigen::MatrixXd& M, const Eigen::MatrixXd& S);

// Derivative-feedback gain placing the closed-loop eigenvalues of (I+BK)^-1 A
// at the requested (distinct, stable, real) poles; seeded random right-hand
// side.
Gain pole_placement_gain(const StateSpaceModel& model, const std::vector<double>& poles,
                         std::uint64_t seed = 1);

// Policy iteration on the model: policy evaluation solves the Lyapunov
// equation of the current closed loop in inverse coordinates, policy
// improvement uses the model's input map. K1 must stabilize the
// derivative-feedback loop.
DfcSolution model_based_pi(const StateSpaceModel& model, const CostWeights& weights,
                           const Gain& K1, int max_iters = 50, double eta = 1e-6,
                           ModelPiTrace* trace = nullptr);

// Full design: checks stabilizability of the transformed pair and
// observability of (Q^1/2, A^-1), seeds a gain by pole placement (default
// poles -5,-6,-7,-8), then runs model-based policy iteration to convergence.
// Q = 0 short-circuits to the zero solution. Post-condition: residual
// < 1e-8·‖Q‖_F.
DfcSolution solve_dfc_are(const StateSpaceModel& model, const CostWeights& weights);

// Standard state-feedback Riccati solve (u = -K·x) by the same
// Newton/Lyapunov iteration in direct coordinates; used for the
// state-feedback comparison baseline.
DfcSolution solve_state_feedback_are(const StateSpaceModel& model, const CostWeights& weights);

// Quadrature cost of a recorded excitation-free test run: trapezoidal
// integral of ẋᵀQẋ + uᵀRu. tail_warning flags a horizon too short for the
// integral to have decayed (last-decile mass above 1% of the total).
struct CostEvaluation {
    double cost = 0.0;
    bool tail_warning = false;
    double tail_fraction = 0.0;
};

CostEvaluation evaluate_policy_cost(const Trajectory& test_run, const CostWeights& weights);

// Analytic value x0ᵀ·P·x0 for cross-checking the quadrature.
double quadratic_value(const Eigen::MatrixXd& P, const Eigen::VectorXd& x0);

} // namespace dfc
