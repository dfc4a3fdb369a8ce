#pragma once

#include <Eigen/Dense>

namespace dfc {

// LTI model ẋ = A·x + B·u with nonsingular A (required by the derivative-feedback
// Riccati transform, which works in A⁻¹).
struct StateSpaceModel {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;

    StateSpaceModel(Eigen::MatrixXd A_in, Eigen::MatrixXd B_in);

    int n() const { return static_cast<int>(A.rows()); }
    int m() const { return static_cast<int>(B.cols()); }
};

// Quadratic cost weights; Q symmetric PSD, R symmetric PD (validated with
// symmetrization to tolerate asymmetric rounding).
struct CostWeights {
    Eigen::MatrixXd Q;
    Eigen::MatrixXd R;

    CostWeights(Eigen::MatrixXd Q_in, Eigen::MatrixXd R_in);
};

// Derivative-feedback gain, u = -K·ẋ.
struct Gain {
    Eigen::MatrixXd K;
};

// Closed-loop matrix of u = -K·ẋ: solves (I + B·K)·ẋ = A·x for ẋ = M·x.
// Throws NumericalError when the algebraic loop (I + B·K) is singular.
Eigen::MatrixXd closed_loop_matrix(const StateSpaceModel& model, const Gain& gain);

// True iff every eigenvalue real part < -margin. Non-finite entries throw.
bool is_hurwitz(const Eigen::MatrixXd& M, double margin = 0.0);

// Largest eigenvalue real part (stability margin diagnostic).
double max_real_eigenvalue(const Eigen::MatrixXd& M);

} // namespace dfc
