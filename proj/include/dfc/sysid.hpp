#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dfc/linmodel.hpp"
#include "dfc/sim.hpp"

namespace dfc {

struct DmdcConfig {
    double e_min = 0.99;  // minimum fraction of squared singular-value energy kept
    int q_override = 0;   // if > 0, use exactly this truncation order
    void validate() const;
};

struct IdentifiedModel {
    StateSpaceModel model;
    double fit_residual = 0.0;        // ||Gamma*Phi - Xdot||_F
    Eigen::VectorXd singular_values;  // of the stacked data matrix Phi
    int q_used = 0;                   // truncation order actually used
};

// Fits xdot = A*x + B*u to the measured trajectory through a truncated
// pseudo-inverse of the stacked data matrix Phi = [x_meas; u].  The truncation
// order is the smallest q whose squared singular values capture at least e_min
// of the total energy (or q_override when set).  Needs at least n+m samples;
// degenerate data raises ExcitationError.
IdentifiedModel dmdc_fit(const Trajectory& traj, const DmdcConfig& cfg = {});

struct PemResult {
    StateSpaceModel model;
    double j_initial = 0.0;      // mean squared prediction error of the input model
    double j_final = 0.0;        // after refinement; never exceeds j_initial
    int iterations = 0;          // refinement steps actually taken (0 or 1)
    double gradient_norm = 0.0;  // objective gradient at the returned parameters
    bool improved = false;
};

// Gauss-Newton refinement of the derivative prediction error
//   J(A, B) = (1/N) * sum_k ||xdot_k - A x_k - B u_k||^2
// over the full unstructured parameter set vec(A, B).  The objective is
// quadratic in the parameters, so the first step lands on the global
// least-squares minimiser and the loop exits on grad_tol; if numerics ever
// make the step worse, the input model is kept so j_final <= j_initial always
// holds.
PemResult pem_refine(const Trajectory& traj, const StateSpaceModel& init, int max_iters = 5,
                     double grad_tol = 1e-10);

// Magnitude response |C (jwI - A)^{-1} B| of one input/output channel, where C
// selects the position components (every second state starting at the first),
// so out_index addresses a position and in_index a plant input.  Frequencies
// where the resolvent is singular report +infinity.
std::vector<double> frequency_response(const StateSpaceModel& model, int out_index, int in_index,
                                       const std::vector<double>& omegas);

} // namespace dfc
