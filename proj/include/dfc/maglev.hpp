#pragma once

#include <Eigen/Dense>
#include <utility>

#include <nlohmann/json_fwd.hpp>

#include "dfc/linmodel.hpp"

namespace dfc {

// Physical constants of the two-disk levitation rig (defaults: manufacturer table).
struct MaglevParams {
    double M = 0.126;      // disk mass, kg
    double g = 9.81;       // gravity, m/s^2
    double c1 = 0.96;      // damping of disk 1, kg/s
    double c2 = 0.96;      // damping of disk 2, kg/s
    double a = 4.0442e4;   // actuator gain inverse, A/(N*m^4)
    double b = 0.0591;     // actuator offset, m
    double c = 4.4408e-8;  // disk-disk force parameter, N*m^4
    double d = 0.042;      // magnet-magnet offset, m
    double y_c = 0.133;    // coil distance, m

    void validate() const; // all strictly positive
};

// Magnetic equilibrium: disk positions and the bias currents that hold them.
struct OperatingPoint {
    double y10 = 0.0;
    double y20 = 0.0;
    double u10 = 0.0;
    double u20 = 0.0;

    void validate(const MaglevParams& p) const;
};

// Physical state [y1, ẏ1, y2, ẏ2] in absolute coordinates.
struct MaglevState {
    double y1 = 0.0;
    double y1dot = 0.0;
    double y2 = 0.0;
    double y2dot = 0.0;

    Eigen::Vector4d to_vector() const { return {y1, y1dot, y2, y2dot}; }
    static MaglevState from_vector(const Eigen::Vector4d& v) { return {v(0), v(1), v(2), v(3)}; }
};

// Closed-form bias currents balancing gravity and the disk-disk force at (y10, y20).
std::pair<double, double> equilibrium_currents(const MaglevParams& p, double y10, double y20);

OperatingPoint make_operating_point(const MaglevParams& p, double y10, double y20);

// Full five-force dynamics: returns [ẏ1, ÿ1, ẏ2, ÿ2] at absolute state and coil
// currents. include_cross_forces=false drops the far-coil terms F_u12 and F_u21
// (the simplification used for the coefficient-form linearization).
Eigen::Vector4d dynamics(const MaglevParams& p, const Eigen::Vector4d& state,
                         double U1, double U2, bool include_cross_forces = true);

// Current-independent part of the dynamics (currents set to zero; the far-coil
// forces are current-proportional, so they live entirely in the input map).
Eigen::Vector4d drift(const MaglevParams& p, const Eigen::Vector4d& state);

// Input map G(y1, y2): dynamics(s, U) = drift(s) + G * [U1, U2]; the force model
// is affine in the coil currents.
Eigen::Matrix<double, 4, 2> input_matrix(const MaglevParams& p, double y1, double y2,
                                         bool include_cross_forces = true);

// Coefficient-form linearization about the operating point, in local coordinates
// [y1*, ẏ1*, y2*, ẏ2*] and local currents. Reproduces the rig's tabulated nominal
// entries (567.8..., 1003.7..., 8.6077, 83.9636). Note the position-stiffness sign
// convention of this coefficient form is the nominal design model; it differs in
// sign from the Jacobian of `dynamics` (see dynamics_jacobian).
StateSpaceModel linearize(const MaglevParams& p, const OperatingPoint& op);

// Analytic Jacobian of the implemented `dynamics` at the operating point (local
// coordinates). This is the plant-side truth model used for stability checks.
StateSpaceModel dynamics_jacobian(const MaglevParams& p, const OperatingPoint& op,
                                  bool include_cross_forces = false);

// Rounded nominal matrices as tabulated for this rig (cross-coupling entries zero).
StateSpaceModel nominal_reference_model();

// Tabulated stabilizing derivative-feedback gain (pole-placement design) used to
// initialize the learning algorithms on the nominal reference model.
Gain nominal_initial_gain();

// Tabulated optimal derivative-feedback gain for the nominal reference model with
// Q = I and R = diag(1, 2); oracle for design reproduction checks.
Gain nominal_optimal_gain();

nlohmann::json maglev_params_to_json(const MaglevParams& p);
MaglevParams maglev_params_from_json(const nlohmann::json& j);

} // namespace dfc
