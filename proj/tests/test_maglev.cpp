#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "dfc/errors.hpp"
#include "dfc/maglev.hpp"

namespace {

const dfc::MaglevParams kParams{};  // manufacturer table defaults

double pow4(double v) { return v * v * v * v; }

// Independent finite-difference Jacobian of the full dynamics (local = absolute
// shift, so the state Jacobian is coordinate-free).
Eigen::Matrix4d fd_state_jacobian(const dfc::MaglevParams& p, const dfc::OperatingPoint& op,
                                  bool cross) {
    const Eigen::Vector4d x0(op.y10, 0.0, op.y20, 0.0);
    Eigen::Matrix4d J;
    const double h = 1e-6;
    for (int j = 0; j < 4; ++j) {
        Eigen::Vector4d dx = Eigen::Vector4d::Zero();
        dx(j) = h;
        J.col(j) =
            (dfc::dynamics(p, x0 + dx, op.u10, op.u20, cross) -
             dfc::dynamics(p, x0 - dx, op.u10, op.u20, cross)) /
            (2.0 * h);
    }
    return J;
}

} // namespace

TEST(Maglev, EquilibriumCurrentsMatchTabulatedOperatingPoint) {
    const auto [u10, u20] = dfc::equilibrium_currents(kParams, 0.01, -0.02);
    EXPECT_NEAR(u10, 1.1397764047, 1e-3);
    EXPECT_NEAR(u20, 0.1168461755, 1e-3);
}

TEST(Maglev, EquilibriumCurrentsClosedForm) {
    // Independent evaluation at a different operating point.
    const double y10 = 0.02, y20 = -0.01;
    const double y120 = kParams.y_c + y20 - y10;
    const double hold = kParams.c / pow4(y120 + kParams.d) + kParams.M * kParams.g;
    const auto [u10, u20] = dfc::equilibrium_currents(kParams, y10, y20);
    EXPECT_NEAR(u10, kParams.a * pow4(y10 + kParams.b) * hold, 1e-12);
    EXPECT_NEAR(u20, kParams.a * pow4(y20 + kParams.b) * hold, 1e-12);

    // Disk-disk force parameter -> 0: currents only balance gravity.
    dfc::MaglevParams no_coupling = kParams;
    no_coupling.c = 1e-300;
    const auto [v10, v20] = dfc::equilibrium_currents(no_coupling, y10, y20);
    EXPECT_NEAR(v10, kParams.a * pow4(y10 + kParams.b) * kParams.M * kParams.g, 1e-9);
    EXPECT_NEAR(v20, kParams.a * pow4(y20 + kParams.b) * kParams.M * kParams.g, 1e-9);
}

TEST(Maglev, SimplifiedDynamicsVanishAtEquilibrium) {
    const dfc::OperatingPoint op = dfc::make_operating_point(kParams, 0.01, -0.02);
    const Eigen::Vector4d x0(op.y10, 0.0, op.y20, 0.0);
    const Eigen::Vector4d xd = dfc::dynamics(kParams, x0, op.u10, op.u20, false);
    EXPECT_LT(xd.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Maglev, CrossForceResidualAtEquilibrium) {
    // With the far-coil forces enabled, the simplified equilibrium currents leave
    // exactly the far-coil accelerations as residuals (independent closed form).
    const dfc::OperatingPoint op = dfc::make_operating_point(kParams, 0.01, -0.02);
    const Eigen::Vector4d x0(op.y10, 0.0, op.y20, 0.0);
    const Eigen::Vector4d xd = dfc::dynamics(kParams, x0, op.u10, op.u20, true);
    const double r1 =
        -op.u10 / (kParams.a * pow4(kParams.y_c + op.y20 + kParams.b)) / kParams.M;
    const double r2 =
        -op.u20 / (kParams.a * pow4(kParams.y_c - op.y10 + kParams.b)) / kParams.M;
    EXPECT_NEAR(xd(1), r1, 1e-12);
    EXPECT_NEAR(xd(3), r2, 1e-12);
    // The magnitudes are small but physically meaningful (fractions of g).
    EXPECT_GT(std::abs(xd(1)), 0.1);
    EXPECT_LT(std::abs(xd(1)), 0.5);
    EXPECT_GT(std::abs(xd(3)), 0.01);
    EXPECT_LT(std::abs(xd(3)), 0.05);
}

TEST(Maglev, FreeFallLimit) {
    // Currents off and disks far apart: each disk is a damped falling mass.
    const Eigen::Vector4d state(-0.02, 0.3, 0.02, -0.1);
    const Eigen::Vector4d xd = dfc::dynamics(kParams, state, 0.0, 0.0);
    EXPECT_EQ(xd(0), state(1));
    EXPECT_EQ(xd(2), state(3));
    EXPECT_NEAR(xd(1), -kParams.g - kParams.c1 / kParams.M * state(1), 5e-3);
    EXPECT_NEAR(xd(3), -kParams.g - kParams.c2 / kParams.M * state(3), 5e-3);
}

TEST(Maglev, DynamicsIsAffineInCurrents) {
    const Eigen::Vector4d state(0.012, -0.05, -0.018, 0.02);
    const Eigen::Matrix<double, 4, 2> G = dfc::input_matrix(kParams, state(0), state(2));
    const Eigen::Vector4d lhs = dfc::dynamics(kParams, state, 0.7, 1.3);
    const Eigen::Vector4d rhs = dfc::drift(kParams, state) + G * Eigen::Vector2d(0.7, 1.3);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Maglev, CollisionGuards) {
    // Disk gap closed: y12 + d == 0.
    Eigen::Vector4d collided(0.1, 0.0, 0.1 - kParams.y_c - kParams.d, 0.0);
    EXPECT_THROW(dfc::drift(kParams, collided), dfc::NumericalError);
    // Disk on coil 1: y1 + b == 0.
    EXPECT_THROW(dfc::input_matrix(kParams, -kParams.b, 0.0), dfc::NumericalError);
    // Operating point on or outside the admissible gap.
    EXPECT_THROW(dfc::make_operating_point(kParams, -kParams.b, -0.02), dfc::NumericalError);
    EXPECT_THROW(dfc::make_operating_point(kParams, -kParams.b - 0.01, -0.02), dfc::UsageError);
    dfc::OperatingPoint bad{0.01, -0.02, -1.0, 0.0};
    EXPECT_THROW(bad.validate(kParams), dfc::UsageError);
}

TEST(Maglev, LinearizeReproducesTabulatedEntries) {
    const dfc::OperatingPoint op = dfc::make_operating_point(kParams, 0.01, -0.02);
    const dfc::StateSpaceModel model = dfc::linearize(kParams, op);
    // Tabulated nominal entries for this rig, 0.5% (they are printed rounded).
    EXPECT_NEAR(model.A(1, 0), 567.8, 0.005 * 567.8);
    EXPECT_NEAR(model.A(3, 2), 1003.7, 0.005 * 1003.7);
    EXPECT_NEAR(model.B(1, 0), 8.6077, 0.005 * 8.6077);
    EXPECT_NEAR(model.B(3, 1), 83.9636, 0.005 * 83.9636);
    EXPECT_NEAR(model.A(1, 1), -kParams.c1 / kParams.M, 1e-12);
    EXPECT_NEAR(model.A(3, 3), -kParams.c2 / kParams.M, 1e-12);
    // The disk-disk coupling enters both rows with the same coefficient.
    EXPECT_EQ(model.A(1, 2), model.A(3, 0));
    EXPECT_LT(model.A(1, 2), 0.0);
    // Velocity rows are exact integrator rows.
    EXPECT_EQ(model.A(0, 1), 1.0);
    EXPECT_EQ(model.A(2, 3), 1.0);
    EXPECT_EQ(model.A(0, 0), 0.0);
    // Frozen coefficient-form constants (recovered from the structure).
    const double k12 = -model.A(1, 2) * kParams.M;
    EXPECT_NEAR(k12, 2.771285e-3, 1e-9);
    EXPECT_NEAR(model.A(1, 0) * kParams.M - k12, 71.5577689773, 1e-6);
    EXPECT_NEAR(model.A(3, 2) * kParams.M - k12, 126.4614280391, 1e-6);
    EXPECT_NEAR(model.B(1, 0) * kParams.M, 1.0845640022, 1e-8);
    EXPECT_NEAR(model.B(3, 1) * kParams.M, 10.5793831367, 1e-8);
}

TEST(Maglev, JacobianMatchesFiniteDifferences) {
    const dfc::OperatingPoint op = dfc::make_operating_point(kParams, 0.01, -0.02);
    for (bool cross : {false, true}) {
        const dfc::StateSpaceModel model = dfc::dynamics_jacobian(kParams, op, cross);
        const Eigen::Matrix4d J = fd_state_jacobian(kParams, op, cross);
        EXPECT_LT((J - model.A).norm() / model.A.norm(), 1e-4) << "cross=" << cross;
        // B is exact: the force model is affine in the currents.
        const Eigen::Matrix<double, 4, 2> G =
            dfc::input_matrix(kParams, op.y10, op.y20, cross);
        EXPECT_LT((G - model.B).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Maglev, JacobianAndCoefficientFormAgreeInMagnitude) {
    // The coefficient-form design model and the Jacobian of the implemented
    // force law are built from the same stiffness coefficients. Disk 1's
    // stiffness row is exactly opposite in sign; disk 2's row is shifted by
    // the shared-gap coupling: the inter-magnet force depends on y2 - y1, so
    // its derivative enters disk 2's own stiffness with the opposite sign it
    // has for disk 1 (a 2*k12/M offset relative to the coefficient form).
    const dfc::OperatingPoint op = dfc::make_operating_point(kParams, 0.01, -0.02);
    const dfc::StateSpaceModel lin = dfc::linearize(kParams, op);
    const dfc::StateSpaceModel jac = dfc::dynamics_jacobian(kParams, op, false);
    EXPECT_NEAR(jac.A(1, 0), -lin.A(1, 0), 1e-9);
    EXPECT_NEAR(jac.A(1, 2), -lin.A(1, 2), 1e-9);
    // Coupling on disk 2 keeps the coefficient-form sign...
    EXPECT_NEAR(jac.A(3, 0), lin.A(3, 0), 1e-9);
    // ...and its own stiffness entry differs from the negated coefficient
    // form by exactly twice the coupling stiffness (2*k12/M = -2*jac.A(3,0)).
    EXPECT_NEAR(jac.A(3, 2) + 2.0 * jac.A(3, 0), -lin.A(3, 2), 1e-9);
    EXPECT_EQ(jac.A(1, 1), lin.A(1, 1));
    EXPECT_EQ(jac.A(3, 3), lin.A(3, 3));
    EXPECT_LT((jac.B - lin.B).cwiseAbs().maxCoeff() / lin.B.cwiseAbs().maxCoeff(), 2e-2);
}

TEST(Maglev, JacobianModelIsStableCoefficientFormIsNot) {
    const dfc::OperatingPoint op = dfc::make_operating_point(kParams, 0.01, -0.02);
    EXPECT_TRUE(dfc::is_hurwitz(dfc::dynamics_jacobian(kParams, op, true).A));
    EXPECT_FALSE(dfc::is_hurwitz(dfc::linearize(kParams, op).A));
    // Open-loop oscillation frequencies of the physical model: sqrt(stiffness/M)
    // near 23.5 and 31.4 rad/s.
    Eigen::EigenSolver<Eigen::MatrixXd> es(dfc::dynamics_jacobian(kParams, op, true).A);
    double max_imag = es.eigenvalues().imag().cwiseAbs().maxCoeff();
    EXPECT_NEAR(max_imag, 31.45, 0.5);
}

TEST(Maglev, NominalReferenceModelIsFrozen) {
    const dfc::StateSpaceModel m = dfc::nominal_reference_model();
    EXPECT_EQ(m.A(1, 0), 567.8);
    EXPECT_EQ(m.A(1, 1), -7.6);
    EXPECT_EQ(m.A(3, 2), 1003.7);
    EXPECT_EQ(m.A(3, 3), -7.6);
    EXPECT_EQ(m.A(1, 2), 0.0);
    EXPECT_EQ(m.A(3, 0), 0.0);
    EXPECT_EQ(m.B(1, 0), 8.6077);
    EXPECT_EQ(m.B(3, 1), 83.9636);
    EXPECT_EQ(m.n(), 4);
    EXPECT_EQ(m.m(), 2);
}

TEST(Maglev, TabulatedGainsAreFrozen) {
    const dfc::Gain K1 = dfc::nominal_initial_gain();
    ASSERT_EQ(K1.K.rows(), 2);
    ASSERT_EQ(K1.K.cols(), 4);
    EXPECT_EQ(K1.K(0, 0), -9.7596);
    EXPECT_EQ(K1.K(1, 2), -1.6957);
    const dfc::Gain Kstar = dfc::nominal_optimal_gain();
    EXPECT_EQ(Kstar.K(0, 0), -13.1301);
    EXPECT_EQ(Kstar.K(1, 3), -0.7191);
    // Both gains stabilize the nominal reference model in closed loop.
    const dfc::StateSpaceModel m = dfc::nominal_reference_model();
    EXPECT_TRUE(dfc::is_hurwitz(dfc::closed_loop_matrix(m, K1)));
    EXPECT_TRUE(dfc::is_hurwitz(dfc::closed_loop_matrix(m, Kstar)));
}

TEST(Maglev, ParamsJsonRoundTrip) {
    dfc::MaglevParams p = kParams;
    p.c1 = 1.25;
    const dfc::MaglevParams back = dfc::maglev_params_from_json(dfc::maglev_params_to_json(p));
    EXPECT_EQ(back.c1, 1.25);
    EXPECT_EQ(back.a, p.a);
    nlohmann::json bad = dfc::maglev_params_to_json(p);
    bad["M"] = -1.0;
    EXPECT_THROW(dfc::maglev_params_from_json(bad), dfc::UsageError);
}
