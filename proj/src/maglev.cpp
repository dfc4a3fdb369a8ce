#include "dfc/maglev.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "dfc/errors.hpp"

namespace dfc {

namespace {

double pow4(double v) { return v * v * v * v; }
double pow5(double v) { return pow4(v) * v; }

void check_clearance(double denom, const char* what) {
    if (std::abs(denom) < 1e-9)
        throw NumericalError(std::string("magnet collision: force-law gap '") + what + "' vanished");
}

} // namespace

void MaglevParams::validate() const {
    const double vals[] = {M, g, c1, c2, a, b, c, d, y_c};
    for (double v : vals)
        if (!(v > 0.0) || !std::isfinite(v))
            throw UsageError("all maglev parameters must be strictly positive and finite");
}

void OperatingPoint::validate(const MaglevParams& p) const {
    if (!(y10 + p.b > 0.0)) throw UsageError("operating point violates y10 + b > 0");
    if (!(-y20 + p.b > 0.0)) throw UsageError("operating point violates -y20 + b > 0");
    if (u10 < 0.0 || u20 < 0.0) throw UsageError("bias currents must be non-negative");
}

std::pair<double, double> equilibrium_currents(const MaglevParams& p, double y10, double y20) {
    p.validate();
    const double y120 = p.y_c + y20 - y10;
    check_clearance(y120 + p.d, "y12+d");
    check_clearance(y10 + p.b, "y1+b");
    check_clearance(y20 + p.b, "y2+b");
    const double hold = p.c / pow4(y120 + p.d) + p.M * p.g;
    return {p.a * pow4(y10 + p.b) * hold, p.a * pow4(y20 + p.b) * hold};
}

OperatingPoint make_operating_point(const MaglevParams& p, double y10, double y20) {
    auto [u10, u20] = equilibrium_currents(p, y10, y20);
    OperatingPoint op{y10, y20, u10, u20};
    op.validate(p);
    return op;
}

Eigen::Vector4d dynamics(const MaglevParams& p, const Eigen::Vector4d& state,
                         double U1, double U2, bool include_cross_forces) {
    return drift(p, state) +
           input_matrix(p, state(0), state(2), include_cross_forces) * Eigen::Vector2d(U1, U2);
}

Eigen::Vector4d drift(const MaglevParams& p, const Eigen::Vector4d& state) {
    const double y1 = state(0), v1 = state(1), y2 = state(2), v2 = state(3);
    const double y12 = p.y_c + y2 - y1;
    check_clearance(y12 + p.d, "y12+d");
    const double Fm12 = p.c / pow4(y12 + p.d);
    Eigen::Vector4d xd;
    xd(0) = v1;
    xd(1) = (-Fm12 - p.c1 * v1 - p.M * p.g) / p.M;
    xd(2) = v2;
    xd(3) = (-Fm12 - p.c2 * v2 - p.M * p.g) / p.M;
    return xd;
}

Eigen::Matrix<double, 4, 2> input_matrix(const MaglevParams& p, double y1, double y2,
                                         bool include_cross_forces) {
    check_clearance(y1 + p.b, "y1+b");
    check_clearance(y2 + p.b, "y2+b");
    check_clearance(-y2 + p.b, "-y2+b");
    check_clearance(p.y_c + y2 + p.b, "yc+y2+b");
    check_clearance(p.y_c - y1 + p.b, "yc-y1+b");
    Eigen::Matrix<double, 4, 2> G = Eigen::Matrix<double, 4, 2>::Zero();
    double g21 = 1.0 / (p.a * pow4(y1 + p.b));
    double g42 = 1.0 / (p.a * pow4(y2 + p.b));
    if (include_cross_forces) {
        g21 -= 1.0 / (p.a * pow4(p.y_c + y2 + p.b));
        g42 -= 1.0 / (p.a * pow4(p.y_c - y1 + p.b));
    }
    G(1, 0) = g21 / p.M;
    G(3, 1) = g42 / p.M;
    return G;
}

StateSpaceModel linearize(const MaglevParams& p, const OperatingPoint& op) {
    p.validate();
    op.validate(p);
    const double y120 = p.y_c + op.y20 - op.y10;
    const double k1 = 4.0 * op.u10 / (p.a * pow5(op.y10 + p.b));
    const double k2 = 4.0 * op.u20 / (p.a * pow5(op.y20 + p.b));
    const double k12 = 4.0 * p.c / pow5(y120 + p.d);
    const double ku1 = 1.0 / (p.a * pow4(op.y10 + p.b));
    const double ku2 = 1.0 / (p.a * pow4(op.y20 + p.b));
    Eigen::Matrix4d A;
    A << 0, 1, 0, 0,
        (k1 + k12) / p.M, -p.c1 / p.M, -k12 / p.M, 0,
        0, 0, 0, 1,
        -k12 / p.M, 0, (k2 + k12) / p.M, -p.c2 / p.M;
    Eigen::Matrix<double, 4, 2> B = Eigen::Matrix<double, 4, 2>::Zero();
    B(1, 0) = ku1 / p.M;
    B(3, 1) = ku2 / p.M;
    return {A, B};
}

StateSpaceModel dynamics_jacobian(const MaglevParams& p, const OperatingPoint& op,
                                  bool include_cross_forces) {
    p.validate();
    op.validate(p);
    const double y120 = p.y_c + op.y20 - op.y10;
    const double k1 = 4.0 * op.u10 / (p.a * pow5(op.y10 + p.b));
    const double k2 = 4.0 * op.u20 / (p.a * pow5(op.y20 + p.b));
    const double k12 = 4.0 * p.c / pow5(y120 + p.d);
    // Far-coil force gradients (only present with the cross terms enabled).
    const double kc12 = include_cross_forces ? 4.0 * op.u10 / (p.a * pow5(p.y_c + op.y20 + p.b)) : 0.0;
    const double kc21 = include_cross_forces ? 4.0 * op.u20 / (p.a * pow5(p.y_c - op.y10 + p.b)) : 0.0;
    Eigen::Matrix4d A;
    A << 0, 1, 0, 0,
        (-k1 - k12) / p.M, -p.c1 / p.M, (kc12 + k12) / p.M, 0,
        0, 0, 0, 1,
        (-k12 - kc21) / p.M, 0, (-k2 + k12) / p.M, -p.c2 / p.M;
    return {A, input_matrix(p, op.y10, op.y20, include_cross_forces)};
}

StateSpaceModel nominal_reference_model() {
    Eigen::Matrix4d A;
    A << 0, 1, 0, 0,
        567.8, -7.6, 0, 0,
        0, 0, 0, 1,
        0, 0, 1003.7, -7.6;
    Eigen::Matrix<double, 4, 2> B = Eigen::Matrix<double, 4, 2>::Zero();
    B(1, 0) = 8.6077;
    B(3, 1) = 83.9636;
    return {A, B};
}

Gain nominal_initial_gain() {
    Eigen::Matrix<double, 2, 4> K;
    K << -9.7596, -0.6122, -2.8462, -0.0197,
        0.5168, 0.0038, -1.6957, -0.1015;
    return Gain{K};
}

Gain nominal_optimal_gain() {
    Eigen::Matrix<double, 2, 4> K;
    K << -13.1301, -1.1229, 0.0004, 0.0000,
        -0.0001, -0.0000, -4.2980, -0.7191;
    return Gain{K};
}

nlohmann::json maglev_params_to_json(const MaglevParams& p) {
    return {{"M", p.M}, {"g", p.g},     {"c1", p.c1}, {"c2", p.c2}, {"a", p.a},
            {"b", p.b}, {"c", p.c},     {"d", p.d},   {"y_c", p.y_c}};
}

MaglevParams maglev_params_from_json(const nlohmann::json& j) {
    MaglevParams p;
    if (j.contains("M")) p.M = j.at("M").get<double>();
    if (j.contains("g")) p.g = j.at("g").get<double>();
    if (j.contains("c1")) p.c1 = j.at("c1").get<double>();
    if (j.contains("c2")) p.c2 = j.at("c2").get<double>();
    if (j.contains("a")) p.a = j.at("a").get<double>();
    if (j.contains("b")) p.b = j.at("b").get<double>();
    if (j.contains("c")) p.c = j.at("c").get<double>();
    if (j.contains("d")) p.d = j.at("d").get<double>();
    if (j.contains("y_c")) p.y_c = j.at("y_c").get<double>();
    p.validate();
    return p;
}

} // namespace dfc
