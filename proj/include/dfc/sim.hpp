#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>

#include "dfc/linmodel.hpp"
#include "dfc/maglev.hpp"

namespace dfc {

// Uniformly sampled simulation record. Rows are samples; x is the true state,
// x_meas the sensed state (bias + noise), xdot_meas the derivative measurement
// (exact in ideal mode, filtered finite differences in hardware-like mode),
// u the actually applied input.
struct Trajectory {
    double ts = 0.0;
    Eigen::VectorXd t;
    Eigen::MatrixXd x;
    Eigen::MatrixXd x_meas;
    Eigen::MatrixXd xdot_meas;
    Eigen::MatrixXd u;

    int samples() const { return static_cast<int>(t.size()); }
    int n() const { return static_cast<int>(x.cols()); }
    int m() const { return static_cast<int>(u.cols()); }

    void validate() const;

    // CSV with header t,x1..xn,xm1..xmn,xd1..xdn,u1..um at full double precision.
    void save_csv(const std::filesystem::path& file) const;
    static Trajectory load_csv(const std::filesystem::path& file);
};

// Deterministic multisine excitation description.
struct ExcitationSpec {
    double amplitude = 0.1;
    double freq_low = -100.0;  // rad/s
    double freq_high = 100.0;  // rad/s
    int num_tones = 20;
    std::uint64_t seed = 1;

    void validate() const;
};

// Second-order low-pass used for hardware-like derivative measurement.
struct FilterSpec {
    int order = 2;
    double cutoff_hz = 2.0;

    void validate(double ts) const; // order == 2, cutoff below Nyquist
};

// Sum of seeded random tones, rescaled so the peak over the run duration equals
// the requested amplitude. Identical (spec, channels, duration) reproduce the
// same signal exactly.
class Multisine {
  public:
    Multisine(const ExcitationSpec& spec, int channels, double duration, double norm_dt = 1e-3);

    Eigen::VectorXd at(double t) const;
    int channels() const { return static_cast<int>(scale_.size()); }

  private:
    Eigen::MatrixXd freq_;   // channels x tones
    Eigen::MatrixXd phase_;  // channels x tones
    Eigen::VectorXd scale_;
};

using Dynamics = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using InputLaw = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)>;

// Classic fixed-step fourth-order integration; stored xdot_meas is the dynamics
// evaluated at each grid point (ideal mode). Throws NumericalError with the first
// bad sample index on divergence.
Trajectory integrate(const Dynamics& f, const Eigen::VectorXd& x0, const InputLaw& u_law,
                     int m, double ts, double duration);

// Measurement-path configuration for closed-loop runs.
struct SensingOptions {
    Eigen::VectorXd bias;              // empty = zero
    Eigen::VectorXd noise_std;         // per-channel sigma; empty = noise-free
    std::uint64_t noise_seed = 0;
    std::optional<FilterSpec> filter;  // engaged = hardware-like derivative measurement
};

// Nonlinear plant wrapper for closed-loop simulation in local coordinates.
struct NonlinearMaglevPlant {
    MaglevParams params;
    OperatingPoint op;
    bool include_cross_forces = true;
    bool saturation_enabled = true;
    double saturation_limit = 4.0;  // amperes, on the local control effort
};

// u(t) = -K·ẋ + e(t) on the linear model: the algebraic loop is resolved exactly,
// ẋ = (I+BK)^-1 (A x + B e). excitation may be null (excitation-free test run).
Trajectory simulate_dfc_closed_loop(const StateSpaceModel& model, const Gain& gain,
                                    const Multisine* excitation, const SensingOptions& sensing,
                                    const Eigen::VectorXd& x0, double ts, double duration);

// Same law on the nonlinear plant; the force model is affine in coil currents, so
// (I + G(x)K) ẋ = f0(x) + G(x)(u_bias + e) resolves the loop analytically. When the
// local effort saturates, the clamped input is applied open-loop for that stage.
Trajectory simulate_dfc_closed_loop(const NonlinearMaglevPlant& plant, const Gain& gain,
                                    const Multisine* excitation, const SensingOptions& sensing,
                                    const Eigen::VectorXd& x0_local, double ts, double duration);

// State feedback u(t) = -K·(x + bias) + e(t) on the linear model, for the
// comparison baseline. The feedback acts on the biased measurement (noise is
// recorded on x_meas but not fed back).
Trajectory simulate_sf_closed_loop(const StateSpaceModel& model, const Gain& gain,
                                   const Multisine* excitation, const SensingOptions& sensing,
                                   const Eigen::VectorXd& x0, double ts, double duration);

// Same state-feedback law on the nonlinear plant (local coordinates).
Trajectory simulate_sf_closed_loop(const NonlinearMaglevPlant& plant, const Gain& gain,
                                   const Multisine* excitation, const SensingOptions& sensing,
                                   const Eigen::VectorXd& x0_local, double ts, double duration);

// Hardware-like regression preprocessing: passes the measured state, the
// derivative estimate (central differences of x_meas), and the applied input
// through the SAME causal low-pass, so all regression signals share one phase
// characteristic, then drops the leading settle_discard seconds of filter
// transient. The true state x is kept unfiltered (trimmed only).
Trajectory consistent_filter(const Trajectory& traj, const FilterSpec& filter,
                             double settle_discard);

// Causal discrete second-order low-pass (bilinear transform of a critically damped
// section; exact unit DC gain), applied column-wise.
Eigen::MatrixXd lowpass(const Eigen::MatrixXd& series, double ts, const FilterSpec& filter);

// Central finite differences followed by the low-pass above.
Eigen::MatrixXd filtered_derivative(const Eigen::MatrixXd& x_meas, double ts, const FilterSpec& filter);

} // namespace dfc
