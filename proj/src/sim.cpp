#include "dfc/sim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dfc/errors.hpp"

namespace dfc {

void Trajectory::validate() const {
    const int N = samples();
    if (N < 2) throw UsageError("trajectory needs at least two samples");
    if (x.rows() != N || x_meas.rows() != N || xdot_meas.rows() != N || u.rows() != N)
        throw UsageError("trajectory series lengths disagree");
    if (x_meas.cols() != x.cols() || xdot_meas.cols() != x.cols())
        throw UsageError("trajectory state widths disagree");
    if (!(ts > 0.0)) throw UsageError("trajectory sampling interval must be positive");
    for (int k = 0; k + 1 < N; ++k)
        if (std::abs((t(k + 1) - t(k)) - ts) > 1e-9 * std::max(1.0, std::abs(t(k))))
            throw UsageError("trajectory grid is not uniform");
}

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void Trajectory::save_csv(const std::filesystem::path& file) const {
    validate();
    std::ofstream out(file);
    if (!out) throw UsageError("cannot open for writing: " + file.string());
    out << 't';
    for (int j = 1; j <= n(); ++j) out << ",x" << j;
    for (int j = 1; j <= n(); ++j) out << ",xm" << j;
    for (int j = 1; j <= n(); ++j) out << ",xd" << j;
    for (int j = 1; j <= m(); ++j) out << ",u" << j;
    out << '\n';
    for (int k = 0; k < samples(); ++k) {
        out << fmt_g17(t(k));
        for (int j = 0; j < n(); ++j) out << ',' << fmt_g17(x(k, j));
        for (int j = 0; j < n(); ++j) out << ',' << fmt_g17(x_meas(k, j));
        for (int j = 0; j < n(); ++j) out << ',' << fmt_g17(xdot_meas(k, j));
        for (int j = 0; j < m(); ++j) out << ',' << fmt_g17(u(k, j));
        out << '\n';
    }
}

Trajectory Trajectory::load_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw UsageError("cannot open for reading: " + file.string());
    std::string header;
    if (!std::getline(in, header)) throw UsageError("empty trajectory file: " + file.string());
    std::vector<std::string> names;
    {
        std::stringstream ss(header);
        std::string tok;
        while (std::getline(ss, tok, ',')) names.push_back(tok);
    }
    int n = 0, m = 0;
    for (const auto& nm : names) {
        if (nm.rfind("x", 0) == 0 && nm.rfind("xm", 0) != 0 && nm.rfind("xd", 0) != 0) ++n;
        if (nm.rfind("u", 0) == 0) ++m;
    }
    if (names.empty() || names[0] != "t" || n == 0 || m == 0 ||
        static_cast<int>(names.size()) != 1 + 3 * n + m)
        throw UsageError("unrecognized trajectory header in " + file.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<double> row;
        while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
        if (static_cast<int>(row.size()) != 1 + 3 * n + m)
            throw UsageError("trajectory row width mismatch in " + file.string());
        rows.push_back(std::move(row));
    }
    const int N = static_cast<int>(rows.size());
    if (N < 2) throw UsageError("trajectory needs at least two samples: " + file.string());
    Trajectory traj;
    traj.t.resize(N);
    traj.x.resize(N, n);
    traj.x_meas.resize(N, n);
    traj.xdot_meas.resize(N, n);
    traj.u.resize(N, m);
    for (int k = 0; k < N; ++k) {
        int c = 0;
        traj.t(k) = rows[k][c++];
        for (int j = 0; j < n; ++j) traj.x(k, j) = rows[k][c++];
        for (int j = 0; j < n; ++j) traj.x_meas(k, j) = rows[k][c++];
        for (int j = 0; j < n; ++j) traj.xdot_meas(k, j) = rows[k][c++];
        for (int j = 0; j < m; ++j) traj.u(k, j) = rows[k][c++];
    }
    traj.ts = traj.t(1) - traj.t(0);
    traj.validate();
    return traj;
}

void ExcitationSpec::validate() const {
    if (!(freq_low <= freq_high)) throw UsageError("excitation needs freq_low <= freq_high");
    if (amplitude < 0.0) throw UsageError("excitation amplitude must be non-negative");
    if (num_tones < 1) throw UsageError("excitation needs at least one tone");
}

void FilterSpec::validate(double ts) const {
    if (order != 2) throw UsageError("only second-order measurement filters are supported");
    if (!(cutoff_hz > 0.0) || cutoff_hz >= 0.5 / ts)
        throw UsageError("filter cutoff must lie below the Nyquist frequency");
}

Multisine::Multisine(const ExcitationSpec& spec, int channels, double duration, double norm_dt) {
    spec.validate();
    if (channels < 1) throw UsageError("excitation needs at least one channel");
    if (!(duration > 0.0) || !(norm_dt > 0.0)) throw UsageError("excitation needs a positive duration");
    freq_.resize(channels, spec.num_tones);
    phase_.resize(channels, spec.num_tones);
    scale_ = Eigen::VectorXd::Zero(channels);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> freq_dist(spec.freq_low, spec.freq_high);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * M_PI);
    for (int ch = 0; ch < channels; ++ch) {
        for (int k = 0; k < spec.num_tones; ++k) freq_(ch, k) = freq_dist(rng);
        for (int k = 0; k < spec.num_tones; ++k) phase_(ch, k) = phase_dist(rng);
        double peak = 0.0;
        const int steps = static_cast<int>(std::llround(duration / norm_dt));
        for (int i = 0; i <= steps; ++i) {
            const double t = i * norm_dt;
            double raw = 0.0;
            for (int k = 0; k < spec.num_tones; ++k) raw += std::sin(freq_(ch, k) * t + phase_(ch, k));
            peak = std::max(peak, std::abs(raw));
        }
        scale_(ch) = (peak > 1e-12) ? spec.amplitude / peak : 0.0;
    }
}

Eigen::VectorXd Multisine::at(double t) const {
    Eigen::VectorXd out(channels());
    for (int ch = 0; ch < channels(); ++ch) {
        double raw = 0.0;
        for (int k = 0; k < freq_.cols(); ++k) raw += std::sin(freq_(ch, k) * t + phase_(ch, k));
        out(ch) = scale_(ch) * raw;
    }
    return out;
}

namespace {

int step_count(double ts, double duration) {
    if (!(ts > 0.0)) throw UsageError("sampling interval must be positive");
    if (duration < ts) throw UsageError("duration must be at least one sampling interval");
    return static_cast<int>(std::llround(duration / ts));
}

void check_finite_sample(const Eigen::VectorXd& x, int k, double ts) {
    if (!x.allFinite())
        throw NumericalError("simulation diverged at sample " + std::to_string(k) +
                             " (t=" + std::to_string(k * ts) + " s)");
}

// Shared fixed-step loop: `eval` returns (xdot, u) at a state/time; RK4 uses only
// the xdot part for stages.
template <typename Eval>
Trajectory run_rk4(const Eval& eval, const Eigen::VectorXd& x0, int m, double ts, double duration) {
    const int steps = step_count(ts, duration);
    const int n = static_cast<int>(x0.size());
    Trajectory traj;
    traj.ts = ts;
    traj.t.resize(steps + 1);
    traj.x.resize(steps + 1, n);
    traj.x_meas.resize(steps + 1, n);
    traj.xdot_meas.resize(steps + 1, n);
    traj.u.resize(steps + 1, m);
    Eigen::VectorXd s = x0;
    for (int k = 0; k <= steps; ++k) {
        const double tk = k * ts;
        check_finite_sample(s, k, ts);
        auto [xd, u] = eval(tk, s);
        if (!xd.allFinite() || !u.allFinite())
            throw NumericalError("simulation diverged at sample " + std::to_string(k) +
                                 " (t=" + std::to_string(tk) + " s)");
        traj.t(k) = tk;
        traj.x.row(k) = s.transpose();
        traj.xdot_meas.row(k) = xd.transpose();
        traj.u.row(k) = u.transpose();
        if (k == steps) break;
        const Eigen::VectorXd d1 = xd;
        const Eigen::VectorXd d2 = eval(tk + 0.5 * ts, s + 0.5 * ts * d1).first;
        const Eigen::VectorXd d3 = eval(tk + 0.5 * ts, s + 0.5 * ts * d2).first;
        const Eigen::VectorXd d4 = eval(tk + ts, s + ts * d3).first;
        s += (ts / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    }
    traj.x_meas = traj.x;
    return traj;
}

void apply_sensing(Trajectory& traj, const SensingOptions& sensing) {
    const int n = traj.n();
    if (sensing.bias.size() != 0) {
        if (sensing.bias.size() != n) throw UsageError("bias vector size must match the state");
        traj.x_meas = traj.x.rowwise() + sensing.bias.transpose();
    }
    if (sensing.noise_std.size() != 0) {
        if (sensing.noise_std.size() != n) throw UsageError("noise sigma size must match the state");
        std::mt19937_64 rng(sensing.noise_seed);
        std::normal_distribution<double> unit(0.0, 1.0);
        for (int k = 0; k < traj.samples(); ++k)
            for (int j = 0; j < n; ++j) traj.x_meas(k, j) += sensing.noise_std(j) * unit(rng);
    }
    if (sensing.filter) {
        sensing.filter->validate(traj.ts);
        traj.xdot_meas = filtered_derivative(traj.x_meas, traj.ts, *sensing.filter);
    }
}

} // namespace

Trajectory integrate(const Dynamics& f, const Eigen::VectorXd& x0, const InputLaw& u_law,
                     int m, double ts, double duration) {
    auto eval = [&](double t, const Eigen::VectorXd& x) {
        Eigen::VectorXd u = u_law(t, x);
        return std::make_pair(f(t, x, u), std::move(u));
    };
    return run_rk4(eval, x0, m, ts, duration);
}

Trajectory simulate_dfc_closed_loop(const StateSpaceModel& model, const Gain& gain,
                                    const Multisine* excitation, const SensingOptions& sensing,
                                    const Eigen::VectorXd& x0, double ts, double duration) {
    if (x0.size() != model.n()) throw UsageError("initial condition size must match the model");
    // Resolve the algebraic loop once: ẋ = (I+BK)^-1 (A x + B e).
    const Eigen::MatrixXd Acl = closed_loop_matrix(model, gain);
    const Eigen::MatrixXd loop = Eigen::MatrixXd::Identity(model.n(), model.n()) + model.B * gain.K;
    const Eigen::MatrixXd Bcl = loop.partialPivLu().solve(model.B);
    const Eigen::VectorXd zero_e = Eigen::VectorXd::Zero(model.m());
    auto eval = [&](double t, const Eigen::VectorXd& x) {
        const Eigen::VectorXd e = excitation ? excitation->at(t) : zero_e;
        Eigen::VectorXd xd = Acl * x + Bcl * e;
        Eigen::VectorXd u = -gain.K * xd + e;
        return std::make_pair(std::move(xd), std::move(u));
    };
    Trajectory traj = run_rk4(eval, x0, model.m(), ts, duration);
    apply_sensing(traj, sensing);
    return traj;
}

Trajectory simulate_dfc_closed_loop(const NonlinearMaglevPlant& plant, const Gain& gain,
                                    const Multisine* excitation, const SensingOptions& sensing,
                                    const Eigen::VectorXd& x0_local, double ts, double duration) {
    if (x0_local.size() != 4) throw UsageError("nonlinear plant state is 4-dimensional");
    if (gain.K.rows() != 2 || gain.K.cols() != 4)
        throw UsageError("gain dimensions do not match the nonlinear plant");
    plant.params.validate();
    plant.op.validate(plant.params);
    const Eigen::Vector4d op_vec{plant.op.y10, 0.0, plant.op.y20, 0.0};
    const Eigen::Vector2d u_bias{plant.op.u10, plant.op.u20};
    const Eigen::VectorXd zero_e = Eigen::VectorXd::Zero(2);
    auto eval = [&](double t, const Eigen::VectorXd& x_local) {
        const Eigen::VectorXd e = excitation ? excitation->at(t) : zero_e;
        const Eigen::Vector4d s = op_vec + x_local;
        const Eigen::Matrix<double, 4, 2> G = input_matrix(plant.params, s(0), s(2), plant.include_cross_forces);
        const Eigen::Vector4d f0 = drift(plant.params, s);
        const Eigen::Matrix4d loop = Eigen::Matrix4d::Identity() + G * gain.K;
        Eigen::FullPivLU<Eigen::Matrix4d> lu(loop);
        if (!lu.isInvertible())
            throw NumericalError("algebraic loop unsolvable: (I + G(x)*K) is singular");
        Eigen::VectorXd xd = lu.solve(f0 + G * (u_bias + e));
        Eigen::VectorXd u = -gain.K * xd + e;
        if (plant.saturation_enabled && u.cwiseAbs().maxCoeff() > plant.saturation_limit) {
            u = u.cwiseMax(-plant.saturation_limit).cwiseMin(plant.saturation_limit);
            xd = f0 + G * (u_bias + u);
        }
        return std::make_pair(std::move(xd), std::move(u));
    };
    Trajectory traj = run_rk4(eval, x0_local, 2, ts, duration);
    apply_sensing(traj, sensing);
    return traj;
}

Trajectory simulate_sf_closed_loop(const StateSpaceModel& model, const Gain& gain,
                                   const Multisine* excitation, const SensingOptions& sensing,
                                   const Eigen::VectorXd& x0, double ts, double duration) {
    if (x0.size() != model.n()) throw UsageError("initial condition size must match the model");
    if (gain.K.rows() != model.m() || gain.K.cols() != model.n())
        throw UsageError("gain dimensions do not match the model");
    Eigen::VectorXd bias = sensing.bias;
    if (bias.size() == 0) bias = Eigen::VectorXd::Zero(model.n());
    if (bias.size() != model.n()) throw UsageError("bias vector size must match the state");
    const Eigen::VectorXd zero_e = Eigen::VectorXd::Zero(model.m());
    auto eval = [&](double t, const Eigen::VectorXd& x) {
        const Eigen::VectorXd e = excitation ? excitation->at(t) : zero_e;
        Eigen::VectorXd u = -gain.K * (x + bias) + e;
        Eigen::VectorXd xd = model.A * x + model.B * u;
        return std::make_pair(std::move(xd), std::move(u));
    };
    Trajectory traj = run_rk4(eval, x0, model.m(), ts, duration);
    apply_sensing(traj, sensing);
    return traj;
}

Trajectory simulate_sf_closed_loop(const NonlinearMaglevPlant& plant, const Gain& gain,
                                   const Multisine* excitation, const SensingOptions& sensing,
                                   const Eigen::VectorXd& x0_local, double ts, double duration) {
    if (x0_local.size() != 4) throw UsageError("nonlinear plant state is 4-dimensional");
    if (gain.K.rows() != 2 || gain.K.cols() != 4)
        throw UsageError("gain dimensions do not match the nonlinear plant");
    plant.params.validate();
    plant.op.validate(plant.params);
    Eigen::VectorXd bias = sensing.bias;
    if (bias.size() == 0) bias = Eigen::VectorXd::Zero(4);
    if (bias.size() != 4) throw UsageError("bias vector size must match the state");
    const Eigen::Vector4d op_vec{plant.op.y10, 0.0, plant.op.y20, 0.0};
    const Eigen::Vector2d u_bias{plant.op.u10, plant.op.u20};
    const Eigen::VectorXd zero_e = Eigen::VectorXd::Zero(2);
    auto eval = [&](double t, const Eigen::VectorXd& x_local) {
        const Eigen::VectorXd e = excitation ? excitation->at(t) : zero_e;
        Eigen::VectorXd u = -gain.K * (x_local + bias) + e;
        if (plant.saturation_enabled)
            u = u.cwiseMax(-plant.saturation_limit).cwiseMin(plant.saturation_limit);
        const Eigen::Vector4d s = op_vec + x_local;
        const Eigen::Matrix<double, 4, 2> G =
            input_matrix(plant.params, s(0), s(2), plant.include_cross_forces);
        Eigen::VectorXd xd = drift(plant.params, s) + G * (u_bias + u);
        return std::make_pair(std::move(xd), std::move(u));
    };
    Trajectory traj = run_rk4(eval, x0_local, 2, ts, duration);
    apply_sensing(traj, sensing);
    return traj;
}

Trajectory consistent_filter(const Trajectory& traj, const FilterSpec& filter,
                             double settle_discard) {
    traj.validate();
    filter.validate(traj.ts);
    if (settle_discard < 0.0) throw UsageError("settle_discard must be non-negative");
    const int skip = static_cast<int>(std::llround(settle_discard / traj.ts));
    const int N = traj.samples() - skip;
    if (N < 2) throw UsageError("settle_discard leaves fewer than two samples");
    Trajectory out;
    out.ts = traj.ts;
    out.t = traj.t.tail(N);
    out.x = traj.x.bottomRows(N);
    out.x_meas = lowpass(traj.x_meas, traj.ts, filter).bottomRows(N);
    out.xdot_meas = filtered_derivative(traj.x_meas, traj.ts, filter).bottomRows(N);
    out.u = lowpass(traj.u, traj.ts, filter).bottomRows(N);
    return out;
}

Eigen::MatrixXd lowpass(const Eigen::MatrixXd& series, double ts, const FilterSpec& filter) {
    filter.validate(ts);
    const double w0 = 2.0 * M_PI * filter.cutoff_hz;
    const double Kb = 2.0 / ts;
    const double a0 = Kb * Kb + 2.0 * w0 * Kb + w0 * w0;
    const double a1 = 2.0 * (w0 * w0 - Kb * Kb);
    const double a2 = Kb * Kb - 2.0 * w0 * Kb + w0 * w0;
    const double b0 = w0 * w0, b1 = 2.0 * w0 * w0, b2 = w0 * w0;
    Eigen::MatrixXd out(series.rows(), series.cols());
    for (Eigen::Index c = 0; c < series.cols(); ++c) {
        // Histories start at the first sample so a constant passes through unchanged.
        double x1 = series(0, c), x2 = series(0, c);
        double y1 = series(0, c), y2 = series(0, c);
        for (Eigen::Index k = 0; k < series.rows(); ++k) {
            const double xk = series(k, c);
            const double yk = (b0 * xk + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
            x2 = x1;
            x1 = xk;
            y2 = y1;
            y1 = yk;
            out(k, c) = yk;
        }
    }
    return out;
}

Eigen::MatrixXd filtered_derivative(const Eigen::MatrixXd& x_meas, double ts, const FilterSpec& filter) {
    if (x_meas.rows() < 3) throw UsageError("filtered derivative needs at least three samples");
    Eigen::MatrixXd d(x_meas.rows(), x_meas.cols());
    const Eigen::Index N = x_meas.rows();
    d.row(0) = (x_meas.row(1) - x_meas.row(0)) / ts;
    d.row(N - 1) = (x_meas.row(N - 1) - x_meas.row(N - 2)) / ts;
    for (Eigen::Index k = 1; k + 1 < N; ++k)
        d.row(k) = (x_meas.row(k + 1) - x_meas.row(k - 1)) / (2.0 * ts);
    return lowpass(d, ts, filter);
}

} // namespace dfc
