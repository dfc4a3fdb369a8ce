#include "dfc/sysid.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

#include "dfc/errors.hpp"

namespace dfc {

namespace {

// Stacked data matrix Phi = [x_meas; u] (n+m rows, one column per sample) and
// the derivative target, shared by the direct fit and the refinement.
void stack_data(const Trajectory& traj, Eigen::MatrixXd& Phi, Eigen::MatrixXd& Xdot) {
    const int n = traj.n(), m = traj.m(), N = traj.samples();
    Phi.resize(n + m, N);
    Phi.topRows(n) = traj.x_meas.transpose();
    Phi.bottomRows(m) = traj.u.transpose();
    Xdot = traj.xdot_meas.transpose();
}

} // namespace

void DmdcConfig::validate() const {
    if (!(e_min > 0.0) || e_min > 1.0) throw UsageError("DmdcConfig.e_min must be in (0, 1]");
    if (q_override < 0) throw UsageError("DmdcConfig.q_override must be >= 0");
}

IdentifiedModel dmdc_fit(const Trajectory& traj, const DmdcConfig& cfg) {
    cfg.validate();
    traj.validate();
    const int n = traj.n(), m = traj.m();
    if (traj.samples() < n + m)
        throw ExcitationError("insufficient excitation: fewer samples than model parameters per row");

    Eigen::MatrixXd Phi, Xdot;
    stack_data(traj, Phi, Xdot);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double total_energy = sv.squaredNorm();
    if (!(total_energy > 0.0))
        throw ExcitationError("insufficient excitation: data matrix is identically zero");

    int q;
    if (cfg.q_override > 0) {
        if (cfg.q_override > sv.size())
            throw UsageError("q_override exceeds the data matrix rank bound");
        q = cfg.q_override;
    } else {
        q = 0;
        double acc = 0.0;
        while (q < sv.size()) {
            acc += sv(q) * sv(q);
            ++q;
            if (acc / total_energy >= cfg.e_min) break;
        }
    }
    if (!(sv(q - 1) > 0.0)) {
        std::ostringstream msg;
        msg << "insufficient excitation: truncation order " << q
            << " reaches a zero singular value";
        throw ExcitationError(msg.str());
    }

    const Eigen::MatrixXd Uq = svd.matrixU().leftCols(q);
    const Eigen::MatrixXd Vq = svd.matrixV().leftCols(q);
    const Eigen::VectorXd sq_inv = sv.head(q).cwiseInverse();
    const Eigen::MatrixXd Gamma = Xdot * Vq * sq_inv.asDiagonal() * Uq.transpose();

    return IdentifiedModel{StateSpaceModel{Gamma.leftCols(n), Gamma.rightCols(m)},
                           (Gamma * Phi - Xdot).norm(), sv, q};
}

PemResult pem_refine(const Trajectory& traj, const StateSpaceModel& init, int max_iters,
                     double grad_tol) {
    traj.validate();
    const int n = traj.n(), m = traj.m();
    if (init.n() != n || init.m() != m)
        throw UsageError("initial model dimensions do not match the trajectory");
    if (max_iters < 0) throw UsageError("pem_refine needs max_iters >= 0");
    const int N = traj.samples();

    Eigen::MatrixXd Phi, Xdot;
    stack_data(traj, Phi, Xdot);

    const auto objective = [&](const Eigen::MatrixXd& Gamma) {
        return (Xdot - Gamma * Phi).squaredNorm() / N;
    };
    const auto gradient_norm = [&](const Eigen::MatrixXd& Gamma) {
        return 2.0 / N * ((Xdot - Gamma * Phi) * Phi.transpose()).norm();
    };

    Eigen::MatrixXd Gamma(n, n + m);
    Gamma.leftCols(n) = init.A;
    Gamma.rightCols(m) = init.B;

    PemResult res{init, objective(Gamma), objective(Gamma), 0, gradient_norm(Gamma), false};
    if (!std::isfinite(res.j_initial)) throw NumericalError("prediction-error cost is not finite");

    for (int it = 1; it <= max_iters; ++it) {
        if (res.gradient_norm <= grad_tol) break;
        // J is quadratic in the parameters: the Gauss-Newton step is the exact
        // least-squares solution of Gamma * Phi = Xdot.
        Eigen::BDCSVD<Eigen::MatrixXd> svd(Phi.transpose(),
                                           Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::MatrixXd Gamma1 = svd.solve(Xdot.transpose()).transpose();
        const double j_candidate = objective(Gamma1);
        if (!std::isfinite(j_candidate))
            throw NumericalError("prediction-error cost is not finite after refinement");
        if (j_candidate > res.j_final) break;  // numerics: keep the admissible model
        try {
            res.model = StateSpaceModel{Gamma1.leftCols(n), Gamma1.rightCols(m)};
        } catch (const NumericalError&) {
            break;  // refined A numerically singular; keep the previous model
        }
        res.improved = res.improved || j_candidate < res.j_final;
        res.j_final = j_candidate;
        res.gradient_norm = gradient_norm(Gamma1);
        res.iterations = it;
    }
    return res;
}

std::vector<double> frequency_response(const StateSpaceModel& model, int out_index, int in_index,
                                       const std::vector<double>& omegas) {
    const int n = model.n(), m = model.m();
    const int n_out = (n + 1) / 2;
    if (out_index < 0 || out_index >= n_out)
        throw UsageError("frequency_response: out_index addresses no position output");
    if (in_index < 0 || in_index >= m)
        throw UsageError("frequency_response: in_index addresses no plant input");

    const Eigen::MatrixXcd A = model.A.cast<std::complex<double>>();
    const Eigen::VectorXcd b = model.B.col(in_index).cast<std::complex<double>>();

    std::vector<double> mags;
    mags.reserve(omegas.size());
    for (double w : omegas) {
        const Eigen::MatrixXcd M =
            std::complex<double>(0.0, w) * Eigen::MatrixXcd::Identity(n, n) - A;
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(M);
        if (!lu.isInvertible()) {
            mags.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        const Eigen::VectorXcd x = lu.solve(b);
        const double g = std::abs(x(2 * out_index));
        mags.push_back(std::isfinite(g) ? g : std::numeric_limits<double>::infinity());
    }
    return mags;
}

} // namespace dfc
