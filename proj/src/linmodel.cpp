#include "dfc/linmodel.hpp"

#include <sstream>

#include "dfc/errors.hpp"

namespace dfc {

namespace {

void require_finite(const Eigen::MatrixXd& M, const char* what) {
    if (!M.allFinite()) throw NumericalError(std::string(what) + " contains non-finite entries");
}

// Scale-invariant singularity test: smallest singular value against 1e-12 times the largest.
bool numerically_singular(const Eigen::MatrixXd& M) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return true;
    return sv(sv.size() - 1) <= 1e-12 * sv(0);
}

} // namespace

StateSpaceModel::StateSpaceModel(Eigen::MatrixXd A_in, Eigen::MatrixXd B_in)
    : A(std::move(A_in)), B(std::move(B_in)) {
    if (A.rows() != A.cols()) throw UsageError("state matrix A must be square");
    if (B.rows() != A.rows()) throw UsageError("input matrix B row count must match A");
    if (A.rows() == 0) throw UsageError("model must have at least one state");
    require_finite(A, "A");
    require_finite(B, "B");
    if (numerically_singular(A))
        throw NumericalError("state matrix A is numerically singular; the derivative-feedback design needs A^-1");
}

CostWeights::CostWeights(Eigen::MatrixXd Q_in, Eigen::MatrixXd R_in)
    : Q(std::move(Q_in)), R(std::move(R_in)) {
    if (Q.rows() != Q.cols() || R.rows() != R.cols()) throw UsageError("cost weights must be square");
    require_finite(Q, "Q");
    require_finite(R, "R");
    const Eigen::MatrixXd Qs = 0.5 * (Q + Q.transpose());
    const Eigen::MatrixXd Rs = 0.5 * (R + R.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qe(Qs);
    if (qe.eigenvalues().minCoeff() < -1e-10)
        throw UsageError("Q must be positive semi-definite");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> re(Rs);
    if (re.eigenvalues().minCoeff() <= 0.0)
        throw UsageError("R must be positive definite");
}

Eigen::MatrixXd closed_loop_matrix(const StateSpaceModel& model, const Gain& gain) {
    if (gain.K.rows() != model.m() || gain.K.cols() != model.n())
        throw UsageError("gain dimensions do not match the model");
    require_finite(gain.K, "K");
    const Eigen::MatrixXd loop = Eigen::MatrixXd::Identity(model.n(), model.n()) + model.B * gain.K;
    if (numerically_singular(loop))
        throw NumericalError("algebraic loop unsolvable: (I + B*K) is singular");
    return loop.partialPivLu().solve(model.A);
}

bool is_hurwitz(const Eigen::MatrixXd& M, double margin) {
    return max_real_eigenvalue(M) < -margin;
}

double max_real_eigenvalue(const Eigen::MatrixXd& M) {
    if (M.rows() != M.cols()) throw UsageError("eigenvalue test needs a square matrix");
    require_finite(M, "matrix");
    Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
    return es.eigenvalues().real().maxCoeff();
}

} // namespace dfc
