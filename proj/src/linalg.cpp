#include "totr/linalg.hpp"

#include <cmath>

namespace totr {

namespace {

Eigen::SelfAdjointEigenSolver<Matrix> eig_spd(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("matrix is not square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
    if (es.info() != Eigen::Success) throw SingularError("eigendecomposition failed");
    if (es.eigenvalues().size() > 0 && es.eigenvalues().minCoeff() <= 0.0)
        throw SingularError("matrix is not positive definite");
    return es;
}

}  // namespace

Matrix spd_inverse(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("matrix is not square");
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) throw SingularError("matrix is not positive definite");
    Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
    return 0.5 * (inv + inv.transpose());
}

double logdet_spd(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("matrix is not square");
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) throw SingularError("matrix is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Matrix sym_sqrt(const Matrix& a) {
    const auto es = eig_spd(a);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Matrix sym_inv_sqrt(const Matrix& a) {
    const auto es = eig_spd(a);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

bool is_spd(const Matrix& a) {
    if (a.rows() != a.cols()) return false;
    if (!a.isApprox(a.transpose(), 1e-10)) return false;
    Eigen::LLT<Matrix> llt(a);
    return llt.info() == Eigen::Success;
}

Matrix solve_psd(const Matrix& a, const Matrix& b, double rel_tol) {
    if (a.rows() != a.cols() || a.rows() != b.rows()) throw DimensionError("solve: shape mismatch");
    Eigen::LDLT<Matrix> ldlt(0.5 * (a + a.transpose()));
    const Vector d = ldlt.vectorD();
    const double dmax = d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
    if (ldlt.info() != Eigen::Success || dmax == 0.0 || d.minCoeff() <= rel_tol * dmax)
        throw SingularError("normal equations are singular");
    return ldlt.solve(b);
}

Matrix pseudo_inverse(const Matrix& a, double rel_tol) {
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double cut = s.size() ? rel_tol * s(0) : 0.0;
    Vector inv = s;
    for (Eigen::Index i = 0; i < s.size(); ++i) inv(i) = s(i) > cut ? 1.0 / s(i) : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace totr
