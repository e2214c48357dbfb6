#include "adrl/numerics/linalg.hpp"

namespace adrl {

namespace {

constexpr int kRefineIterations = 30;
constexpr double kRefineTarget = 1e-12;

}  // namespace

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  require(a.rows() == a.cols(), "solve_spd: matrix is not square");
  require(a.rows() == b.rows(), "solve_spd: right-hand side has " + std::to_string(b.rows()) +
                                    " rows, expected " + std::to_string(a.rows()));
  require(all_finite(a) && all_finite(b), "solve_spd: non-finite input");
  const Eigen::Index n = a.rows();
  const double scale = a.cwiseAbs().maxCoeff();
  require(((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * std::max(scale, 1e-300)),
          "solve_spd: matrix is not symmetric");

  const double lambda = kSpdRidge * a.trace() / static_cast<double>(n);
  Eigen::MatrixXd ridged = a;
  ridged.diagonal().array() += std::max(lambda, 0.0);
  Eigen::LLT<Eigen::MatrixXd> llt(ridged);
  require(llt.info() == Eigen::Success, "solve_spd: matrix is not positive definite after ridge");

  Eigen::MatrixXd x = llt.solve(Eigen::MatrixXd(b));
  const double bnorm = std::max(b.norm(), 1e-300);
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < kRefineIterations; ++it) {
    Eigen::MatrixXd r = Eigen::MatrixXd(b) - a * x;
    const double rel = r.norm() / bnorm;
    if (rel <= kRefineTarget || rel >= prev) {
      break;
    }
    prev = rel;
    x += llt.solve(r);
  }
  require(all_finite(x), "solve_spd: solution is not finite");
  return x;
}

Vector solve_spd(const Matrix& a, const Vector& b) {
  Matrix bm = b;
  return solve_spd(a, bm).col(0);
}

int numerical_rank(const Matrix& a, double rel_tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) {
    return 0;
  }
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > rel_tol * s[0]) {
      ++rank;
    }
  }
  return rank;
}

}  // namespace adrl
