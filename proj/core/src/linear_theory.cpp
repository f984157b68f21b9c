#include "cladec/linear_theory.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cladec::linear {
namespace {

Matrix centered(const Matrix& data) { return data.rowwise() - column_mean(data).transpose(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

}  // namespace

Vector column_mean(const Matrix& data) {
  if (data.rows() == 0) throw std::invalid_argument("column_mean of an empty matrix");
  return data.colwise().mean().transpose();
}

Matrix covariance(const Matrix& data) {
  const Matrix c = centered(data);
  return c.transpose() * c / static_cast<double>(data.rows());
}

EigenBasis sorted_eigen(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const int d = static_cast<int>(symmetric.rows());
  EigenBasis b{Vector(d), Matrix(d, d)};
  for (int i = 0; i < d; ++i) {
    // Eigen returns ascending eigenvalues.
    b.values(i) = solver.eigenvalues()(d - 1 - i);
    Vector v = solver.eigenvectors().col(d - 1 - i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    b.vectors.col(i) = v;
  }
  return b;
}

LinearCoder pca_encoder(const Matrix& data, int k) {
  const int d = static_cast<int>(data.cols());
  if (k < 1 || k > d) throw std::invalid_argument("code dimension must lie in [1, d]");
  if (data.rows() <= d) throw std::invalid_argument("pca_encoder needs more rows than columns");
  const EigenBasis b = sorted_eigen(covariance(data));
  LinearCoder c;
  c.mean = column_mean(data);
  c.encoder = b.vectors.leftCols(k).transpose();
  c.decoder = c.encoder.transpose();
  if (k < d) {
    const double scale = std::max(1.0, std::abs(b.values(0)));
    c.degenerate = std::abs(b.values(k - 1) - b.values(k)) <= 1e-12 * scale;
  }
  return c;
}

RegressionFit regression_encoder(const Matrix& data, const Vector& targets) {
  if (targets.size() != data.rows()) {
    throw std::invalid_argument("regression_encoder: one target per row required");
  }
  const Matrix x = centered(data);
  const Vector y = targets.array() - targets.mean();
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(x);
  RegressionFit fit;
  fit.encoder = cod.solve(y).transpose();
  fit.rank_deficient = cod.rank() < x.cols();
  return fit;
}

Matrix fit_decoder(const Matrix& encoder, const Matrix& data) {
  if (encoder.cols() != data.cols()) {
    throw std::invalid_argument("fit_decoder: encoder has " + std::to_string(encoder.cols()) +
                                " columns, data has " + std::to_string(data.cols()));
  }
  const Matrix s = covariance(data);
  const Matrix code_cov = encoder * s * encoder.transpose();
  Eigen::FullPivLU<Matrix> lu(code_cov);
  const double scale = std::max(1.0, code_cov.cwiseAbs().maxCoeff());
  lu.setThreshold(1e-12 * scale);
  if (!lu.isInvertible()) {
    throw std::domain_error("fit_decoder: encoder collapses the data (singular code covariance)");
  }
  return s * encoder.transpose() * lu.inverse();
}

LinearCoder fitted_coder(const Matrix& encoder, const Matrix& data) {
  LinearCoder c;
  c.mean = column_mean(data);
  c.encoder = encoder;
  c.decoder = fit_decoder(encoder, data);
  return c;
}

double recon_loss_linear(const LinearCoder& coder, const Matrix& data) {
  if (coder.encoder.cols() != data.cols() || coder.decoder.rows() != data.cols() ||
      coder.decoder.cols() != coder.encoder.rows()) {
    throw std::invalid_argument("recon_loss_linear: coder and data shapes disagree");
  }
  const Vector mean = coder.mean.size() == data.cols() ? coder.mean : Vector::Zero(data.cols());
  const Matrix x = data.rowwise() - mean.transpose();
  const Matrix residual = x - x * coder.product().transpose();
  return residual.rowwise().squaredNorm().mean();
}

Matrix fit_decoder_iterative(const Matrix& encoder, const Matrix& data, int max_iterations,
                             double tolerance) {
  // loss(R) = tr(S) - 2 tr(R E S) + tr(R E S E^T R^T); gradient 2 (R E S E^T - S E^T).
  const Matrix s = covariance(data);
  const Matrix a = encoder * s * encoder.transpose();
  const Matrix b = s * encoder.transpose();
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const double step = 2.0 / (eig.eigenvalues().maxCoeff() + eig.eigenvalues().minCoeff());
  Matrix r = Matrix::Zero(data.cols(), encoder.rows());
  for (int it = 0; it < max_iterations; ++it) {
    const Matrix grad = r * a - b;
    const Matrix next = r - step * grad;
    const double change = (next - r).squaredNorm();
    r = next;
    if (change < tolerance * tolerance) break;
  }
  return r;
}

Matrix gaussian_data(int rows, const Vector& variances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, variances.size());
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < variances.size(); ++j) m(i, j) = std::sqrt(variances(j)) * n(rng);
  }
  return m;
}

std::vector<PropertyCheck> theory_report(std::uint64_t seed) {
  std::vector<PropertyCheck> out;
  std::mt19937_64 rng(seed);

  {
    Vector var(2);
    var << 4.0, 1.0;
    const Matrix x = gaussian_data(100000, var, rng());
    const LinearCoder pca = pca_encoder(x, 1);
    const double loss = recon_loss_linear(pca, x);
    const double along_first = std::abs(pca.encoder(0, 0));
    out.push_back({"diag(4,1) PCA loss equals trailing eigenvalue",
                   std::abs(loss - 1.0) <= 0.05 && along_first > 0.99,
                   "loss=" + fmt(loss) + " |E_1|=" + fmt(along_first) + " (target 1.0 +- 0.05)"});
  }

  {
    double worst_gap = INFINITY;
    int violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int d = 6, k = 2;
      const Matrix mix = random_matrix(d, d, rng);
      const Matrix x = random_matrix(400, d, rng) * mix;
      const double pca_loss = recon_loss_linear(pca_encoder(x, k), x);
      const Matrix e = random_matrix(k, d, rng);
      const double other = recon_loss_linear(fitted_coder(e, x), x);
      worst_gap = std::min(worst_gap, other - pca_loss);
      violations += other < pca_loss - 1e-9;
    }
    out.push_back({"Eckart-Young on 100 random Gaussian instances", violations == 0,
                   "violations=" + std::to_string(violations) +
                       " min(loss_E - loss_pca)=" + fmt(worst_gap)});
  }

  {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const int d = 5, k = 2;
      const Matrix x = random_matrix(300, d, rng) * random_matrix(d, d, rng);
      const Matrix e = random_matrix(k, d, rng);
      const Matrix closed = fit_decoder(e, x) * e;
      const Matrix iter = fit_decoder_iterative(e, x) * e;
      worst = std::max(worst, (closed - iter).cwiseAbs().maxCoeff());
    }
    out.push_back({"closed-form decoder matches gradient descent", worst <= 1e-6,
                   "max |W_closed - W_iter|=" + fmt(worst) + " (tolerance 1e-6)"});
  }

  {
    const Matrix x = random_matrix(300, 4, rng) * random_matrix(4, 4, rng);
    const Matrix e = random_matrix(2, 4, rng);
    const Matrix a = random_matrix(2, 2, rng) + 3.0 * Matrix::Identity(2, 2);
    const Matrix w1 = fit_decoder(e, x) * e;
    const Matrix w2 = fit_decoder(a * e, x) * (a * e);
    const double diff = (w1 - w2).cwiseAbs().maxCoeff();
    out.push_back({"W invariant under code reparameterization", diff <= 1e-9,
                   "max |W - W'|=" + fmt(diff)});
  }

  {
    Vector var(3);
    var << 5.0, 2.0, 0.5;
    const Matrix x = gaussian_data(20000, var, rng());
    const LinearCoder pca = pca_encoder(x, 1);
    const Vector score = centered(x) * pca.encoder.row(0).transpose();
    const RegressionFit fit = regression_encoder(x, score);
    const double loss_reg = recon_loss_linear(fitted_coder(fit.encoder, x), x);
    const double loss_pca = recon_loss_linear(pca, x);
    out.push_back({"regression on first-component score reproduces PCA loss",
                   std::abs(loss_reg - loss_pca) <= 1e-9,
                   "loss_reg=" + fmt(loss_reg) + " loss_pca=" + fmt(loss_pca)});
  }
  return out;
}

}  // namespace cladec::linear
