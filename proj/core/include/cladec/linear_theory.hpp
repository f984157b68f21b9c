#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace cladec::linear {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Linear autoencoder x -> mean + decoder * encoder * (x - mean).
struct LinearCoder {
  Matrix encoder;  // [k, d]
  Matrix decoder;  // [d, k]
  Vector mean;     // [d]
  /// Set when the k-th and (k+1)-th eigenvalues coincide, so the top
  /// eigenspace basis is not unique.
  bool degenerate = false;

  Matrix product() const { return decoder * encoder; }
};

Vector column_mean(const Matrix& data);
/// Sample covariance of the rows of `data` with 1/N normalization.
Matrix covariance(const Matrix& data);

/// Eigenpairs in descending order; each eigenvector's largest-magnitude
/// component is positive.
struct EigenBasis {
  Vector values;
  Matrix vectors;  // columns
};
EigenBasis sorted_eigen(const Matrix& symmetric);

/// Top-k principal directions as encoder rows, decoder = encoder transpose.
LinearCoder pca_encoder(const Matrix& data, int k);

struct RegressionFit {
  Eigen::RowVectorXd encoder;  // [1, d]
  bool rank_deficient = false;
};

/// Least-squares encoder predicting the (centered) targets from centered data;
/// minimum-norm solution when the design is rank deficient.
RegressionFit regression_encoder(const Matrix& data, const Vector& targets);

/// R = S E^T (E S E^T)^-1 with S the sample covariance. Throws when E S E^T is singular.
Matrix fit_decoder(const Matrix& encoder, const Matrix& data);

/// Encoder plus its fitted decoder.
LinearCoder fitted_coder(const Matrix& encoder, const Matrix& data);

/// Mean over rows of the squared reconstruction error ||x - x_hat||^2.
double recon_loss_linear(const LinearCoder& coder, const Matrix& data);

/// Minimizes the same objective as fit_decoder by gradient descent on R.
Matrix fit_decoder_iterative(const Matrix& encoder, const Matrix& data, int max_iterations = 2000000,
                             double tolerance = 1e-15);

struct PropertyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// The closed-form property suite behind `theory-check`.
std::vector<PropertyCheck> theory_report(std::uint64_t seed);

/// Rows drawn from N(0, diag(variances)).
Matrix gaussian_data(int rows, const Vector& variances, std::uint64_t seed);

}  // namespace cladec::linear
