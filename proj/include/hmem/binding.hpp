#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "hmem/types.hpp"

namespace hmem::binding {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A superposition memory. TPR memories are d_r x d_e matrices stored
// row-major (relation index major) in `flat`; CConv memories are d-vectors
// with relation_dim == entity_dim == d.
class MemoryState {
 public:
  MemoryState() = default;

  static MemoryState zeros(BindingKind kind, Eigen::Index relation_dim, Eigen::Index entity_dim);
  static MemoryState from_flat(BindingKind kind, Eigen::Index relation_dim, Eigen::Index entity_dim, Vector flat);

  BindingKind kind() const { return kind_; }
  Eigen::Index relation_dim() const { return relation_dim_; }
  Eigen::Index entity_dim() const { return entity_dim_; }
  // Flattened length m: d_r * d_e for TPR, d for CConv.
  Eigen::Index size() const { return flat_.size(); }

  const Vector& flat() const { return flat_; }
  Vector& flat() { return flat_; }

  // TPR view; only valid for kind() == Tpr.
  Eigen::Map<const RowMajorMatrix> matrix() const;

  bool same_shape(const MemoryState& other) const;
  bool all_finite() const { return flat_.allFinite(); }

  MemoryState& operator+=(const MemoryState& other);
  MemoryState& operator*=(double s) {
    flat_ *= s;
    return *this;
  }

 private:
  BindingKind kind_ = BindingKind::Tpr;
  Eigen::Index relation_dim_ = 0;
  Eigen::Index entity_dim_ = 0;
  Vector flat_;
};

// Number of flattened memory components for a binding kind.
Eigen::Index memory_size(BindingKind kind, Eigen::Index relation_dim, Eigen::Index entity_dim);

// M[i][j] = r[i] * e[j]
MemoryState bind_tpr(const Vector& r, const Vector& e);
// out[j] = sum_i r[i] * M[i][j]
Vector unbind_tpr(const Vector& r, const MemoryState& m);

// out[k] = sum_i r[i] * e[(k - i) mod d]
MemoryState bind_cconv(const Vector& r, const Vector& e);
// out[k] = sum_i r[i] * M[(k + i) mod d]
Vector unbind_cconv(const Vector& r, const MemoryState& m);

// Dispatch on kind. For CConv, r and e must have equal length.
MemoryState bind(BindingKind kind, const Vector& r, const Vector& e);
Vector unbind(BindingKind kind, const Vector& r, const MemoryState& m);

// Vector-level circular convolution / correlation with the same index
// conventions as bind_cconv / unbind_cconv.
Vector circular_convolve(const Vector& a, const Vector& b);
Vector circular_correlate(const Vector& a, const Vector& b);

// Discrete Fourier transform of a real signal. Radix-2 for power-of-two
// lengths, direct O(n^2) otherwise.
std::vector<std::complex<double>> dft(const Vector& x);
// Real part of the inverse transform.
Vector inverse_dft_real(const std::vector<std::complex<double>>& spectrum);

// Decorrelation transform fitted on a set of embeddings.
struct WhiteningStats {
  Vector mean;
  Matrix empirical_cov;
  Matrix regularized_cov;
  Matrix inv_sqrt;  // symmetric (regularized_cov)^(-1/2)
  double alpha = 0.2;

  Eigen::Index dim() const { return mean.size(); }
};

inline constexpr double kDefaultWhiteningAlpha = 0.2;
inline constexpr double kWhiteningEigenFloor = 1e-12;

// Rows of `embeddings` are samples. alpha must lie in [0, 1].
WhiteningStats fit_whitening(const Matrix& embeddings, double alpha = kDefaultWhiteningAlpha);

// (v - mean) * inv_sqrt / sqrt(d)
Vector whiten(const Vector& v, const WhiteningStats& stats);

// Adjoint of whiten for fixed statistics: maps d(loss)/d(whitened) to
// d(loss)/d(v).
Vector whiten_backward(const Vector& grad_whitened, const WhiteningStats& stats);

}  // namespace hmem::binding
