#include "hmem/binding.hpp"

#include <cmath>
#include <numbers>

#include "hmem/errors.hpp"

namespace hmem::binding {

namespace {

using Complex = std::complex<double>;

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles computed directly rather than by recurrence to keep the
        // error at d = 128 well under 1e-12.
        const Complex w = std::polar(1.0, angle * static_cast<double>(k));
        const Complex u = a[start + k];
        const Complex v = a[start + k + len / 2] * w;
        a[start + k] = u + v;
        a[start + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<Complex> dft_direct(const std::vector<Complex>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<Complex> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto idx = (k * j) % n;
      acc += x[j] * std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(idx) / static_cast<double>(n));
    }
    out[k] = acc;
  }
  return out;
}

std::vector<Complex> transform(std::vector<Complex> x, bool inverse) {
  if (is_power_of_two(x.size())) {
    fft_radix2(x, inverse);
    return x;
  }
  return dft_direct(x, inverse);
}

void require_same_length(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
}

}  // namespace

std::vector<std::complex<double>> dft(const Vector& x) {
  std::vector<Complex> buf(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) buf[static_cast<std::size_t>(i)] = x[i];
  return transform(std::move(buf), false);
}

Vector inverse_dft_real(const std::vector<std::complex<double>>& spectrum) {
  auto out = transform(spectrum, true);
  Vector v(static_cast<Eigen::Index>(out.size()));
  const double scale = 1.0 / static_cast<double>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) v[static_cast<Eigen::Index>(i)] = out[i].real() * scale;
  return v;
}

Vector circular_convolve(const Vector& a, const Vector& b) {
  require_same_length(a, b, "circular_convolve");
  if (a.size() == 0) return Vector();
  auto fa = dft(a);
  auto fb = dft(b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  return inverse_dft_real(fa);
}

Vector circular_correlate(const Vector& a, const Vector& b) {
  require_same_length(a, b, "circular_correlate");
  if (a.size() == 0) return Vector();
  auto fa = dft(a);
  auto fb = dft(b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] = std::conj(fa[i]) * fb[i];
  return inverse_dft_real(fa);
}

Eigen::Index memory_size(BindingKind kind, Eigen::Index relation_dim, Eigen::Index entity_dim) {
  return kind == BindingKind::Tpr ? relation_dim * entity_dim : entity_dim;
}

MemoryState MemoryState::zeros(BindingKind kind, Eigen::Index relation_dim, Eigen::Index entity_dim) {
  if (kind == BindingKind::CConv && relation_dim != entity_dim) {
    throw ShapeError("CConv memory requires equal relation and entity dimensions");
  }
  return from_flat(kind, relation_dim, entity_dim, Vector::Zero(memory_size(kind, relation_dim, entity_dim)));
}

MemoryState MemoryState::from_flat(BindingKind kind, Eigen::Index relation_dim, Eigen::Index entity_dim, Vector flat) {
  if (flat.size() != memory_size(kind, relation_dim, entity_dim)) {
    throw ShapeError("memory vector has length " + std::to_string(flat.size()) + ", expected " +
                     std::to_string(memory_size(kind, relation_dim, entity_dim)));
  }
  MemoryState m;
  m.kind_ = kind;
  m.relation_dim_ = relation_dim;
  m.entity_dim_ = entity_dim;
  m.flat_ = std::move(flat);
  return m;
}

Eigen::Map<const RowMajorMatrix> MemoryState::matrix() const {
  return Eigen::Map<const RowMajorMatrix>(flat_.data(), relation_dim_, entity_dim_);
}

bool MemoryState::same_shape(const MemoryState& other) const {
  return kind_ == other.kind_ && relation_dim_ == other.relation_dim_ && entity_dim_ == other.entity_dim_;
}

MemoryState& MemoryState::operator+=(const MemoryState& other) {
  if (!same_shape(other)) throw ShapeError("adding memories of different kind or shape");
  flat_ += other.flat_;
  return *this;
}

MemoryState bind_tpr(const Vector& r, const Vector& e) {
  RowMajorMatrix outer = r * e.transpose();
  return MemoryState::from_flat(BindingKind::Tpr, r.size(), e.size(),
                                Eigen::Map<const Vector>(outer.data(), outer.size()));
}

Vector unbind_tpr(const Vector& r, const MemoryState& m) {
  if (m.kind() != BindingKind::Tpr) throw ShapeError("unbind_tpr on a non-TPR memory");
  if (r.size() != m.relation_dim()) throw ShapeError("unbind_tpr: probe length does not match memory rows");
  return m.matrix().transpose() * r;
}

MemoryState bind_cconv(const Vector& r, const Vector& e) {
  require_same_length(r, e, "bind_cconv");
  return MemoryState::from_flat(BindingKind::CConv, r.size(), e.size(), circular_convolve(r, e));
}

Vector unbind_cconv(const Vector& r, const MemoryState& m) {
  if (m.kind() != BindingKind::CConv) throw ShapeError("unbind_cconv on a non-CConv memory");
  return circular_correlate(r, m.flat());
}

MemoryState bind(BindingKind kind, const Vector& r, const Vector& e) {
  return kind == BindingKind::Tpr ? bind_tpr(r, e) : bind_cconv(r, e);
}

Vector unbind(BindingKind kind, const Vector& r, const MemoryState& m) {
  return kind == BindingKind::Tpr ? unbind_tpr(r, m) : unbind_cconv(r, m);
}

WhiteningStats fit_whitening(const Matrix& embeddings, double alpha) {
  if (embeddings.rows() < 2) throw ArgumentError("fit_whitening needs at least 2 rows");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("whitening alpha must lie in [0, 1]");
  if (!embeddings.allFinite()) throw NumericError("fit_whitening: non-finite embedding");

  const auto n = static_cast<double>(embeddings.rows());
  const Eigen::Index d = embeddings.cols();
  WhiteningStats stats;
  stats.alpha = alpha;
  stats.mean = embeddings.colwise().mean().transpose();
  const Matrix centered = embeddings.rowwise() - stats.mean.transpose();
  stats.empirical_cov = (centered.transpose() * centered) / n;
  stats.regularized_cov = (1.0 - alpha) * stats.empirical_cov + alpha * Matrix::Identity(d, d);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(stats.regularized_cov);
  if (eig.info() != Eigen::Success) throw NumericError("fit_whitening: eigendecomposition failed");
  Vector inv_sqrt_vals = eig.eigenvalues().cwiseMax(kWhiteningEigenFloor).cwiseSqrt().cwiseInverse();
  stats.inv_sqrt = eig.eigenvectors() * inv_sqrt_vals.asDiagonal() * eig.eigenvectors().transpose();
  // Exact symmetry so that whiten_backward is the true adjoint.
  stats.inv_sqrt = 0.5 * (stats.inv_sqrt + stats.inv_sqrt.transpose()).eval();
  return stats;
}

Vector whiten(const Vector& v, const WhiteningStats& stats) {
  if (v.size() != stats.dim()) throw ShapeError("whiten: dimension mismatch");
  return stats.inv_sqrt * (v - stats.mean) / std::sqrt(static_cast<double>(stats.dim()));
}

Vector whiten_backward(const Vector& grad_whitened, const WhiteningStats& stats) {
  return stats.inv_sqrt * grad_whitened / std::sqrt(static_cast<double>(stats.dim()));
}

}  // namespace hmem::binding
