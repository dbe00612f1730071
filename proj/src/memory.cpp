#include "hmem/memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hmem/errors.hpp"

namespace hmem::memory {

namespace {

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

double candidate_logit(const Vector& e_i, const Vector& r_q, const Vector& e_c, const Vector& r_c,
                       const WeightingParams& params, std::size_t query_slot) {
  const Vector u = concat(e_i, r_q);
  const Vector v = concat(e_c, r_c);
  const Matrix& w = params.matrix_for(query_slot);
  if (w.rows() != u.size() || w.cols() != v.size() || params.b_score.cols() != v.size()) {
    throw ShapeError("candidate_logit: weighting parameters do not match embedding dimensions");
  }
  return u.dot(w * v) + params.b_score.row(static_cast<Eigen::Index>(query_slot)).dot(v);
}

double candidate_weight(const Vector& e_i, const Vector& r_q, const Vector& e_c, const Vector& r_c,
                        const WeightingParams& params, std::size_t query_slot) {
  return sigmoid(candidate_logit(e_i, r_q, e_c, r_c, params, query_slot));
}

std::vector<std::size_t> top_k_by_weight(const std::vector<double>& weights, std::size_t k) {
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  if (order.size() > k) order.resize(k);
  return order;
}

AssembledMemory assemble_memory(const Vector& e_i, const Vector& r_q, const std::vector<Candidate>& candidates,
                                const WeightingParams& params, std::size_t query_slot, std::size_t k,
                                const MemoryState& empty_shape) {
  AssembledMemory out;
  out.state = MemoryState::zeros(empty_shape.kind(), empty_shape.relation_dim(), empty_shape.entity_dim());
  for (const auto& c : candidates) {
    if (!c.bound.same_shape(out.state)) throw ShapeError("assemble_memory: bindings of mixed kind or shape");
  }

  // Stable ordering by id so that weight ties resolve deterministically.
  std::vector<std::size_t> by_id(candidates.size());
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::stable_sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = candidates[a];
    const auto& y = candidates[b];
    return std::tie(x.relation_id, x.direction, x.entity_id) < std::tie(y.relation_id, y.direction, y.entity_id);
  });

  out.weights.resize(candidates.size());
  std::vector<double> sorted_weights(candidates.size());
  for (std::size_t i = 0; i < by_id.size(); ++i) {
    const auto& c = candidates[by_id[i]];
    const double w = candidate_weight(e_i, r_q, c.entity, c.relation, params, query_slot);
    out.weights[by_id[i]] = w;
    sorted_weights[i] = w;
  }
  for (auto pos : top_k_by_weight(sorted_weights, k)) {
    const auto idx = by_id[pos];
    out.selected.push_back(idx);
    out.state.flat() += out.weights[idx] * candidates[idx].bound.flat();
  }
  return out;
}

Vector filter_vector(const Vector& memory_flat, const HarmonyParams& params) {
  if (params.w_map.cols() != memory_flat.size()) throw ShapeError("filter_vector: W_map does not match memory size");
  return params.w_map * memory_flat + params.b_map;
}

Matrix local_weight_matrix(const Vector& filter, const Matrix& w_global) {
  if (w_global.rows() != filter.size() || w_global.cols() != filter.size()) {
    throw ShapeError("local_weight_matrix: W_global does not match filter size");
  }
  return (filter * filter.transpose()).cwiseProduct(w_global);
}

Matrix local_weight_matrix(const MemoryState& memory, const HarmonyParams& params) {
  return local_weight_matrix(filter_vector(memory.flat(), params), params.w_global);
}

HarmonyRhs harmony_rhs(double lambda, HarmonySolve solve) {
  if (solve == HarmonySolve::Stationary) return {lambda, 0.5};
  return {-2.0 * lambda, -1.0};
}

bool spectrally_bounded(const Matrix& w, double lambda) {
  const auto n = w.rows();
  const Matrix eye = Matrix::Identity(n, n);
  Eigen::LLT<Matrix> upper(lambda * eye - w);
  if (upper.info() != Eigen::Success) return false;
  Eigen::LLT<Matrix> lower(lambda * eye + w);
  return lower.info() == Eigen::Success;
}

MemoryState harmony_complete(const MemoryState& memory, const Matrix& w_local, const Vector& bias, double lambda,
                             HarmonySolve solve) {
  if (std::isinf(lambda) && lambda > 0) return memory;
  const auto m = memory.size();
  if (w_local.rows() != m || w_local.cols() != m || bias.size() != m) {
    throw ShapeError("harmony_complete: parameters do not match memory size " + std::to_string(m));
  }
  if (!(lambda > 0)) throw ArgumentError("harmony_complete: lambda must be positive");

  const Matrix eye = Matrix::Identity(m, m);
  Eigen::LLT<Matrix> system(lambda * eye - w_local);
  if (system.info() != Eigen::Success || Eigen::LLT<Matrix>(lambda * eye + w_local).info() != Eigen::Success) {
    throw StabilityError("harmony_complete: lambda = " + std::to_string(lambda) +
                         " does not exceed the spectral norm of the local weight matrix");
  }
  const auto rhs = harmony_rhs(lambda, solve);
  Vector x = system.solve(rhs.memory_coef * memory.flat() + rhs.bias_coef * bias);
  if (!x.allFinite()) throw NumericError("harmony_complete: non-finite solution");
  return MemoryState::from_flat(memory.kind(), memory.relation_dim(), memory.entity_dim(), std::move(x));
}

double harmony_value(const Vector& memory_flat, const Vector& m, const Matrix& w, const Vector& bias, double lambda) {
  const Vector diff = memory_flat - m;
  return 0.5 * (m.dot(w * m) + bias.dot(m)) - 0.5 * lambda * diff.squaredNorm();
}

double spectral_norm_estimate(const Matrix& w, int iterations) {
  const auto n = w.rows();
  if (n == 0) return 0.0;
  // Fixed, non-degenerate start vector keeps the estimate deterministic.
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * std::sin(static_cast<double>(i + 1));
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Vector next = w * v;
    estimate = next.norm();
    if (estimate == 0.0) return 0.0;
    v = next / estimate;
  }
  return estimate;
}

}  // namespace hmem::memory
