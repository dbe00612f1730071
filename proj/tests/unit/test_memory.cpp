#include <doctest.h>

#include <cmath>
#include <random>

#include "hmem/errors.hpp"
#include "hmem/memory.hpp"

using namespace hmem;
using namespace hmem::memory;

namespace {

Vector gaussian(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

Matrix symmetric(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  Matrix a(n, n);
  std::normal_distribution<double> normal(0.0, sd);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = normal(rng);
  return 0.5 * (a + a.transpose());
}

// Direct evaluation of the objective, written independently of the library.
double objective(const Vector& M, const Vector& m, const Matrix& W, const Vector& b, double lambda) {
  double quad = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i)
    for (Eigen::Index j = 0; j < m.size(); ++j) quad += m[i] * W(i, j) * m[j];
  double lin = 0.0, dist = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    lin += b[i] * m[i];
    dist += (M[i] - m[i]) * (M[i] - m[i]);
  }
  return 0.5 * (quad + lin) - 0.5 * lambda * dist;
}

Vector numeric_gradient(const Vector& M, const Vector& m, const Matrix& W, const Vector& b, double lambda) {
  const double h = 1e-5;
  Vector g(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    Vector up = m, down = m;
    up[i] += h;
    down[i] -= h;
    g[i] = (objective(M, up, W, b, lambda) - objective(M, down, W, b, lambda)) / (2 * h);
  }
  return g;
}

MemoryState flat_memory(const Vector& v) { return MemoryState::from_flat(BindingKind::Tpr, 1, v.size(), v); }

WeightingParams zero_weighting(Eigen::Index dim, std::size_t slots) {
  WeightingParams p;
  p.w_score = {Matrix::Zero(dim, dim)};
  p.b_score = Matrix::Zero(static_cast<Eigen::Index>(slots), dim);
  return p;
}

}  // namespace

TEST_CASE("candidate weight examples") {
  auto p = zero_weighting(4, 2);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    CHECK(candidate_weight(gaussian(2, rng), gaussian(2, rng), gaussian(2, rng), gaussian(2, rng), p, 1) == 0.5);
  }
  auto q = zero_weighting(2, 1);
  q.w_score[0] = 0.5 * Matrix::Identity(2, 2);
  Vector one = Vector::Ones(1);
  CHECK(candidate_weight(one, one, one, one, q, 0) == doctest::Approx(0.7310586).epsilon(1e-7));
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) <= 1.0);
}

TEST_CASE("candidate weight is monotone in the bilinear term and stays in (0, 1)") {
  std::mt19937_64 rng(2);
  Vector e_i = Vector::Ones(2), r_q = Vector::Ones(1), e_c = Vector::Ones(2), r_c = Vector::Ones(1);
  double previous = 0.0;
  for (double c = -3.0; c <= 3.0; c += 0.5) {
    auto p = zero_weighting(3, 1);
    p.w_score[0] = c * Matrix::Identity(3, 3);
    const double w = candidate_weight(e_i, r_q, e_c, r_c, p, 0);
    CHECK(w > previous);
    previous = w;
  }
  for (int t = 0; t < 200; ++t) {
    auto p = zero_weighting(5, 4);
    p.w_score[0] = symmetric(5, rng, 0.5);
    p.b_score = Matrix::Random(4, 5);
    const double w = candidate_weight(gaussian(3, rng), gaussian(2, rng), gaussian(3, rng), gaussian(2, rng), p, 3);
    CHECK(w > 0.0);
    CHECK(w < 1.0);
  }
}

TEST_CASE("bias row is selected by the query slot") {
  auto p = zero_weighting(2, 2);
  p.b_score(1, 0) = 3.0;
  Vector one = Vector::Ones(1);
  CHECK(candidate_logit(one, one, one, one, p, 0) == 0.0);
  CHECK(candidate_logit(one, one, one, one, p, 1) == 3.0);
}

TEST_CASE("top-k ordering and ties") {
  CHECK(top_k_by_weight({0.1, 0.9, 0.5}, 2) == std::vector<std::size_t>{1, 2});
  CHECK(top_k_by_weight({0.5, 0.5, 0.5}, 2) == std::vector<std::size_t>{0, 1});
  CHECK(top_k_by_weight({0.2, 0.7, 0.7, 0.1}, 10) == std::vector<std::size_t>{1, 2, 0, 3});
  CHECK(top_k_by_weight({}, 3).empty());
}

TEST_CASE("assemble_memory") {
  std::mt19937_64 rng(3);
  const Eigen::Index de = 3, dr = 2;
  auto empty = MemoryState::zeros(BindingKind::Tpr, dr, de);
  WeightingParams p = zero_weighting(de + dr, 2);
  p.w_score[0] = symmetric(de + dr, rng);
  Vector e_i = gaussian(de, rng), r_q = gaussian(dr, rng);

  SUBCASE("empty neighborhood gives zero memory") {
    auto out = assemble_memory(e_i, r_q, {}, p, 0, 200, empty);
    CHECK(out.state.flat().isZero(0.0));
    CHECK(out.state.same_shape(empty));
  }

  std::vector<Candidate> cands;
  for (int i = 0; i < 5; ++i) {
    Candidate c;
    c.relation = gaussian(dr, rng);
    c.entity = gaussian(de, rng);
    c.bound = binding::bind_tpr(c.relation, c.entity);
    c.relation_id = i % 2;
    c.entity_id = i;
    cands.push_back(c);
  }

  SUBCASE("single neighbor is weight times binding") {
    std::vector<Candidate> one(cands.begin(), cands.begin() + 1);
    auto out = assemble_memory(e_i, r_q, one, p, 1, 200, empty);
    const double w = candidate_weight(e_i, r_q, one[0].entity, one[0].relation, p, 1);
    CHECK((out.state.flat() - w * one[0].bound.flat()).cwiseAbs().maxCoeff() < 1e-15);
  }

  SUBCASE("k beyond the neighborhood equals the full weighted sum") {
    for (std::size_t k : {std::size_t{5}, std::size_t{200}}) {
      auto out = assemble_memory(e_i, r_q, cands, p, 0, k, empty);
      Vector direct = Vector::Zero(dr * de);
      for (const auto& c : cands) direct += candidate_weight(e_i, r_q, c.entity, c.relation, p, 0) * c.bound.flat();
      CHECK((out.state.flat() - direct).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(out.selected.size() == 5);
    }
  }

  SUBCASE("k = 1 keeps the heaviest binding") {
    auto out = assemble_memory(e_i, r_q, cands, p, 0, 1, empty);
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i)
      if (out.weights[i] > out.weights[best]) best = i;
    CHECK((out.state.flat() - out.weights[best] * cands[best].bound.flat()).norm() < 1e-15);
  }

  SUBCASE("ties keep the lowest (relation, direction, entity)") {
    // Relation 0 holds entities 0, 2, 4; relation 1 holds 1, 3.
    auto flat = zero_weighting(de + dr, 2);
    auto out = assemble_memory(e_i, r_q, cands, flat, 0, 2, empty);
    CHECK(out.selected == std::vector<std::size_t>{0, 2});
    cands[0].direction = Direction::Right;
    out = assemble_memory(e_i, r_q, cands, flat, 0, 2, empty);
    CHECK(out.selected == std::vector<std::size_t>{2, 4});
  }

  SUBCASE("mixed binding kinds are rejected") {
    auto bad = cands;
    bad[2].bound = MemoryState::zeros(BindingKind::CConv, 3, 3);
    CHECK_THROWS_AS(assemble_memory(e_i, r_q, bad, p, 0, 200, empty), ShapeError);
  }
}

TEST_CASE("local weight matrix") {
  std::mt19937_64 rng(4);
  HarmonyParams h;
  const Eigen::Index m = 4;
  h.w_global = symmetric(m, rng);
  h.w_map = Matrix::Zero(m, m);
  h.b_map = Vector::Ones(m);
  h.bias = Vector::Zero(m);
  auto mem = flat_memory(gaussian(m, rng));
  CHECK(local_weight_matrix(mem, h) == h.w_global);
  h.b_map.setZero();
  CHECK(local_weight_matrix(mem, h).isZero(0.0));

  for (int t = 0; t < 20; ++t) {
    h.w_map = Matrix::Random(m, m);
    h.b_map = gaussian(m, rng);
    h.w_global = symmetric(m, rng);
    auto mem2 = flat_memory(gaussian(m, rng));
    const Vector f = h.w_map * mem2.flat() + h.b_map;
    CHECK((filter_vector(mem2.flat(), h) - f).norm() < 1e-14);
    const Matrix wi = local_weight_matrix(mem2, h);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        CHECK(wi(a, b) == doctest::Approx(f[a] * f[b] * h.w_global(a, b)).epsilon(1e-14));
        CHECK(wi(a, b) == wi(b, a));
      }
  }
}

TEST_CASE("harmony completion examples") {
  std::mt19937_64 rng(5);
  const Eigen::Index m = 6;
  auto mem = flat_memory(gaussian(m, rng));
  const Matrix w = symmetric(m, rng);
  const Vector b = gaussian(m, rng);

  auto same = harmony_complete(mem, w, b, kInfiniteLambda);
  CHECK(same.flat() == mem.flat());

  auto zero_w = harmony_complete(mem, Matrix::Zero(m, m), Vector::Zero(m), 1.0);
  CHECK((zero_w.flat() - mem.flat()).norm() < 1e-15);

  auto with_bias = harmony_complete(mem, Matrix::Zero(m, m), b, 1.0);
  CHECK((with_bias.flat() - (mem.flat() + 0.5 * b)).norm() < 1e-14);
  CHECK(numeric_gradient(mem.flat(), with_bias.flat(), Matrix::Zero(m, m), b, 1.0).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("harmony completion is the maximizer on random stable instances") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> dim(1, 16);
  std::uniform_real_distribution<double> margin(1.05, 3.0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index m = dim(rng);
    const Matrix w = symmetric(m, rng);
    const double norm = Eigen::SelfAdjointEigenSolver<Matrix>(w).eigenvalues().cwiseAbs().maxCoeff();
    const double lambda = std::max(norm, 1e-3) * margin(rng);
    auto mem = flat_memory(gaussian(m, rng));
    const Vector b = gaussian(m, rng);

    auto out = harmony_complete(mem, w, b, lambda);
    const Vector& x = out.flat();
    CHECK(numeric_gradient(mem.flat(), x, w, b, lambda).cwiseAbs().maxCoeff() < 1e-8);

    const double at = objective(mem.flat(), x, w, b, lambda);
    CHECK(harmony_value(mem.flat(), x, w, b, lambda) == doctest::Approx(at).epsilon(1e-12));
    for (int p = 0; p < 100; ++p) {
      const Vector delta = 1e-3 * gaussian(m, rng).normalized();
      CHECK(objective(mem.flat(), x + delta, w, b, lambda) <= at);
    }

    Eigen::SelfAdjointEigenSolver<Matrix> eig(w - lambda * Matrix::Identity(m, m));
    CHECK(eig.eigenvalues().maxCoeff() < 0.0);
  }
}

TEST_CASE("printed-formula solve") {
  std::mt19937_64 rng(7);
  const Eigen::Index m = 5;
  const Matrix w = 0.1 * symmetric(m, rng);
  auto mem = flat_memory(gaussian(m, rng));
  const Vector b = gaussian(m, rng);
  const double lambda = 2.0;
  auto out = harmony_complete(mem, w, b, lambda, HarmonySolve::PrintedFormula);
  const Vector expected = (w - lambda * Matrix::Identity(m, m)).inverse() * (2 * lambda * mem.flat() + b);
  CHECK((out.flat() - expected).cwiseAbs().maxCoeff() < 1e-12);
  auto rhs = harmony_rhs(lambda, HarmonySolve::Stationary);
  CHECK(rhs.memory_coef == lambda);
  CHECK(rhs.bias_coef == 0.5);
}

TEST_CASE("unstable completion is refused") {
  const Eigen::Index m = 3;
  Matrix w = Matrix::Identity(m, m) * 2.0;
  auto mem = flat_memory(Vector::Ones(m));
  CHECK_THROWS_AS(harmony_complete(mem, w, Vector::Zero(m), 1.0), StabilityError);
  CHECK_THROWS_AS(harmony_complete(mem, w, Vector::Zero(m), 2.0), StabilityError);
  Matrix neg = -2.0 * Matrix::Identity(m, m);
  CHECK_THROWS_AS(harmony_complete(mem, neg, Vector::Zero(m), 1.5), StabilityError);
  CHECK_NOTHROW(harmony_complete(mem, w, Vector::Zero(m), 2.5));
  CHECK(spectrally_bounded(w, 2.5));
  CHECK_FALSE(spectrally_bounded(w, 2.0));
}

TEST_CASE("spectral norm estimate") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const Matrix w = symmetric(10, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(w);
    const double exact = eig.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(spectral_norm_estimate(w, 500) == doctest::Approx(exact).epsilon(1e-3));
    CHECK(spectral_norm_estimate(w) <= exact * (1 + 1e-12));
  }
  CHECK(spectral_norm_estimate(Matrix::Zero(4, 4)) == 0.0);
}
