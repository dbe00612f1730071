// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is 0 only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "hmem/binding.hpp"
#include "hmem/capacity.hpp"
#include "hmem/eval.hpp"
#include "hmem/kg_store.hpp"
#include "hmem/memory.hpp"
#include "hmem/train.hpp"
#include "synthetic.hpp"

using namespace hmem;
using binding::Matrix;
using binding::Vector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

Vector gaussian(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Singleton TPR retrieval and the transform-based circular convolution.
Outcome binding_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  double tpr_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Vector r = gaussian(20, rng).normalized();
    const Vector e = gaussian(100, rng);
    tpr_err = std::max(tpr_err, (binding::unbind_tpr(r, binding::bind_tpr(r, e)) - e).cwiseAbs().maxCoeff());
  }
  double conv_err = 0.0;
  for (Eigen::Index d : {2, 3, 8, 128}) {
    for (int t = 0; t < 10; ++t) {
      const Vector r = gaussian(d, rng), e = gaussian(d, rng);
      Vector conv = Vector::Zero(d), corr = Vector::Zero(d);
      for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index i = 0; i < d; ++i) {
          conv[k] += r[i] * e[((k - i) % d + d) % d];
          corr[k] += r[i] * e[(k + i) % d];
        }
      conv_err = std::max(conv_err, (binding::circular_convolve(r, e) - conv).cwiseAbs().maxCoeff());
      conv_err = std::max(conv_err, (binding::circular_correlate(r, e) - corr).cwiseAbs().maxCoeff());
    }
  }
  const double secs = seconds_since(t0);
  return {tpr_err <= 1e-12 && conv_err <= 1e-10 && secs < 1.0,
          "tpr max err " + fmt("%.2e", tpr_err) + ", cconv max err " + fmt("%.2e", conv_err) + ", " +
              fmt("%.3f", secs) + " s"};
}

// 2. Harmony completion is the stationary maximum of the quadratic objective.
Outcome harmony_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(1, 16);
  std::uniform_real_distribution<double> margin(1.01, 4.0);
  double worst_grad = 0.0;
  bool local_max = true, identity = true;
  auto objective = [](const Vector& M, const Vector& m, const Matrix& W, const Vector& b, double lambda) {
    double quad = 0.0, lin = 0.0, dist = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      for (Eigen::Index j = 0; j < m.size(); ++j) quad += m[i] * W(i, j) * m[j];
      lin += b[i] * m[i];
      dist += (M[i] - m[i]) * (M[i] - m[i]);
    }
    return 0.5 * (quad + lin) - 0.5 * lambda * dist;
  };
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index m = dim(rng);
    Matrix a(m, m);
    for (Eigen::Index i = 0; i < m; ++i) a.row(i) = gaussian(m, rng).transpose();
    const Matrix w = 0.5 * (a + a.transpose());
    const double norm = Eigen::SelfAdjointEigenSolver<Matrix>(w).eigenvalues().cwiseAbs().maxCoeff();
    const double lambda = std::max(norm, 1e-3) * margin(rng);
    const Vector M = gaussian(m, rng), b = gaussian(m, rng);
    const auto mem = binding::MemoryState::from_flat(BindingKind::Tpr, 1, m, M);
    const Vector x = memory::harmony_complete(mem, w, b, lambda).flat();
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < m; ++i) {
      Vector up = x, down = x;
      up[i] += h;
      down[i] -= h;
      worst_grad = std::max(worst_grad, std::abs(objective(M, up, w, b, lambda) - objective(M, down, w, b, lambda)) / (2 * h));
    }
    const double at = objective(M, x, w, b, lambda);
    for (int p = 0; p < 100; ++p) {
      const Vector delta = 1e-3 * gaussian(m, rng).normalized();
      local_max &= objective(M, x + delta, w, b, lambda) <= at;
    }
    identity &= memory::harmony_complete(mem, w, b, memory::kInfiniteLambda).flat() == M;
  }
  const double secs = seconds_since(t0);
  return {worst_grad < 1e-8 && local_max && identity && secs < 10.0,
          "max |grad| " + fmt("%.2e", worst_grad) + (local_max ? ", local max" : ", NOT a local max") +
              (identity ? ", lambda=inf identity" : ", lambda=inf altered input") + ", " + fmt("%.2f", secs) + " s"};
}

// 3. Analytic gradients against central differences in all 16 cells.
Outcome gradient_gate() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto triplets = testing::toy_triplets();
  const auto index = kg::build_neighbor_index(3, 2, triplets);
  const auto batch = testing::toy_batch(triplets, 3);
  double worst = 0.0;
  std::string where;
  int cells = 0;
  for (auto kind : {BindingKind::Tpr, BindingKind::CConv})
    for (double lambda : {memory::kInfiniteLambda, 1.0})
      for (bool implicit : {false, true})
        for (bool ablate : {false, true}) {
          model::TrainConfig cfg;
          cfg.binding = kind;
          cfg.d_e = 4;
          cfg.d_r = kind == BindingKind::CConv ? 4 : 3;
          cfg.lambda = lambda;
          cfg.implicit = implicit;
          cfg.ablate_local_w = ablate;
          model::Model m(cfg, testing::toy_params(cfg, 3, 2, 3));
          m.refresh_whitening();
          for (const auto& e : testing::gradient_check(m, batch, index)) {
            if (e.relative_error > worst) {
              worst = e.relative_error;
              where = std::string(to_string(kind)) + "/" + e.name;
            }
          }
          ++cells;
        }
  const double secs = seconds_since(t0);
  return {cells == 16 && worst < 1e-4 && secs < 120.0,
          std::to_string(cells) + " cells, worst relative error " + fmt("%.2e", worst) + " (" + where + "), " +
              fmt("%.2f", secs) + " s"};
}

// 4. Whitened covariance: (1/d) I at alpha = 0, and the regularized identity.
Outcome whitening() {
  std::mt19937_64 rng(4);
  const Eigen::Index n = 400, d = 8;
  Matrix mix(d, d);
  for (Eigen::Index i = 0; i < d; ++i) mix.row(i) = gaussian(d, rng).transpose();
  Matrix data(n, d);
  for (Eigen::Index i = 0; i < n; ++i) data.row(i) = (mix * gaussian(d, rng)).transpose() + Vector::Constant(d, 3.0).transpose();

  auto whitened_cov = [&](const binding::WhiteningStats& s) {
    Matrix w(n, d);
    for (Eigen::Index i = 0; i < n; ++i) w.row(i) = binding::whiten(data.row(i).transpose(), s).transpose();
    const Vector mean = w.colwise().mean().transpose();
    const Matrix c = w.rowwise() - mean.transpose();
    return Matrix((c.transpose() * c) / static_cast<double>(n));
  };
  const auto s0 = binding::fit_whitening(data, 0.0);
  const double err0 = (whitened_cov(s0) - Matrix::Identity(d, d) / static_cast<double>(d)).cwiseAbs().maxCoeff();

  const auto s2 = binding::fit_whitening(data, 0.2);
  const Matrix expected = s2.inv_sqrt * s2.empirical_cov * s2.inv_sqrt / static_cast<double>(d);
  const double err2 = (whitened_cov(s2) - expected).cwiseAbs().maxCoeff();
  return {err0 < 1e-8 && err2 < 1e-10,
          "alpha=0 deviation from I/d " + fmt("%.2e", err0) + ", alpha=0.2 identity error " + fmt("%.2e", err2)};
}

// Nonincreasing least-squares fit (pool adjacent violators).
std::vector<double> antitonic_fit(const std::vector<double>& y) {
  std::vector<double> level;
  std::vector<std::size_t> count;
  for (double v : y) {
    level.push_back(v);
    count.push_back(1);
    while (level.size() > 1 && level[level.size() - 2] < level.back()) {
      const double c1 = static_cast<double>(count[count.size() - 2]), c2 = static_cast<double>(count.back());
      const double merged = (level[level.size() - 2] * c1 + level.back() * c2) / (c1 + c2);
      const std::size_t total = count[count.size() - 2] + count.back();
      level.pop_back();
      count.pop_back();
      level.back() = merged;
      count.back() = total;
    }
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < level.size(); ++i) out.insert(out.end(), count[i], level[i]);
  return out;
}

// 5. Capacity curve with 100 entities (d=100) and 20 relations (d=20).
Outcome capacity_curve() {
  const auto t0 = std::chrono::steady_clock::now();
  capacity::CapacityConfig cfg;
  const auto pts = capacity::simulate_tpr_capacity(cfg);
  std::vector<double> y;
  std::ostringstream curve;
  for (const auto& p : pts) {
    y.push_back(p.hits_at_1);
    curve << (curve.tellp() ? " " : "") << p.n_bindings << ":" << fmt("%.3f", p.hits_at_1);
  }
  const auto fit = antitonic_fit(y);
  double residual = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) residual = std::max(residual, std::abs(y[i] - fit[i]));
  const double secs = seconds_since(t0);
  return {y.front() == 1.0 && residual < 0.02 && secs < 300.0,
          "curve " + curve.str() + ", max isotonic residual " + fmt("%.4f", residual) + ", " + fmt("%.1f", secs) + " s"};
}

// 6. Least-squares memory equals the probability-weighted superposition.
Outcome optimal_memory() {
  double worst = 0.0;
  bool pass = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = capacity::optimal_memory_check(40, 6, 4, seed);
    worst = std::max(worst, r.max_abs_error);
    pass &= r.passed(1e-8);
  }
  return {pass, "20 seeds, max |M* - d_r S| " + fmt("%.2e", worst)};
}

model::TrainConfig desk_config(double lambda, std::uint64_t seed) {
  model::TrainConfig cfg;
  cfg.d_e = 20;
  cfg.d_r = 4;
  cfg.lambda = lambda;
  cfg.n_negatives = 100;
  cfg.batch_size = 128;
  cfg.learning_rate = 0.01;
  cfg.epochs = 40;
  cfg.eval_every = 0;
  cfg.seed = seed;
  return cfg;
}

// 7. End-to-end learning on the clustered graph; lambda = 1 against lambda = inf.
Outcome end_to_end() {
  const auto g = testing::clustered_graph();
  const auto [train, test] = testing::hold_out_supported(g.triplets, 0.1);
  const auto index = kg::build_neighbor_index(g.n_entities, g.n_relations, train);
  const eval::FilterSet filter(g.triplets);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  double h1_harmony = 0.0, h1_identity = 0.0, worst_h10 = 1.0, worst_mrr = 1.0, harmony_secs = 0.0;
  for (auto seed : seeds) {
    for (double lambda : {1.0, memory::kInfiniteLambda}) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = model::train(desk_config(lambda, seed), g.n_entities, g.n_relations, train, index);
      const auto m = eval::evaluate(test, result.model, index, filter).metrics;
      if (std::isinf(lambda)) {
        h1_identity += m.hits_at_1 / static_cast<double>(seeds.size());
      } else {
        harmony_secs += seconds_since(t0);
        h1_harmony += m.hits_at_1 / static_cast<double>(seeds.size());
        worst_h10 = std::min(worst_h10, m.hits_at_10);
        worst_mrr = std::min(worst_mrr, m.mrr);
      }
    }
  }
  const double per_run = harmony_secs / static_cast<double>(seeds.size());
  return {worst_h10 >= 0.9 && worst_mrr >= 0.5 && h1_harmony > h1_identity && per_run < 900.0,
          "lambda=1: min hits@10 " + fmt("%.3f", worst_h10) + ", min MRR " + fmt("%.3f", worst_mrr) +
              ", mean hits@1 " + fmt("%.3f", h1_harmony) + " vs lambda=inf " + fmt("%.3f", h1_identity) + ", " +
              fmt("%.0f", per_run) + " s per run"};
}

// 8. Held-out entity MRR as the inference pool grows.
Outcome augmentation() {
  const auto g = testing::clustered_graph();
  kg::KnowledgeGraph kg;
  for (std::size_t i = 0; i < g.n_entities; ++i) kg.entities.add("e" + std::to_string(i));
  for (std::size_t r = 0; r < g.n_relations; ++r) kg.relations.add("r" + std::to_string(r));
  kg.triplets = g.triplets;
  const auto split = kg::generate_gen_split(kg, 20, 0);
  const auto index = kg::build_neighbor_index(g.n_entities, g.n_relations, split.train);
  const eval::FilterSet filter(g.triplets);
  auto cfg = desk_config(1.0, 0);
  cfg.epochs = 30;
  const auto result = model::train(cfg, g.n_entities, g.n_relations, split.train, index);

  std::vector<Triplet> source = split.observed;
  source.insert(source.end(), split.valid.begin(), split.valid.end());
  const std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
  const std::size_t n_seeds = 5;
  std::vector<std::vector<double>> mrr(fractions.size());
  for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
    const auto pool = eval::inference_pool(source, seed);
    const auto rows = eval::evaluate_gen(split.heldout, pool, split.test, result.model, filter, fractions);
    for (std::size_t i = 0; i < rows.size(); ++i) mrr[i].push_back(rows[i].evaluation.metrics.mrr);
  }
  std::vector<double> mean, se;
  for (const auto& v : mrr) {
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    mean.push_back(mu);
    se.push_back(std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size())));
  }
  bool pass = true;
  std::ostringstream os;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    os << (i ? ", " : "") << fractions[i] << ":" << fmt("%.3f", mean[i]) << "+-" << fmt("%.3f", se[i]);
    if (i > 0) pass &= mean[i] >= mean[i - 1] - std::max(se[i], se[i - 1]);
  }
  return {pass, std::to_string(split.test.size()) + " test triplets, mean MRR by fraction " + os.str()};
}

// 9. Filtered ranking against an independent brute-force ranking.
Outcome evaluation_oracle() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<EntityId> ent(0, 9);
  std::uniform_int_distribution<RelationId> rel(0, 2);
  std::set<Triplet> edges;
  while (edges.size() < 35) edges.insert({ent(rng), rel(rng), ent(rng)});
  std::vector<Triplet> all(edges.begin(), edges.end());
  std::shuffle(all.begin(), all.end(), rng);
  const std::vector<Triplet> train(all.begin(), all.begin() + 25), test(all.begin() + 25, all.end());
  model::TrainConfig cfg;
  cfg.d_e = 5;
  cfg.d_r = 3;
  const model::Model m(cfg, model::init_params(cfg, 10, 3, 9));
  const auto index = kg::build_neighbor_index(10, 3, train);
  const auto ev = eval::evaluate(test, m, index, eval::FilterSet(all));

  std::size_t mismatches = 0, filtered_worse = 0, i = 0;
  for (const auto& t : test) {
    for (auto side : {QuerySide::Left, QuerySide::Right}) {
      const auto q = model::query_for(t, side);
      const EntityId truth = model::answer_for(t, side);
      const Vector e_o = model::query_output(q, m, index);
      const double d_true = (e_o - m.entity_vector(truth)).squaredNorm();
      double filtered = 1.0, raw = 1.0;
      for (EntityId c = 0; c < 10; ++c) {
        if (c == truth) continue;
        const Triplet completed = side == QuerySide::Right ? Triplet{q.known, q.relation, c} : Triplet{c, q.relation, q.known};
        const double d = (e_o - m.entity_vector(c)).squaredNorm();
        const double inc = d < d_true ? 1.0 : d == d_true ? 0.5 : 0.0;
        raw += inc;
        if (!edges.count(completed)) filtered += inc;
      }
      const auto& r = ev.results[i++];
      mismatches += r.rank != filtered || r.raw_rank != raw || r.true_entity != truth;
      filtered_worse += r.rank > r.raw_rank;
    }
  }
  return {mismatches == 0 && filtered_worse == 0 && i == ev.results.size(),
          std::to_string(i) + " queries, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(filtered_worse) + " filtered > raw"};
}

// Partition checks shared by the real and synthetic variants of criterion 10.
std::string split_violations(const kg::KnowledgeGraph& kg, const kg::GenSplit& s, std::size_t n_heldout) {
  const std::set<EntityId> held(s.heldout.begin(), s.heldout.end());
  auto touching = [&](const Triplet& t) { return int(held.count(t.head)) + int(held.count(t.tail)); };
  if (held.size() != n_heldout) return "wrong held-out count";
  for (const auto& t : s.train)
    if (touching(t) != 0) return "train triplet touches a held-out entity";
  std::size_t both = 0;
  for (const auto& t : kg.triplets) both += touching(t) == 2;
  if (both != s.discarded_both_heldout) return "discard count mismatch";
  for (const auto* part : {&s.observed, &s.valid, &s.test})
    for (const auto& t : *part)
      if (touching(t) != 1) return "non-train triplet does not touch exactly one held-out entity";
  const std::size_t rest = s.observed.size() + s.valid.size() + s.test.size();
  if (s.train.size() + rest + both != kg.triplets.size()) return "partition does not cover the graph";
  const double sixth = static_cast<double>(rest) / 6.0;
  for (std::size_t part : {s.valid.size(), s.test.size()})
    if (std::abs(static_cast<double>(part) - sixth) > 1.0) return "valid/test not within one triplet of 1/6";
  if (std::abs(static_cast<double>(s.observed.size()) - 4.0 * sixth) > 1.0) return "observed not within one triplet of 2/3";
  return "";
}

// 10. Generalization split fidelity (real WN18 when provided).
Outcome split_fidelity() {
  if (const char* dir = std::getenv("HMEM_WN18_DIR")) {
    const auto data = kg::load_dataset(dir);
    const auto kg = data.graph();
    const auto split = kg::generate_gen_split(kg, 1500, 0);
    const std::string bad = split_violations(kg, split, 1500);
    const double train_dev = std::abs(static_cast<double>(split.train.size()) - 141442.0) / 141442.0;
    return {bad.empty() && train_dev <= 0.02,
            "WN18: train " + std::to_string(split.train.size()) + " (" + fmt("%.2f", 100 * train_dev) +
                "% from 141442), observed " + std::to_string(split.observed.size()) + ", valid " +
                std::to_string(split.valid.size()) + ", test " + std::to_string(split.test.size()) +
                (bad.empty() ? "" : ", " + bad)};
  }
  std::size_t checked = 0;
  std::string first_bad;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<EntityId> ent(0, 199);
    std::uniform_int_distribution<RelationId> rel(0, 4);
    kg::KnowledgeGraph kg;
    for (int i = 0; i < 200; ++i) kg.entities.add("e" + std::to_string(i));
    for (int r = 0; r < 5; ++r) kg.relations.add("r" + std::to_string(r));
    std::set<Triplet> edges;
    while (edges.size() < 1500) edges.insert({ent(rng), rel(rng), ent(rng)});
    kg.triplets.assign(edges.begin(), edges.end());
    const auto split = kg::generate_gen_split(kg, 15, seed);
    const std::string bad = split_violations(kg, split, 15);
    if (!bad.empty() && first_bad.empty()) first_bad = "seed " + std::to_string(seed) + ": " + bad;
    ++checked;
  }
  return {first_bad.empty(), "no WN18 files (HMEM_WN18_DIR unset); partition invariants on " +
                                 std::to_string(checked) + " synthetic graphs" +
                                 (first_bad.empty() ? "" : ", " + first_bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"binding exactness", binding_exactness},
      {"harmony correctness", harmony_correctness},
      {"gradient gate", gradient_gate},
      {"whitening", whitening},
      {"capacity curve", capacity_curve},
      {"optimal memory", optimal_memory},
      {"end-to-end learning", end_to_end},
      {"augmentation monotonicity", augmentation},
      {"evaluation oracle", evaluation_oracle},
      {"split fidelity", split_fidelity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %zu %s: %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
