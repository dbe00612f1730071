#include "hmem/capacity.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "hmem/errors.hpp"
#include "hmem/parallel.hpp"

namespace hmem::capacity {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

bool run_trial(const CapacityConfig& cfg, std::size_t n, std::mt19937_64& rng) {
  const Matrix entities = gaussian(static_cast<Eigen::Index>(cfg.n_entities), cfg.d_e, 1.0 / std::sqrt(cfg.d_e), rng);
  Matrix relations = gaussian(static_cast<Eigen::Index>(cfg.n_relations), cfg.d_r, 1.0 / std::sqrt(cfg.d_r), rng);
  relations.rowwise().normalize();

  std::uniform_int_distribution<std::size_t> pick_rel(0, cfg.n_relations - 1);
  std::uniform_int_distribution<std::size_t> pick_ent(0, cfg.n_entities - 1);
  Matrix memory = Matrix::Zero(cfg.d_r, cfg.d_e);
  std::vector<std::pair<std::size_t, std::size_t>> stored;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = pick_rel(rng);
    const auto e = pick_ent(rng);
    memory += relations.row(static_cast<Eigen::Index>(r)).transpose() * entities.row(static_cast<Eigen::Index>(e));
    stored.emplace_back(r, e);
  }

  std::set<std::size_t> present;
  for (const auto& [r, e] : stored) present.insert(r);
  std::uniform_int_distribution<std::size_t> pick_probe(0, present.size() - 1);
  const auto probe = *std::next(present.begin(), static_cast<std::ptrdiff_t>(pick_probe(rng)));

  const binding::Vector out = memory.transpose() * relations.row(static_cast<Eigen::Index>(probe)).transpose();
  Eigen::Index nearest = 0;
  (entities.rowwise() - out.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
  return std::any_of(stored.begin(), stored.end(), [&](const auto& s) {
    return s.first == probe && s.second == static_cast<std::size_t>(nearest);
  });
}

}  // namespace

void CapacityConfig::validate() const {
  if (n_entities == 0 || n_relations == 0 || d_e <= 0 || d_r <= 0 || trials == 0) {
    throw ConfigError("capacity config: counts and dimensions must be positive");
  }
  if (n_bindings.empty()) throw ConfigError("capacity config: empty n_bindings grid");
  for (auto n : n_bindings)
    if (n == 0) throw ConfigError("capacity config: n_bindings entries must be at least 1");
}

CapacityConfig capacity_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("capacity config must be a JSON object");
  static const std::set<std::string> known = {"n_entities", "d_e", "n_relations", "d_r", "n_bindings", "trials", "seed"};
  CapacityConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown capacity config field '" + key + "'");
      auto count = [](const nlohmann::json& v) { return v.is_number_integer() && v.get<std::int64_t>() >= 0; };
      const bool ok = key == "n_bindings" ? value.is_array() && std::all_of(value.begin(), value.end(), count)
                                          : count(value);
      if (!ok) throw ConfigError("capacity config field '" + key + "' has the wrong type");
    }
    if (j.contains("n_entities")) cfg.n_entities = j["n_entities"].get<std::size_t>();
    if (j.contains("d_e")) cfg.d_e = j["d_e"].get<int>();
    if (j.contains("n_relations")) cfg.n_relations = j["n_relations"].get<std::size_t>();
    if (j.contains("d_r")) cfg.d_r = j["d_r"].get<int>();
    if (j.contains("n_bindings")) cfg.n_bindings = j["n_bindings"].get<std::vector<std::size_t>>();
    if (j.contains("trials")) cfg.trials = j["trials"].get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("capacity config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::vector<CapacityPoint> simulate_tpr_capacity(const CapacityConfig& cfg, int threads) {
  cfg.validate();
  std::vector<CapacityPoint> out;
  for (std::size_t p = 0; p < cfg.n_bindings.size(); ++p) {
    std::vector<char> hits(cfg.trials, 0);
    parallel_for(cfg.trials, threads, [&](std::size_t t) {
      std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                        static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(t)};
      std::mt19937_64 rng(seq);
      hits[t] = run_trial(cfg, cfg.n_bindings[p], rng);
    });
    const auto n_hits = static_cast<double>(std::count(hits.begin(), hits.end(), 1));
    out.push_back({cfg.n_bindings[p], n_hits / static_cast<double>(cfg.trials), cfg.trials});
  }
  return out;
}

void write_capacity_csv(std::span<const CapacityPoint> points, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "n_bindings,hits_at_1,trials\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.hits_at_1);
    f << p.n_bindings << ',' << buf << ',' << p.trials << '\n';
  }
}

OptimalMemoryReport optimal_memory_check(std::size_t n_pairs, int d_e, int d_r, std::uint64_t seed) {
  if (d_e <= 0 || d_r <= 0) throw ConfigError("optimal memory check: dimensions must be positive");
  if (n_pairs == 0 || n_pairs % static_cast<std::size_t>(d_r) != 0) {
    throw ConfigError("optimal memory check: n_pairs must be a positive multiple of d_r");
  }
  std::mt19937_64 rng(seed);
  const Matrix basis = Eigen::HouseholderQR<Matrix>(gaussian(d_r, d_r, 1.0, rng)).householderQ();
  const Matrix entities = gaussian(static_cast<Eigen::Index>(n_pairs), d_e, 1.0 / std::sqrt(d_e), rng);
  const double p = 1.0 / static_cast<double>(n_pairs);

  // Normal equations of the weighted loss: (sum p r r^T) M = sum p r e^T.
  Matrix second_moment = Matrix::Zero(d_r, d_r);
  OptimalMemoryReport rep;
  rep.superposition = Matrix::Zero(d_r, d_e);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const binding::Vector r = basis.col(static_cast<Eigen::Index>(i % static_cast<std::size_t>(d_r)));
    second_moment += p * r * r.transpose();
    rep.superposition += p * r * entities.row(static_cast<Eigen::Index>(i));
  }
  rep.least_squares = second_moment.ldlt().solve(rep.superposition);
  rep.fitted_scale = (rep.least_squares.cwiseProduct(rep.superposition)).sum() / rep.superposition.squaredNorm();
  rep.predicted_scale = d_r;
  rep.max_abs_error = (rep.least_squares - rep.predicted_scale * rep.superposition).cwiseAbs().maxCoeff();
  return rep;
}

}  // namespace hmem::capacity
