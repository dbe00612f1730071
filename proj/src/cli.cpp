#include "hmem/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hmem/capacity.hpp"
#include "hmem/checkpoint.hpp"
#include "hmem/errors.hpp"
#include "hmem/eval.hpp"
#include "hmem/kg_store.hpp"
#include "hmem/train.hpp"

namespace hmem::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kOutputs = R"(Outputs (all under --out):
  train      checkpoint.hmem, curve.csv, run.json
  eval       metrics.json, metrics.csv, ranks.tsv, run.json
             + degree_bins.csv with --degree-bins, fractions.csv on a generalization split
  gen-split  heldout.txt, train.txt, observed.txt, valid.txt, test.txt, split.json, run.json
  simulate   capacity.csv, run.json
Exit status: 0 success, 2 usage or configuration error, 3 numeric failure.
HMEM_THREADS sets the worker count when --threads is absent (default 1).)";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string file_digest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "";
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json digests_of(const fs::path& dir) {
  json out = json::object();
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[f.filename().string()] = file_digest(f);
  return out;
}

int resolve_threads(const std::optional<int>& flag) {
  if (flag) return std::max(1, *flag);
  if (const char* env = std::getenv("HMEM_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ArgumentError(std::string("HMEM_THREADS is not an integer: ") + env);
    }
  }
  return 1;
}

class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& args) {
    j_["command"] = std::move(command);
    j_["args"] = args;
    j_["started_at"] = utc_now();
  }
  json& operator[](const char* key) { return j_[key]; }
  void write(const fs::path& out_dir, const std::string& status) {
    j_["status"] = status;
    j_["finished_at"] = utc_now();
    std::ofstream f(out_dir / "run.json");
    f << j_.dump(2) << '\n';
  }

 private:
  json j_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ArgumentError("cannot create output directory " + dir.string() + ": " + ec.message());
}

// Flags named after TrainConfig fields; set values override the config file.
struct ConfigFlags {
  std::optional<std::string> binding, lambda, whiten;
  std::optional<bool> implicit, ablate_local_w, whiten_per_step, eq8_verbatim, per_relation_w_score;
  std::optional<double> whiten_alpha, learning_rate;
  std::optional<std::size_t> d_e, d_r, k, n_negatives, epochs, batch_size, eval_every;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App& app) {
    app.add_option("--binding", binding, "tpr or cconv");
    app.add_option("--implicit", implicit, "learn memories directly as embeddings");
    app.add_option("--ablate_local_w", ablate_local_w, "use W_global in place of the local weight matrix");
    app.add_option("--whiten", whiten, "true, false or auto (on for cconv)");
    app.add_option("--whiten_alpha", whiten_alpha);
    app.add_option("--whiten_per_step", whiten_per_step);
    app.add_option("--lambda", lambda, "number or inf");
    app.add_option("--eq8_verbatim", eq8_verbatim);
    app.add_option("--per_relation_w_score", per_relation_w_score);
    app.add_option("--d_e", d_e);
    app.add_option("--d_r", d_r);
    app.add_option("--k", k);
    app.add_option("--n_negatives", n_negatives);
    app.add_option("--learning_rate", learning_rate);
    app.add_option("--epochs", epochs);
    app.add_option("--batch_size", batch_size);
    app.add_option("--seed", seed);
    app.add_option("--eval_every", eval_every);
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&j](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    put("binding", binding);
    put("implicit", implicit);
    put("ablate_local_w", ablate_local_w);
    if (whiten) {
      if (*whiten == "auto") {
        j["whiten"] = nullptr;
      } else if (*whiten == "true" || *whiten == "false") {
        j["whiten"] = *whiten == "true";
      } else {
        throw ConfigError("--whiten must be true, false or auto");
      }
    }
    put("whiten_alpha", whiten_alpha);
    put("whiten_per_step", whiten_per_step);
    if (lambda) {
      if (*lambda == "inf") {
        j["lambda"] = "inf";
      } else {
        try {
          std::size_t used = 0;
          j["lambda"] = std::stod(*lambda, &used);
          if (used != lambda->size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
          throw ConfigError("--lambda must be a number or inf");
        }
      }
    }
    put("eq8_verbatim", eq8_verbatim);
    put("per_relation_w_score", per_relation_w_score);
    put("d_e", d_e);
    put("d_r", d_r);
    put("k", k);
    put("n_negatives", n_negatives);
    put("learning_rate", learning_rate);
    put("epochs", epochs);
    put("batch_size", batch_size);
    put("seed", seed);
    put("eval_every", eval_every);
    return j;
  }
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

// Validation MRR: benchmark ranking on the train graph, or held-out-entity
// ranking from the observed pool on a generalization split.
model::Validator make_validator(const kg::Dataset& data, const kg::NeighborIndex& index,
                                const eval::FilterSet& filter, int threads) {
  if (data.valid.empty()) return {};
  if (data.is_gen_split()) {
    return [&data, &filter, threads](const model::Model& m) {
      const double full = 1.0;
      return eval::evaluate_gen(data.heldout, data.observed, data.valid, m, filter, std::span(&full, 1), threads)
          .front()
          .evaluation.metrics.mrr;
    };
  }
  return [&data, &index, &filter, threads](const model::Model& m) {
    return eval::evaluate(data.valid, m, index, filter, threads).metrics.mrr;
  };
}

int cmd_train(const fs::path& config_path, const ConfigFlags& flags, const fs::path& data_dir, const fs::path& out_dir,
              int threads, const std::vector<std::string>& args, std::ostream& out) {
  nlohmann::json cfg_json = config_path.empty() ? nlohmann::json::object() : read_json_file(config_path);
  if (!cfg_json.is_object()) throw ConfigError("config must be a JSON object");
  cfg_json.update(flags.overrides());
  const auto cfg = model::config_from_json(cfg_json);

  const auto data = kg::load_dataset(data_dir);
  ensure_dir(out_dir);
  RunManifest manifest("train", args);
  manifest["config"] = model::config_to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["threads"] = threads;
  manifest["data_dir"] = data_dir.string();
  manifest["inputs"] = digests_of(data_dir);
  if (!config_path.empty()) manifest["config_file"] = {{"path", config_path.string()}, {"digest", file_digest(config_path)}};

  const auto index = kg::build_neighbor_index(data.entities.size(), data.relations.size(), data.train);
  const auto all = data.all_triplets();
  const eval::FilterSet filter(all);
  const auto validator = make_validator(data, index, filter, threads);

  auto result = model::train(cfg, data.entities.size(), data.relations.size(), data.train, index, validator, threads,
                             [&out](const model::CurvePoint& p) {
                               out << "epoch " << p.epoch << " loss " << eval::format_number(p.train_loss);
                               if (p.valid_mrr) out << " valid_mrr " << eval::format_number(*p.valid_mrr);
                               out << '\n';
                             });

  model::Checkpoint ckpt{cfg, result.model.params(), result.model.whitening(), data.entities.digest(),
                         data.relations.digest()};
  model::save_checkpoint(ckpt, out_dir / "checkpoint.hmem");
  {
    std::ofstream f(out_dir / "curve.csv");
    f << "epoch,train_loss,valid_mrr\n";
    for (const auto& p : result.curve) {
      f << p.epoch << ',' << eval::format_number(p.train_loss) << ','
        << (p.valid_mrr ? eval::format_number(*p.valid_mrr) : "") << '\n';
    }
  }
  manifest["best_epoch"] = result.best_epoch;
  manifest["best_valid_mrr"] = result.best_valid_mrr ? json(*result.best_valid_mrr) : json(nullptr);
  manifest["outputs"] = {(out_dir / "checkpoint.hmem").string(), (out_dir / "curve.csv").string(),
                         (out_dir / "run.json").string()};
  manifest["checkpoint_digest"] = file_digest(out_dir / "checkpoint.hmem");
  if (result.divergence) {
    manifest["divergence"] = *result.divergence;
    manifest.write(out_dir, "diverged");
    throw NumericError("training diverged: " + *result.divergence + " (last good parameters saved)");
  }
  manifest.write(out_dir, "ok");
  return kExitOk;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double f = std::stod(item, &used);
      if (used != item.size() || !(f > 0.0 && f <= 1.0)) throw std::invalid_argument("range");
      out.push_back(f);
    } catch (const std::logic_error&) {
      throw ArgumentError("--fractions must be a comma-separated list of values in (0, 1]");
    }
  }
  if (out.empty()) throw ArgumentError("--fractions is empty");
  return out;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& out_dir, bool augment_valid,
             const std::optional<std::string>& fractions_text, std::optional<std::size_t> degree_bins,
             std::uint64_t pool_seed, int threads, const std::vector<std::string>& args) {
  const auto ckpt = model::load_checkpoint(ckpt_path);
  const auto data = kg::load_dataset(data_dir);
  if (ckpt.entity_vocab_digest != data.entities.digest() || ckpt.relation_vocab_digest != data.relations.digest() ||
      static_cast<std::size_t>(ckpt.params.embeddings.entities.rows()) != data.entities.size() ||
      static_cast<std::size_t>(ckpt.params.embeddings.relations_left.rows()) != data.relations.size()) {
    throw VocabError("checkpoint vocabulary does not match the data directory");
  }
  if (fractions_text && !data.is_gen_split()) {
    throw ArgumentError("--fractions requires a generalization split (heldout.txt)");
  }
  if (data.test.empty()) throw ArgumentError("data directory has no test triplets");
  const auto model = ckpt.model();

  ensure_dir(out_dir);
  RunManifest manifest("eval", args);
  manifest["checkpoint"] = {{"path", ckpt_path.string()}, {"digest", file_digest(ckpt_path)}};
  manifest["config"] = model::config_to_json(ckpt.config);
  manifest["data_dir"] = data_dir.string();
  manifest["inputs"] = digests_of(data_dir);
  manifest["augment_valid"] = augment_valid;
  manifest["threads"] = threads;

  const auto all = data.all_triplets();
  const eval::FilterSet filter(all);
  std::vector<std::string> outputs;
  auto output = [&](const char* name) {
    outputs.push_back((out_dir / name).string());
    return out_dir / name;
  };

  eval::Evaluation main;
  std::vector<std::size_t> degrees;
  if (data.is_gen_split()) {
    std::vector<Triplet> source = data.observed;
    if (augment_valid) source.insert(source.end(), data.valid.begin(), data.valid.end());
    const auto pool = eval::inference_pool(source, pool_seed);
    const auto fractions = fractions_text ? parse_fractions(*fractions_text) : std::vector<double>{1.0};
    manifest["seed"] = pool_seed;
    manifest["fractions"] = fractions;
    auto rows = eval::evaluate_gen(data.heldout, pool, data.test, model, filter, fractions, threads);
    eval::write_fractions_csv(rows, output("fractions.csv"));
    main = rows.back().evaluation;
    degrees = rows.back().pool_degree;
    manifest["isolated_heldout"] = rows.back().isolated_heldout;
  } else {
    auto index = kg::build_neighbor_index(data.entities.size(), data.relations.size(), data.train);
    if (augment_valid) index = kg::augment_index(index, data.valid);
    main = eval::evaluate(data.test, model, index, filter, threads);
    degrees = eval::index_degrees(index);
  }

  eval::write_metrics_json(main.metrics, output("metrics.json"));
  const std::pair<std::string, eval::Metrics> row{"test", main.metrics};
  eval::write_metrics_csv(std::span(&row, 1), output("metrics.csv"));
  eval::write_ranks_tsv(main.results, data.entities, data.relations, output("ranks.tsv"));
  if (degree_bins) {
    const auto bins = eval::degree_binned_mrr(main.results, degrees, *degree_bins);
    eval::write_degree_bins_csv(bins, output("degree_bins.csv"));
  }
  outputs.push_back((out_dir / "run.json").string());
  manifest["outputs"] = outputs;
  manifest["w_global_scale"] = main.w_global_scale;
  manifest["metrics"] = {{"mr", main.metrics.mr}, {"mrr", main.metrics.mrr}, {"hits_at_1", main.metrics.hits_at_1},
                         {"hits_at_3", main.metrics.hits_at_3}, {"hits_at_10", main.metrics.hits_at_10}};
  manifest.write(out_dir, "ok");
  return kExitOk;
}

int cmd_gen_split(const fs::path& data_dir, std::size_t n_heldout, std::uint64_t seed, const fs::path& out_dir,
                  const std::vector<std::string>& args) {
  const auto data = kg::load_dataset(data_dir);
  const auto graph = data.graph();
  const auto split = kg::generate_gen_split(graph, n_heldout, seed);
  ensure_dir(out_dir);
  RunManifest manifest("gen-split", args);
  manifest["data_dir"] = data_dir.string();
  manifest["inputs"] = digests_of(data_dir);
  manifest["seed"] = seed;
  manifest["n_heldout"] = n_heldout;
  kg::write_gen_split(split, graph, out_dir);
  std::vector<std::string> outputs;
  for (const char* name : {"heldout.txt", "train.txt", "observed.txt", "valid.txt", "test.txt", "split.json", "run.json"})
    outputs.push_back((out_dir / name).string());
  manifest["outputs"] = outputs;
  manifest["counts"] = {{"train", split.train.size()},
                        {"observed", split.observed.size()},
                        {"valid", split.valid.size()},
                        {"test", split.test.size()},
                        {"discarded_both_heldout", split.discarded_both_heldout}};
  manifest.write(out_dir, "ok");
  return kExitOk;
}

int cmd_simulate(const fs::path& config_path, const fs::path& out_dir, int threads,
                 const std::vector<std::string>& args) {
  const auto cfg = config_path.empty() ? capacity::CapacityConfig{}
                                       : capacity::capacity_config_from_json(read_json_file(config_path));
  cfg.validate();
  const auto points = capacity::simulate_tpr_capacity(cfg, threads);
  ensure_dir(out_dir);
  capacity::write_capacity_csv(points, out_dir / "capacity.csv");
  RunManifest manifest("simulate", args);
  manifest["config"] = {{"n_entities", cfg.n_entities}, {"d_e", cfg.d_e}, {"n_relations", cfg.n_relations},
                        {"d_r", cfg.d_r}, {"n_bindings", cfg.n_bindings}, {"trials", cfg.trials}, {"seed", cfg.seed}};
  if (!config_path.empty()) manifest["config_file"] = {{"path", config_path.string()}, {"digest", file_digest(config_path)}};
  manifest["seed"] = cfg.seed;
  manifest["threads"] = threads;
  manifest["outputs"] = {(out_dir / "capacity.csv").string(), (out_dir / "run.json").string()};
  manifest.write(out_dir, "ok");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Harmonic memory networks for knowledge-base completion", "hmem"};
  app.footer(kOutputs);
  app.require_subcommand(1);
  std::optional<int> threads_flag;
  app.add_option("--threads", threads_flag, "worker threads (default: HMEM_THREADS or 1)");

  std::string config_path, data_dir, out_dir, ckpt_path;
  ConfigFlags flags;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "JSON config mirroring the flags below");
  train->add_option("--data", data_dir, "directory with train.txt and optional valid.txt / test.txt")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--threads", threads_flag);
  flags.add_to(*train);

  bool augment_valid = false;
  std::optional<std::string> fractions;
  std::optional<std::size_t> degree_bins;
  std::uint64_t pool_seed = 0;
  auto* ev = app.add_subcommand("eval", "rank test triplets with a trained checkpoint");
  ev->add_option("--checkpoint", ckpt_path)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--out", out_dir)->required();
  ev->add_flag("--augment-valid", augment_valid, "add validation triplets to the inference graph");
  ev->add_option("--fractions", fractions, "inference-pool fractions, e.g. 0.25,0.5,0.75,1 (generalization split)");
  ev->add_option("--degree-bins", degree_bins, "bin width for degree-binned MRR")->check(CLI::PositiveNumber);
  ev->add_option("--seed", pool_seed, "inference-pool shuffle seed");
  ev->add_option("--threads", threads_flag);

  std::size_t n_heldout = 0;
  std::uint64_t split_seed = 0;
  auto* gs = app.add_subcommand("gen-split", "build a held-out-entity generalization split");
  gs->add_option("--data", data_dir)->required();
  gs->add_option("--heldout", n_heldout, "number of held-out entities")->required();
  gs->add_option("--seed", split_seed);
  gs->add_option("--out", out_dir)->required();

  auto* sim = app.add_subcommand("simulate", "Monte Carlo TPR memory capacity");
  sim->add_option("--config", config_path, "JSON capacity config");
  sim->add_option("--out", out_dir)->required();
  sim->add_option("--threads", threads_flag);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "hmem: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const int threads = resolve_threads(threads_flag);
    if (train->parsed()) return cmd_train(config_path, flags, data_dir, out_dir, threads, args, out);
    if (ev->parsed()) {
      return cmd_eval(ckpt_path, data_dir, out_dir, augment_valid, fractions, degree_bins, pool_seed, threads, args);
    }
    if (gs->parsed()) return cmd_gen_split(data_dir, n_heldout, split_seed, out_dir, args);
    if (sim->parsed()) return cmd_simulate(config_path, out_dir, threads, args);
  } catch (const NumericError& e) {
    err << "hmem: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "hmem: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "hmem: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace hmem::cli
