#include "hmem/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "hmem/errors.hpp"

namespace hmem::model {

namespace {

constexpr char kMagic[8] = {'H', 'M', 'E', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
T get_field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

std::size_t get_count(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("config field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) throw FormatError("bad digest in checkpoint manifest");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("bad digest in checkpoint manifest");
  }
}

struct RawBlock {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<RawBlock> all_blocks(Checkpoint& c) {
  std::vector<RawBlock> out;
  for (auto& b : c.params.blocks()) out.push_back({b.name, b.data, b.rows, b.cols});
  if (c.whitening) {
    auto& w = *c.whitening;
    out.push_back({"whitening.mean", w.mean.data(), w.mean.size(), 1});
    out.push_back({"whitening.empirical_cov", w.empirical_cov.data(), w.empirical_cov.rows(), w.empirical_cov.cols()});
    out.push_back(
        {"whitening.regularized_cov", w.regularized_cov.data(), w.regularized_cov.rows(), w.regularized_cov.cols()});
    out.push_back({"whitening.inv_sqrt", w.inv_sqrt.data(), w.inv_sqrt.rows(), w.inv_sqrt.cols()});
  }
  return out;
}

}  // namespace

nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["binding"] = cfg.binding == BindingKind::Tpr ? "tpr" : "cconv";
  j["implicit"] = cfg.implicit;
  j["ablate_local_w"] = cfg.ablate_local_w;
  j["whiten"] = cfg.whiten ? nlohmann::ordered_json(*cfg.whiten) : nlohmann::ordered_json(nullptr);
  j["whiten_alpha"] = cfg.whiten_alpha;
  j["whiten_per_step"] = cfg.whiten_per_step;
  if (std::isinf(cfg.lambda)) {
    j["lambda"] = "inf";
  } else {
    j["lambda"] = cfg.lambda;
  }
  j["eq8_verbatim"] = cfg.eq8_verbatim;
  j["per_relation_w_score"] = cfg.per_relation_w_score;
  j["d_e"] = cfg.d_e;
  j["d_r"] = cfg.d_r;
  j["k"] = cfg.k;
  j["n_negatives"] = cfg.n_negatives;
  j["learning_rate"] = cfg.learning_rate;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["eval_every"] = cfg.eval_every;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig cfg) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {"binding", "implicit", "ablate_local_w", "whiten", "whiten_alpha",
                                              "whiten_per_step", "lambda", "eq8_verbatim", "per_relation_w_score",
                                              "d_e", "d_r", "k", "n_negatives", "learning_rate", "epochs",
                                              "batch_size", "seed", "eval_every"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  if (j.contains("binding")) {
    const auto b = get_field<std::string>(j, "binding");
    if (b == "tpr") {
      cfg.binding = BindingKind::Tpr;
    } else if (b == "cconv") {
      cfg.binding = BindingKind::CConv;
    } else {
      throw ConfigError("binding must be \"tpr\" or \"cconv\"");
    }
  }
  if (j.contains("implicit")) cfg.implicit = get_field<bool>(j, "implicit");
  if (j.contains("ablate_local_w")) cfg.ablate_local_w = get_field<bool>(j, "ablate_local_w");
  if (j.contains("whiten")) {
    if (j["whiten"].is_null()) {
      cfg.whiten.reset();
    } else {
      cfg.whiten = get_field<bool>(j, "whiten");
    }
  }
  if (j.contains("whiten_alpha")) cfg.whiten_alpha = get_field<double>(j, "whiten_alpha");
  if (j.contains("whiten_per_step")) cfg.whiten_per_step = get_field<bool>(j, "whiten_per_step");
  if (j.contains("lambda")) {
    const auto& l = j["lambda"];
    if (l.is_string()) {
      if (l.get<std::string>() != "inf") throw ConfigError("lambda must be a number or \"inf\"");
      cfg.lambda = memory::kInfiniteLambda;
    } else {
      cfg.lambda = get_field<double>(j, "lambda");
    }
  }
  if (j.contains("eq8_verbatim")) cfg.eq8_verbatim = get_field<bool>(j, "eq8_verbatim");
  if (j.contains("per_relation_w_score")) cfg.per_relation_w_score = get_field<bool>(j, "per_relation_w_score");
  if (j.contains("d_e")) cfg.d_e = static_cast<int>(get_count(j, "d_e"));
  if (j.contains("d_r")) cfg.d_r = static_cast<int>(get_count(j, "d_r"));
  if (j.contains("k")) cfg.k = get_count(j, "k");
  if (j.contains("n_negatives")) cfg.n_negatives = get_count(j, "n_negatives");
  if (j.contains("learning_rate")) cfg.learning_rate = get_field<double>(j, "learning_rate");
  if (j.contains("epochs")) cfg.epochs = get_count(j, "epochs");
  if (j.contains("batch_size")) cfg.batch_size = get_count(j, "batch_size");
  if (j.contains("seed")) cfg.seed = get_field<std::uint64_t>(j, "seed");
  if (j.contains("eval_every")) cfg.eval_every = get_count(j, "eval_every");
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

Model Checkpoint::model() const {
  Model m(config, params);
  if (whitening) m.set_whitening(whitening);
  return m;
}

nlohmann::ordered_json checkpoint_manifest(const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointVersion;
  j["n_entities"] = copy.params.embeddings.entities.rows();
  j["n_relations"] = copy.params.embeddings.relations_left.rows();
  j["memory_size"] = copy.config.memory_size();
  j["config"] = config_to_json(copy.config);
  j["entity_vocab_digest"] = hex64(copy.entity_vocab_digest);
  j["relation_vocab_digest"] = hex64(copy.relation_vocab_digest);
  if (copy.whitening) j["whitening_alpha"] = copy.whitening->alpha;
  auto blocks = nlohmann::ordered_json::array();
  std::size_t n_params = 0;
  for (const auto& b : all_blocks(copy)) {
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
    if (b.name.rfind("whitening.", 0) != 0) n_params += static_cast<std::size_t>(b.rows * b.cols);
  }
  j["n_parameters"] = n_params;
  j["blocks"] = blocks;
  return j;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string manifest = checkpoint_manifest(ckpt).dump();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, manifest.size());
  out += manifest;
  Checkpoint copy = ckpt;
  for (const auto& b : all_blocks(copy)) {
    for (Eigen::Index i = 0; i < b.rows * b.cols; ++i) put_u64(out, std::bit_cast<std::uint64_t>(b.data[i]));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = sizeof kMagic + 4 + 8;
  if (in.size() < header) throw FormatError("checkpoint truncated: " + path.string());
  if (std::memcmp(in.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint (bad magic): " + path.string());
  const auto version = static_cast<std::uint32_t>(get_le(in, 8, 4));
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_len = get_le(in, 12, 8);
  if (manifest_len > in.size() - header) throw FormatError("checkpoint truncated in manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in.substr(header, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint manifest: ") + e.what());
  }

  Checkpoint c;
  std::size_t n_entities = 0;
  std::size_t n_relations = 0;
  try {
    c.config = config_from_json(manifest.at("config"));
    n_entities = manifest.at("n_entities").get<std::size_t>();
    n_relations = manifest.at("n_relations").get<std::size_t>();
    c.entity_vocab_digest = parse_hex64(manifest.at("entity_vocab_digest").get<std::string>());
    c.relation_vocab_digest = parse_hex64(manifest.at("relation_vocab_digest").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid config in checkpoint: ") + e.what());
  }
  c.params = init_params(c.config, n_entities, n_relations, 0);
  if (manifest.contains("whitening_alpha")) {
    const auto d = c.config.d_e;
    c.whitening = binding::WhiteningStats{Vector::Zero(d), Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d),
                                          manifest["whitening_alpha"].get<double>()};
  }

  auto blocks = all_blocks(c);
  const auto& listed = manifest.at("blocks");
  if (!listed.is_array() || listed.size() != blocks.size()) throw FormatError("checkpoint block list does not match config");
  std::size_t pos = header + manifest_len;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& entry = listed[b];
    if (entry.at("name").get<std::string>() != blocks[b].name || entry.at("rows").get<Eigen::Index>() != blocks[b].rows ||
        entry.at("cols").get<Eigen::Index>() != blocks[b].cols) {
      throw FormatError("checkpoint block " + blocks[b].name + " does not match config");
    }
    const auto n = static_cast<std::size_t>(blocks[b].rows * blocks[b].cols);
    if (in.size() - pos < 8 * n) throw FormatError("checkpoint truncated in block " + blocks[b].name);
    for (std::size_t i = 0; i < n; ++i, pos += 8) blocks[b].data[i] = std::bit_cast<double>(get_le(in, pos, 8));
  }
  if (pos != in.size()) throw FormatError("trailing bytes after checkpoint data");
  c.params.harmony.lambda = c.config.lambda;
  return c;
}

}  // namespace hmem::model
