#include "tjstg/model.h"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tjstg/rng.h"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace tjstg {

const char* to_string(InterleaveOrder order) {
  switch (order) {
    case InterleaveOrder::kVA: return "va";
    case InterleaveOrder::kAV: return "av";
    case InterleaveOrder::kCatVA: return "cat-va";
    case InterleaveOrder::kCatAV: return "cat-av";
  }
  return "va";
}

InterleaveOrder interleave_order_from_string(const std::string& s) {
  if (s == "va") return InterleaveOrder::kVA;
  if (s == "av") return InterleaveOrder::kAV;
  if (s == "cat-va") return InterleaveOrder::kCatVA;
  if (s == "cat-av") return InterleaveOrder::kCatAV;
  throw ContractError("unknown interleave order: " + s);
}

void ModelConfig::validate() const {
  if (dim < 1 || answers < 1) throw ContractError("ModelConfig: dim and answers must be >= 1");
  if (heads < 1 || dim % heads != 0)
    throw ContractError("ModelConfig: heads must divide dim");
  if (tau < 0.0) throw ContractError("ModelConfig: tau must be >= 0");
  if (lambda_match < 0.0) throw ContractError("ModelConfig: lambda must be >= 0");
}

namespace {

constexpr std::uint64_t kParamInitStream = 3;

void add_param(ParamSet& p, Rng& rng, const std::string& name,
               std::vector<std::size_t> shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = bound * (2.0 * rng.next_double() - 1.0);
  p.values.emplace(name, std::move(t));
}

void add_lstm(ParamSet& p, Rng& rng, const std::string& prefix, std::size_t d) {
  add_param(p, rng, prefix + ".Wx", {d, 4 * d}, d);
  add_param(p, rng, prefix + ".Wh", {d, 4 * d}, d);
  add_param(p, rng, prefix + ".b", {1, 4 * d}, d);
  // Forget-gate bias starts at +1 so cell state persists across segments
  // from the first step; gate order is [i | f | g | o].
  Tensor& b = p.values.at(prefix + ".b");
  for (std::size_t j = d; j < 2 * d; ++j) b[j] += 1.0;
}

void add_mlp(ParamSet& p, Rng& rng, const std::string& prefix, std::size_t in,
             std::size_t hidden, std::size_t out) {
  add_param(p, rng, prefix + ".W1", {in, hidden}, in);
  add_param(p, rng, prefix + ".b1", {1, hidden}, in);
  add_param(p, rng, prefix + ".W2", {hidden, out}, hidden);
  add_param(p, rng, prefix + ".b2", {1, out}, hidden);
}

}  // namespace

ParamSet ParamSet::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  Rng rng = Rng(seed).fork(kParamInitStream);
  ParamSet p;
  // Creation order is fixed; it defines the draw order from the stream.
  add_param(p, rng, "audio_proj.W", {d, d}, d);
  add_param(p, rng, "audio_proj.b", {1, d}, d);
  add_lstm(p, rng, "q_lstm", d);
  add_mlp(p, rng, "q_mlp", 2 * d, d, d);
  add_param(p, rng, "tsg.fuse.W", {2 * d, d}, 2 * d);
  add_param(p, rng, "tsg.fuse.b", {1, d}, 2 * d);
  add_lstm(p, rng, "a_lstm", d);
  add_lstm(p, rng, "v_lstm", d);
  add_param(p, rng, "jtg.Wq", {d, d}, d);
  add_param(p, rng, "jtg.Wk", {d, d}, d);
  add_mlp(p, rng, "jtg.mlp", d, d, d);
  add_param(p, rng, "head.W", {d, cfg.answers}, d);
  add_param(p, rng, "head.b", {1, cfg.answers}, d);
  add_mlp(p, rng, "match", 2 * d, d, 1);
  return p;
}

Bound ParamSet::bind(ad::Graph& g) const {
  Bound bound;
  for (const auto& [name, t] : values) bound.emplace(name, g.param(t));
  return bound;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(values.size());
  for (const auto& [name, t] : values) out.push_back(name);
  return out;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamSet::stage1_names() {
  return {"audio_proj.W", "audio_proj.b",
          "q_lstm.Wx",    "q_lstm.Wh",    "q_lstm.b",
          "q_mlp.W1",     "q_mlp.b1",     "q_mlp.W2",  "q_mlp.b2",
          "tsg.fuse.W",   "tsg.fuse.b",
          "match.W1",     "match.b1",     "match.W2",  "match.b2"};
}

namespace {

std::string file_name_for(const std::string& param) {
  std::string s = param;
  for (char& c : s)
    if (c == '.') c = '_';
  return s + ".tjt";
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamSet& params,
                     const ModelConfig& cfg) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "params", ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir + ": " + ec.message());

  ordered_json index;
  index["format"] = "tjstg-checkpoint-v1";
  index["model"] = ordered_json{{"dim", cfg.dim},
                                {"answers", cfg.answers},
                                {"heads", cfg.heads},
                                {"tau", cfg.tau},
                                {"order", to_string(cfg.order)},
                                {"target_aware", cfg.target_aware},
                                {"csl_enabled", cfg.csl_enabled},
                                {"renormalize_spatial", cfg.renormalize_spatial},
                                {"lambda", cfg.lambda_match}};
  ordered_json rows = ordered_json::array();
  for (const auto& [name, t] : params.values) {
    const std::string file = file_name_for(name);
    write_tensor((root / "params" / file).string(), t);
    rows.push_back(ordered_json{
        {"name", name}, {"file", "params/" + file}, {"shape", t.shape()}});
  }
  index["params"] = std::move(rows);
  std::ofstream out(root / "index.json");
  if (!out) throw IoError("cannot write checkpoint index in " + dir);
  out << index.dump(2) << "\n";
  if (!out) throw IoError("short write: checkpoint index in " + dir);
}

std::pair<ParamSet, ModelConfig> load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "index.json");
  if (!in) throw IoError("cannot open checkpoint index in " + dir);
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint index in " + dir + ": " + e.what());
  }
  if (index.value("format", "") != "tjstg-checkpoint-v1")
    throw IoError("unknown checkpoint format in " + dir);

  ModelConfig cfg;
  const auto& m = index.at("model");
  cfg.dim = m.at("dim").get<std::size_t>();
  cfg.answers = m.at("answers").get<std::size_t>();
  cfg.heads = m.at("heads").get<std::size_t>();
  cfg.tau = m.at("tau").get<double>();
  cfg.order = interleave_order_from_string(m.at("order").get<std::string>());
  cfg.target_aware = m.at("target_aware").get<bool>();
  cfg.csl_enabled = m.at("csl_enabled").get<bool>();
  cfg.renormalize_spatial = m.at("renormalize_spatial").get<bool>();
  cfg.lambda_match = m.at("lambda").get<double>();
  cfg.validate();

  ParamSet params;
  for (const auto& row : index.at("params")) {
    const std::string name = row.at("name").get<std::string>();
    Tensor t = read_tensor((root / row.at("file").get<std::string>()).string());
    const auto shape = row.at("shape").get<std::vector<std::size_t>>();
    if (t.shape() != shape)
      throw IoError("checkpoint shape mismatch for " + name);
    params.values.emplace(name, std::move(t));
  }
  return {std::move(params), cfg};
}

}  // namespace tjstg
