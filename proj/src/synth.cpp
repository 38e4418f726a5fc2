#include "tjstg/synth.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace tjstg {

namespace {

// Stream ids forked off the dataset seed. Scenes get kSceneStreamBase + index.
constexpr std::uint64_t kBankStream = 0;
constexpr std::uint64_t kPairingStream = 1;
constexpr std::uint64_t kSceneStreamBase = 16;

std::size_t max_active(const TaskConfig& cfg) {
  return std::min(cfg.segments, cfg.answers - 1);
}

// Uniform concept index different from `avoid`.
std::size_t draw_distractor(Rng& rng, std::size_t concepts, std::size_t avoid) {
  std::size_t k = rng.next_below(concepts - 1);
  return k >= avoid ? k + 1 : k;
}

void add_noise(Rng& rng, double sigma, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += sigma * rng.next_gaussian();
}

}  // namespace

const char* to_string(QuestionKind k) {
  return k == QuestionKind::kCounting ? "counting" : "existential";
}

QuestionKind question_kind_from_string(const std::string& s) {
  if (s == "counting") return QuestionKind::kCounting;
  if (s == "existential") return QuestionKind::kExistential;
  throw ContractError("unknown question kind: " + s);
}

void TaskConfig::validate() const {
  if (segments < 1 || words < 1 || grid_h < 1 || grid_w < 1 || dim < 1 ||
      answers < 1 || concepts < 1)
    throw ContractError("TaskConfig: every extent must be >= 1");
  if (noise_sigma < 0.0)
    throw ContractError("TaskConfig: noise_sigma must be >= 0");
  if (concepts < 2)
    throw ContractError("TaskConfig: need at least 2 concepts for distractors");
}

namespace {

// Gram-Schmidt over Gaussian draws: `rows` orthonormal d-vectors (rows > d
// would be degenerate; callers keep rows <= d). Draws are redone whenever a
// vector falls into the span of the previous ones.
Tensor random_orthonormal(Rng& rng, std::size_t rows, std::size_t d) {
  Tensor m({rows, d});
  for (std::size_t k = 0; k < rows; ++k) {
    double norm2 = 0.0;
    while (norm2 < 1e-6) {
      for (std::size_t j = 0; j < d; ++j) m.at(k, j) = rng.next_gaussian();
      for (std::size_t prev = 0; prev < k; ++prev) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += m.at(k, j) * m.at(prev, j);
        for (std::size_t j = 0; j < d; ++j) m.at(k, j) -= dot * m.at(prev, j);
      }
      norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm2 += m.at(k, j) * m.at(k, j);
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j) m.at(k, j) *= inv;
  }
  return m;
}

// Audio concepts keep this norm; larger-than-unit features give the
// audio-visual attention usable logits from the start.
constexpr double kAudioGain = 2.0;

}  // namespace

ConceptBank ConceptBank::make(const TaskConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(kBankStream);
  // Mutually orthonormal concepts: distinct classes never leak into each
  // other's feature direction, only the additive noise does.
  if (cfg.concepts > cfg.dim)
    throw ContractError("TaskConfig: concepts must not exceed dim");
  ConceptBank bank;
  bank.concepts = random_orthonormal(rng, cfg.concepts, cfg.dim);
  // The audio image of a concept is a fixed scaled rotation of it.
  bank.audio_map = random_orthonormal(rng, cfg.dim, cfg.dim);
  for (std::size_t i = 0; i < bank.audio_map.size(); ++i)
    bank.audio_map[i] *= kAudioGain;
  return bank;
}

SyntheticScene gen_scene(const TaskConfig& cfg, const ConceptBank& bank,
                         std::uint64_t scene_index) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(kSceneStreamBase + scene_index);
  const std::size_t T = cfg.segments, N = cfg.words, d = cfg.dim;
  const std::size_t hw = cfg.regions();

  SyntheticScene scene;
  scene.kind = cfg.task;
  scene.target_concept = rng.next_below(cfg.concepts);

  std::size_t n_active = 0;
  const std::size_t cap = max_active(cfg);
  if (cfg.task == QuestionKind::kCounting) {
    // Uniform over 0..min(T, C-1) so stored answers are uniform over the
    // vocabulary and chance accuracy is exactly 1/C.
    n_active = rng.next_below(cap + 1);
  } else {
    // Balanced presence/absence.
    n_active = (cap == 0 || rng.next_double() < 0.5) ? 0 : 1 + rng.next_below(cap);
  }

  // Partial Fisher-Yates: first n_active entries of a shuffled 0..T-1.
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n_active && i + 1 < T; ++i) {
    const std::size_t j = i + rng.next_below(T - i);
    std::swap(order[i], order[j]);
  }
  std::vector<bool> active(T, false);
  for (std::size_t i = 0; i < n_active; ++i) active[order[i]] = true;

  scene.segment_concepts.resize(T);
  scene.planted_cells.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    scene.segment_concepts[t] =
        active[t] ? scene.target_concept
                  : draw_distractor(rng, cfg.concepts, scene.target_concept);
    scene.planted_cells[t] = rng.next_below(hw);
  }

  // Visual: background noise everywhere, the segment's concept added into
  // one planted cell. Audio: fixed linear image of the same concept.
  scene.visual_map = Tensor({T, cfg.grid_h, cfg.grid_w, d});
  scene.audio = Tensor({T, d});
  scene.gt_spatial = Tensor({T, cfg.grid_h, cfg.grid_w});
  scene.gt_temporal = Tensor({T});
  for (std::size_t t = 0; t < T; ++t) {
    double* seg = scene.visual_map.data() + t * hw * d;
    add_noise(rng, cfg.noise_sigma, seg, hw * d);
    const double* concept_vec =
        bank.concepts.data() + scene.segment_concepts[t] * d;
    double* cell = seg + scene.planted_cells[t] * d;
    for (std::size_t j = 0; j < d; ++j) cell[j] += concept_vec[j];

    double* audio_row = scene.audio.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        s += bank.audio_map.at(i, j) * concept_vec[j];
      audio_row[i] = s;
    }
    add_noise(rng, cfg.noise_sigma, audio_row, d);

    if (active[t]) {
      scene.gt_temporal[t] = 1.0;
      scene.gt_spatial[t * hw + scene.planted_cells[t]] = 1.0;
    }
  }

  scene.target_word_index = rng.next_below(N);
  scene.question_words = Tensor({N, d});
  for (std::size_t w = 0; w < N; ++w) {
    const std::size_t k =
        w == scene.target_word_index
            ? scene.target_concept
            : draw_distractor(rng, cfg.concepts, scene.target_concept);
    double* row = scene.question_words.data() + w * d;
    const double* concept_vec = bank.concepts.data() + k * d;
    for (std::size_t j = 0; j < d; ++j) row[j] = concept_vec[j];
    add_noise(rng, cfg.noise_sigma, row, d);
  }

  scene.answer = cfg.task == QuestionKind::kCounting
                     ? std::min(cfg.answers - 1, n_active)
                     : (n_active > 0 ? 1u : 0u);
  scene.match_label = 1;
  return scene;
}

SyntheticScene gen_scene(const TaskConfig& cfg, std::uint64_t scene_index) {
  return gen_scene(cfg, ConceptBank::make(cfg), scene_index);
}

// --- dataset io ---------------------------------------------------------------

namespace {

ordered_json config_json(const TaskConfig& cfg) {
  return ordered_json{{"segments", cfg.segments},
                      {"words", cfg.words},
                      {"grid_h", cfg.grid_h},
                      {"grid_w", cfg.grid_w},
                      {"dim", cfg.dim},
                      {"answers", cfg.answers},
                      {"concepts", cfg.concepts},
                      {"noise_sigma", cfg.noise_sigma},
                      {"seed", cfg.seed},
                      {"task", to_string(cfg.task)}};
}

TaskConfig config_from_json(const nlohmann::json& j) {
  TaskConfig cfg;
  cfg.segments = j.at("segments").get<std::size_t>();
  cfg.words = j.at("words").get<std::size_t>();
  cfg.grid_h = j.at("grid_h").get<std::size_t>();
  cfg.grid_w = j.at("grid_w").get<std::size_t>();
  cfg.dim = j.at("dim").get<std::size_t>();
  cfg.answers = j.at("answers").get<std::size_t>();
  cfg.concepts = j.at("concepts").get<std::size_t>();
  cfg.noise_sigma = j.at("noise_sigma").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.task = question_kind_from_string(j.at("task").get<std::string>());
  return cfg;
}

std::string scene_stem(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scenes/s%06zu", id);
  return buf;
}

void write_scene(const fs::path& dir, const std::string& stem,
                 const SyntheticScene& s) {
  const std::string base = (dir / stem).string();
  write_tensor(base + "_audio.tjt", s.audio);
  write_tensor(base + "_visual.tjt", s.visual_map);
  write_tensor(base + "_question.tjt", s.question_words);
  write_tensor(base + "_gt_spatial.tjt", s.gt_spatial);
  write_tensor(base + "_gt_temporal.tjt", s.gt_temporal);
}

}  // namespace

std::string gen_dataset(const TaskConfig& cfg, std::size_t n_train,
                        std::size_t n_val, std::size_t n_test,
                        double negative_fraction, const std::string& out_dir) {
  cfg.validate();
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw ContractError("gen_dataset: split sizes must be >= 1");
  if (negative_fraction < 0.0 || negative_fraction > 1.0)
    throw ContractError("gen_dataset: negative fraction must be in [0,1]");

  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "scenes", ec);
  if (ec) throw IoError("cannot create " + (root / "scenes").string() + ": " + ec.message());

  const ConceptBank bank = ConceptBank::make(cfg);
  const std::size_t total = n_train + n_val + n_test;
  std::vector<SceneEntry> entries(total);
  std::vector<std::vector<std::size_t>> split_ids(3);
  for (std::size_t id = 0; id < total; ++id) {
    const std::size_t split = id < n_train ? 0 : (id < n_train + n_val ? 1 : 2);
    SceneEntry& e = entries[id];
    e.id = id;
    e.split = split == 0 ? "train" : (split == 1 ? "val" : "test");
    e.stem = scene_stem(id);
    split_ids[split].push_back(id);

    const SyntheticScene scene = gen_scene(cfg, bank, id);
    e.answer = scene.answer;
    e.question_type = to_string(scene.kind);
    e.target_word_index = scene.target_word_index;
    e.match_audio_of = id;
    e.match_label = 1;
    write_scene(root, e.stem, scene);
  }

  // Matching negatives pair audio from another scene of the same split.
  Rng pair_rng = Rng(cfg.seed).fork(kPairingStream);
  for (const auto& ids : split_ids) {
    for (const std::size_t id : ids) {
      if (pair_rng.next_double() < negative_fraction && ids.size() > 1) {
        std::size_t other = pair_rng.next_below(ids.size() - 1);
        const std::size_t pos = static_cast<std::size_t>(
            std::find(ids.begin(), ids.end(), id) - ids.begin());
        if (other >= pos) ++other;
        entries[id].match_audio_of = ids[other];
        entries[id].match_label = 0;
      }
    }
  }

  ordered_json manifest;
  manifest["format"] = "tjstg-dataset-v1";
  manifest["config"] = config_json(cfg);
  manifest["negative_fraction"] = negative_fraction;
  manifest["splits"] = ordered_json{
      {"train", n_train}, {"val", n_val}, {"test", n_test}};
  ordered_json rows = ordered_json::array();
  for (const SceneEntry& e : entries) {
    rows.push_back(ordered_json{{"id", e.id},
                                {"split", e.split},
                                {"stem", e.stem},
                                {"answer", e.answer},
                                {"question_type", e.question_type},
                                {"target_word_index", e.target_word_index},
                                {"match_audio_of", e.match_audio_of},
                                {"match_label", e.match_label}});
  }
  manifest["scenes"] = std::move(rows);

  const fs::path manifest_path = root / "manifest.json";
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("short write: " + manifest_path.string());
  return manifest_path.string();
}

Dataset Dataset::load(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("cannot open manifest in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("format", "") != "tjstg-dataset-v1")
    throw IoError("unknown manifest format in " + dir);

  Dataset ds;
  ds.cfg = config_from_json(manifest.at("config"));
  for (const auto& row : manifest.at("scenes")) {
    SceneEntry e;
    e.id = row.at("id").get<std::size_t>();
    e.split = row.at("split").get<std::string>();
    e.stem = row.at("stem").get<std::string>();
    e.answer = row.at("answer").get<std::size_t>();
    e.question_type = row.at("question_type").get<std::string>();
    e.target_word_index = row.at("target_word_index").get<std::size_t>();
    e.match_audio_of = row.at("match_audio_of").get<std::size_t>();
    e.match_label = row.at("match_label").get<int>();
    if (e.id != ds.entries.size())
      throw IoError("manifest scene ids must be dense and ordered");
    const std::string base = (root / e.stem).string();
    SyntheticScene s;
    s.audio = read_tensor(base + "_audio.tjt");
    s.visual_map = read_tensor(base + "_visual.tjt");
    s.question_words = read_tensor(base + "_question.tjt");
    s.gt_spatial = read_tensor(base + "_gt_spatial.tjt");
    s.gt_temporal = read_tensor(base + "_gt_temporal.tjt");
    s.answer = e.answer;
    s.target_word_index = e.target_word_index;
    s.match_label = e.match_label;
    s.kind = question_kind_from_string(e.question_type);
    if (e.split == "train")
      ds.train.push_back(e.id);
    else if (e.split == "val")
      ds.val.push_back(e.id);
    else if (e.split == "test")
      ds.test.push_back(e.id);
    else
      throw IoError("unknown split tag: " + e.split);
    ds.entries.push_back(std::move(e));
    ds.scenes.push_back(std::move(s));
  }
  for (const SceneEntry& e : ds.entries)
    if (e.match_audio_of >= ds.scenes.size())
      throw IoError("match_audio_of out of range in manifest");
  return ds;
}

const std::vector<std::size_t>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ContractError("unknown split: " + name);
}

const Tensor& Dataset::match_audio(std::size_t id) const {
  return scenes.at(entries.at(id).match_audio_of).audio;
}

}  // namespace tjstg
