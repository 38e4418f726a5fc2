#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tjstg/synth.h"

using namespace tjstg;
namespace fs = std::filesystem;

namespace {

std::size_t popcount(const Tensor& gt) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] != 0.0) ++n;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("gen_scene is deterministic") {
  TaskConfig cfg;
  cfg.seed = 99;
  const SyntheticScene a = gen_scene(cfg, 17);
  const SyntheticScene b = gen_scene(cfg, 17);
  CHECK(a.audio == b.audio);
  CHECK(a.visual_map == b.visual_map);
  CHECK(a.question_words == b.question_words);
  CHECK(a.gt_spatial == b.gt_spatial);
  CHECK(a.gt_temporal == b.gt_temporal);
  CHECK(a.answer == b.answer);
  CHECK(a.target_word_index == b.target_word_index);

  const SyntheticScene c = gen_scene(cfg, 18);
  CHECK_FALSE(a.audio == c.audio);
}

TEST_CASE("scene shapes and ground-truth invariants") {
  TaskConfig cfg;
  cfg.seed = 3;
  for (std::uint64_t idx = 0; idx < 40; ++idx) {
    const SyntheticScene s = gen_scene(cfg, idx);
    REQUIRE(s.audio.shape() == std::vector<std::size_t>{cfg.segments, cfg.dim});
    REQUIRE(s.visual_map.shape() ==
            std::vector<std::size_t>{cfg.segments, cfg.grid_h, cfg.grid_w, cfg.dim});
    REQUIRE(s.question_words.shape() ==
            std::vector<std::size_t>{cfg.words, cfg.dim});
    REQUIRE(s.gt_temporal.shape() == std::vector<std::size_t>{cfg.segments});
    CHECK(s.target_word_index < cfg.words);
    CHECK(s.answer < cfg.answers);
    CHECK(s.answer == std::min(cfg.answers - 1, popcount(s.gt_temporal)));

    const std::size_t hw = cfg.regions();
    for (std::size_t t = 0; t < cfg.segments; ++t) {
      std::size_t cells = 0;
      for (std::size_t r = 0; r < hw; ++r)
        if (s.gt_spatial[t * hw + r] != 0.0) ++cells;
      if (s.gt_temporal[t] == 0.0)
        CHECK(cells == 0);  // inactive segments have all-zero spatial truth
      else
        CHECK(cells == 1);
    }
  }
}

TEST_CASE("a noise-free scene with two active segments stores answer 2") {
  TaskConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.seed = 12;
  bool found = false;
  for (std::uint64_t idx = 0; idx < 64 && !found; ++idx) {
    const SyntheticScene s = gen_scene(cfg, idx);
    if (popcount(s.gt_temporal) == 2) {
      CHECK(s.answer == 2);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("answer histogram over 1000 scenes matches the intended distribution") {
  TaskConfig cfg;
  cfg.seed = 2024;
  const ConceptBank bank = ConceptBank::make(cfg);
  std::vector<std::size_t> histogram(cfg.answers, 0);
  for (std::uint64_t idx = 0; idx < 1000; ++idx) {
    const SyntheticScene s = gen_scene(cfg, bank, idx);
    // Brute-force recount from the stored temporal truth.
    const std::size_t recount = std::min(cfg.answers - 1, popcount(s.gt_temporal));
    REQUIRE(recount == s.answer);
    ++histogram[s.answer];
  }
  // Intended: uniform over the C answers; 0.25 +- 5 percentage points covers
  // well over 3 sigma at n=1000.
  for (std::size_t c = 0; c < cfg.answers; ++c)
    CHECK(std::abs(histogram[c] / 1000.0 - 0.25) < 0.05);
}

TEST_CASE("noise-free planted cells are exactly separable by nearest concept") {
  TaskConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.seed = 77;
  const ConceptBank bank = ConceptBank::make(cfg);
  const std::size_t hw = cfg.regions();
  for (std::uint64_t idx = 0; idx < 50; ++idx) {
    const SyntheticScene s = gen_scene(cfg, bank, idx);
    for (std::size_t t = 0; t < cfg.segments; ++t) {
      const double* cell =
          s.visual_map.data() + (t * hw + s.planted_cells[t]) * cfg.dim;
      std::size_t best = 0;
      double best_dot = -1e300;
      for (std::size_t k = 0; k < cfg.concepts; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cfg.dim; ++j)
          dot += cell[j] * bank.concepts.at(k, j);
        if (dot > best_dot) {
          best_dot = dot;
          best = k;
        }
      }
      CHECK(best == s.segment_concepts[t]);
      if (s.gt_temporal[t] != 0.0) CHECK(best == s.target_concept);
    }
    // The target word carries the target concept.
    const double* word =
        s.question_words.data() + s.target_word_index * cfg.dim;
    double dot = 0.0;
    for (std::size_t j = 0; j < cfg.dim; ++j)
      dot += word[j] * bank.concepts.at(s.target_concept, j);
    CHECK(dot == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("existential task produces balanced presence labels") {
  TaskConfig cfg;
  cfg.task = QuestionKind::kExistential;
  cfg.seed = 31;
  std::size_t present = 0;
  for (std::uint64_t idx = 0; idx < 400; ++idx) {
    const SyntheticScene s = gen_scene(cfg, idx);
    REQUIRE(s.answer <= 1);
    CHECK(s.answer == (popcount(s.gt_temporal) > 0 ? 1u : 0u));
    present += s.answer;
  }
  CHECK(std::abs(present / 400.0 - 0.5) < 0.085);  // 3 sigma and a margin
}

TEST_CASE("gen_dataset writes a loadable manifest with correct split tags") {
  const fs::path dir = fresh_dir("tjstg_ds_small");
  TaskConfig cfg;
  cfg.seed = 5;
  const std::string manifest_path = gen_dataset(cfg, 10, 2, 2, 0.5, dir.string());

  nlohmann::json manifest;
  std::ifstream(manifest_path) >> manifest;
  CHECK(manifest.at("format") == "tjstg-dataset-v1");
  CHECK(manifest.at("scenes").size() == 14);
  CHECK(manifest.at("config").at("dim") == cfg.dim);
  for (const auto& row : manifest.at("scenes")) {
    CHECK(row.contains("id"));
    CHECK(row.contains("split"));
    CHECK(row.contains("stem"));
    CHECK(row.contains("answer"));
    CHECK(row.contains("question_type"));
    CHECK(row.contains("target_word_index"));
    CHECK(row.contains("match_audio_of"));
    CHECK(row.contains("match_label"));
  }

  const Dataset ds = Dataset::load(dir.string());
  CHECK(ds.train.size() == 10);
  CHECK(ds.val.size() == 2);
  CHECK(ds.test.size() == 2);
  CHECK(ds.scenes.size() == 14);
  CHECK(ds.cfg.seed == cfg.seed);
  CHECK(ds.cfg.dim == cfg.dim);

  // Scenes on disk match regeneration.
  const SyntheticScene regen = gen_scene(cfg, 0);
  CHECK(ds.scenes[0].audio == regen.audio);
  CHECK(ds.scenes[0].visual_map == regen.visual_map);
}

TEST_CASE("matching negatives stay within the split and balance near the fraction") {
  const fs::path dir = fresh_dir("tjstg_ds_neg");
  TaskConfig cfg;
  cfg.seed = 8;
  gen_dataset(cfg, 300, 30, 30, 0.5, dir.string());
  const Dataset ds = Dataset::load(dir.string());

  std::size_t negatives = 0;
  for (const SceneEntry& e : ds.entries) {
    if (e.match_label == 0) {
      ++negatives;
      CHECK(e.match_audio_of != e.id);
      CHECK(ds.entries[e.match_audio_of].split == e.split);
      CHECK(ds.match_audio(e.id) == ds.scenes[e.match_audio_of].audio);
    } else {
      CHECK(e.match_audio_of == e.id);
    }
  }
  const double frac = static_cast<double>(negatives) / ds.entries.size();
  CHECK(std::abs(frac - 0.5) < 0.08);  // 3 sigma at n=360 is ~0.079
}

TEST_CASE("same seed twice gives identical manifest and tensor bytes") {
  const fs::path dir1 = fresh_dir("tjstg_ds_det1");
  const fs::path dir2 = fresh_dir("tjstg_ds_det2");
  TaskConfig cfg;
  cfg.seed = 21;
  const std::string m1 = gen_dataset(cfg, 6, 1, 1, 0.5, dir1.string());
  const std::string m2 = gen_dataset(cfg, 6, 1, 1, 0.5, dir2.string());
  CHECK(slurp(m1) == slurp(m2));
  CHECK(slurp(dir1 / "scenes/s000000_visual.tjt") ==
        slurp(dir2 / "scenes/s000000_visual.tjt"));
  CHECK(slurp(dir1 / "scenes/s000003_audio.tjt") ==
        slurp(dir2 / "scenes/s000003_audio.tjt"));
}

TEST_CASE("gen_dataset validates its inputs") {
  TaskConfig cfg;
  CHECK_THROWS_AS(gen_dataset(cfg, 0, 1, 1, 0.5, "/tmp/tjstg_bad"), ContractError);
  CHECK_THROWS_AS(gen_dataset(cfg, 1, 1, 1, 1.5, "/tmp/tjstg_bad"), ContractError);
  CHECK_THROWS_AS(gen_dataset(cfg, 1, 1, 1, 0.5, "/proc/nope/out"), IoError);
  TaskConfig bad;
  bad.noise_sigma = -1.0;
  CHECK_THROWS_AS(gen_scene(bad, 0), ContractError);
}
