#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tjstg/rng.h"
#include "tjstg/tensor.h"

namespace tjstg {

enum class QuestionKind { kCounting, kExistential };

const char* to_string(QuestionKind k);
QuestionKind question_kind_from_string(const std::string& s);

struct TaskConfig {
  std::size_t segments = 6;  // T
  std::size_t words = 8;     // N, words per question
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t dim = 16;      // shared feature dimension d
  std::size_t answers = 4;   // C, answer vocabulary size
  std::size_t concepts = 6;  // K
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  QuestionKind task = QuestionKind::kCounting;

  std::size_t regions() const { return grid_h * grid_w; }
  void validate() const;  // throws ContractError on nonsense
};

// One audio-visual scene with planted ground truth. Every segment carries
// exactly one concept: the target concept in active segments, a distractor
// otherwise. Audio is a fixed linear image of the segment's concept, so the
// modalities stay cross-modally consistent; remaining grid cells are
// background noise.
struct SyntheticScene {
  Tensor audio;           // T x d
  Tensor visual_map;      // T x h x w x d
  Tensor question_words;  // N x d
  std::size_t target_word_index = 0;
  Tensor gt_spatial;      // T x h x w, binary, all-zero in inactive segments
  Tensor gt_temporal;     // T, binary
  std::size_t answer = 0;           // in [0, C)
  int match_label = 1;              // 1 = aligned audio/visual pair
  QuestionKind kind = QuestionKind::kCounting;
  std::size_t target_concept = 0;   // bank index, exposed for oracles
  std::vector<std::size_t> segment_concepts;  // bank index per segment
  std::vector<std::size_t> planted_cells;     // flat cell index per segment
};

// Per-seed fixtures shared by all scenes of a dataset: K unit-norm concept
// vectors and the fixed linear map sending a visual concept to its audio
// counterpart.
struct ConceptBank {
  Tensor concepts;   // K x d, unit-norm rows
  Tensor audio_map;  // d x d

  static ConceptBank make(const TaskConfig& cfg);
};

// Deterministic in (cfg, scene_index): the scene stream is forked from the
// dataset seed and the index, never shared across scenes.
SyntheticScene gen_scene(const TaskConfig& cfg, const ConceptBank& bank,
                         std::uint64_t scene_index);
SyntheticScene gen_scene(const TaskConfig& cfg, std::uint64_t scene_index);

// --- datasets on disk --------------------------------------------------------

struct SceneEntry {
  std::size_t id = 0;
  std::string split;  // "train" | "val" | "test"
  std::size_t answer = 0;
  std::string question_type;
  std::size_t target_word_index = 0;
  std::size_t match_audio_of = 0;  // scene id whose audio pairs for matching
  int match_label = 1;
  std::string stem;  // path prefix of the scene's tensor files
};

struct Manifest {
  TaskConfig cfg;
  double negative_fraction = 0.5;
  std::vector<SceneEntry> entries;
};

// Writes scenes/<stem>_{audio,visual,question,gt_spatial,gt_temporal}.tjt
// plus manifest.json under out_dir. Matching negatives pair the audio of
// another scene in the same split. Returns the manifest path.
std::string gen_dataset(const TaskConfig& cfg, std::size_t n_train,
                        std::size_t n_val, std::size_t n_test,
                        double negative_fraction, const std::string& out_dir);

// In-memory dataset view used by training and evaluation.
struct Dataset {
  TaskConfig cfg;
  std::vector<SyntheticScene> scenes;       // aligned scenes, by id
  std::vector<SceneEntry> entries;          // manifest rows, by id
  std::vector<std::size_t> train, val, test;  // ids per split

  static Dataset load(const std::string& dir);
  const std::vector<std::size_t>& split(const std::string& name) const;
  // Audio tensor paired with scene `id` for the matching task.
  const Tensor& match_audio(std::size_t id) const;
};

}  // namespace tjstg
