#pragma once

#include <vector>

#include "tjstg/head.h"
#include "tjstg/jtg.h"
#include "tjstg/synth.h"
#include "tjstg/tsg.h"

namespace tjstg {

// Scene tensors inserted as tape constants: raw audio (T x d), per-segment
// region maps (hw x d each), raw question words untouched (the question
// encoder takes the Tensor directly).
struct SceneInputs {
  ad::Var audio;                 // T x d
  std::vector<ad::Var> regions;  // T entries, hw x d
};

SceneInputs scene_inputs(ad::Graph& g, const SyntheticScene& scene);

struct ModelOutputs {
  QuestionEncoding question;
  std::vector<SpatialGrounding> spatial;  // per segment
  ad::Var visual_rows;  // T x d TSG-fused visual features
  ad::Var audio_rows;   // T x d projected audio features
  TemporalGrounding temporal;
  ModalWeights modal;
  ad::Var probs;  // 1 x C
};

// Full question-answering forward pass on an aligned scene.
ModelOutputs run_model(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                       const SyntheticScene& scene);

struct MatchingForward {
  ad::Var loss;
  std::vector<ad::Var> scores;  // per-segment sigmoid outputs
};

// TSG + matching branch against a (possibly swapped) audio tensor.
MatchingForward matching_forward(ad::Graph& g, const Bound& p,
                                 const ModelConfig& cfg,
                                 const SyntheticScene& scene,
                                 const Tensor& match_audio, int match_label);

ad::Var stage1_loss(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                    const SyntheticScene& scene, const Tensor& match_audio,
                    int match_label);

struct SceneLosses {
  ad::Var qa;
  ad::Var csl;
  ad::Var matching;
  ad::Var total;
  ModelOutputs out;
};

// All stage-II loss terms for one scene: QA and CSL on the aligned pair,
// matching on the paired audio.
SceneLosses scene_losses(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                         const SyntheticScene& scene, const Tensor& match_audio,
                         int match_label);

// Mean per-segment matching probability a trained model assigns to a pair.
double matching_confidence(const ParamSet& params, const ModelConfig& cfg,
                           const SyntheticScene& scene, const Tensor& match_audio);

// Fraction of active segments whose max combined-attention cell is the
// planted ground-truth cell.
double spatial_hit_rate(const ParamSet& params, const ModelConfig& cfg,
                        const std::vector<SyntheticScene>& scenes);

}  // namespace tjstg
