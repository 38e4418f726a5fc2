#include "tjstg/network.h"

namespace tjstg {

using namespace ad;

SceneInputs scene_inputs(ad::Graph& g, const SyntheticScene& scene) {
  SceneInputs in;
  in.audio = g.constant(scene.audio);
  const auto& vshape = scene.visual_map.shape();
  if (vshape.size() != 4)
    throw ShapeError("scene visual map must be T x h x w x d, got " +
                     scene.visual_map.shape_str());
  const std::size_t T = vshape[0], hw = vshape[1] * vshape[2], d = vshape[3];
  in.regions.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor seg({hw, d});
    const double* src = scene.visual_map.data() + t * hw * d;
    std::copy(src, src + hw * d, seg.data());
    in.regions.push_back(g.constant(std::move(seg)));
  }
  return in;
}

namespace {

// Projected audio rows (the learnable linear layer in front of everything).
Var project_audio(const Bound& p, Var audio) {
  return linear(audio, p.at("audio_proj.W"), p.at("audio_proj.b"));
}

// TSG over all segments; returns fused rows (T x d) and the per-segment
// grounding detail.
std::vector<SpatialGrounding> ground_all(ad::Graph& g, const Bound& p,
                                         const ModelConfig& cfg,
                                         const SceneInputs& in, Var audio_rows,
                                         Var target, Var* fused_rows) {
  const std::size_t T = in.regions.size();
  std::vector<SpatialGrounding> spatial;
  spatial.reserve(T);
  std::vector<Var> fused;
  fused.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Var f_a_t = gather_rows(audio_rows, {t});
    spatial.push_back(ground_segment(g, p, cfg, f_a_t, in.regions[t], target));
    fused.push_back(spatial.back().fused);
  }
  *fused_rows = concat_rows(std::span<const Var>(fused.data(), fused.size()));
  return spatial;
}

}  // namespace

ModelOutputs run_model(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                       const SyntheticScene& scene) {
  cfg.validate();
  ModelOutputs out;
  out.question = encode_question(g, p, scene.question_words);

  SceneInputs in = scene_inputs(g, scene);
  out.audio_rows = project_audio(p, in.audio);
  out.spatial = ground_all(g, p, cfg, in, out.audio_rows, out.question.target,
                           &out.visual_rows);

  const std::size_t T = in.regions.size();
  Var v_enc = encode_sequence(g, out.visual_rows, lstm_params(p, "v_lstm")).outputs;
  Var a_enc = encode_sequence(g, out.audio_rows, lstm_params(p, "a_lstm")).outputs;
  Var f_av = interleave(v_enc, a_enc, cfg.order);
  out.temporal = temporal_attention(g, p, out.question.sentence, f_av, cfg.heads);
  out.modal = extract_modal_weights(out.temporal.weights, cfg.order, T);

  Var e = fuse_answer(out.temporal.grounded, out.question.sentence);
  out.probs = predict(p, e);
  return out;
}

MatchingForward matching_forward(ad::Graph& g, const Bound& p,
                                 const ModelConfig& cfg,
                                 const SyntheticScene& scene,
                                 const Tensor& match_audio, int match_label) {
  cfg.validate();
  Var target;
  if (cfg.target_aware)
    target = encode_question(g, p, scene.question_words).target;
  SceneInputs in = scene_inputs(g, scene);
  Var audio_rows = project_audio(p, g.constant(match_audio));
  Var fused_rows;
  ground_all(g, p, cfg, in, audio_rows, target, &fused_rows);
  MatchingForward fwd;
  fwd.scores = matching_scores(p, fused_rows, audio_rows);
  fwd.loss = matching_bce(std::span<const Var>(fwd.scores.data(), fwd.scores.size()),
                          match_label);
  return fwd;
}

ad::Var stage1_loss(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                    const SyntheticScene& scene, const Tensor& match_audio,
                    int match_label) {
  return matching_forward(g, p, cfg, scene, match_audio, match_label).loss;
}

SceneLosses scene_losses(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                         const SyntheticScene& scene, const Tensor& match_audio,
                         int match_label) {
  SceneLosses losses;
  losses.out = run_model(g, p, cfg, scene);
  losses.qa = qa_loss(losses.out.probs, scene.answer);
  losses.csl = csl_loss(losses.out.modal);

  if (&match_audio == &scene.audio) {
    // Aligned pair: the QA branch already computed both feature stacks.
    losses.matching = matching_loss(g, p, losses.out.visual_rows,
                                    losses.out.audio_rows, match_label);
  } else {
    SceneInputs in = scene_inputs(g, scene);
    Var audio_rows = project_audio(p, g.constant(match_audio));
    Var fused_rows;
    ground_all(g, p, cfg, in, audio_rows, losses.out.question.target, &fused_rows);
    losses.matching = matching_loss(g, p, fused_rows, audio_rows, match_label);
  }
  losses.total = total_loss(losses.qa, losses.csl, losses.matching, cfg);
  return losses;
}

double matching_confidence(const ParamSet& params, const ModelConfig& cfg,
                           const SyntheticScene& scene,
                           const Tensor& match_audio) {
  ad::Graph g;
  Bound p = params.bind(g);
  MatchingForward fwd = matching_forward(g, p, cfg, scene, match_audio, 1);
  double mean = 0.0;
  for (const Var& s : fwd.scores) mean += g.value(s).item();
  return mean / static_cast<double>(fwd.scores.size());
}

double spatial_hit_rate(const ParamSet& params, const ModelConfig& cfg,
                        const std::vector<SyntheticScene>& scenes) {
  std::size_t active = 0, hits = 0;
  for (const SyntheticScene& scene : scenes) {
    ad::Graph g;
    Bound p = params.bind(g);
    ModelOutputs out = run_model(g, p, cfg, scene);
    const std::size_t T = out.spatial.size();
    const std::size_t hw = scene.gt_spatial.size() / T;
    for (std::size_t t = 0; t < T; ++t) {
      if (scene.gt_temporal[t] == 0.0) continue;
      ++active;
      const Tensor& weights = g.value(out.spatial[t].combined);
      std::size_t best = argmax_index(weights);
      if (scene.gt_spatial[t * hw + best] != 0.0) ++hits;
    }
  }
  if (active == 0) return 1.0;
  return static_cast<double>(hits) / static_cast<double>(active);
}

}  // namespace tjstg
