#include "tjstg/tsg.h"

#include <cmath>

#include "tjstg/jtg.h"

namespace tjstg {

using namespace ad;

Var question_contribution_scores(Var h_q, Var f_q) {
  const std::size_t d = h_q.graph->value(h_q).cols();
  Var logits = scale(matmul(h_q, transpose(f_q)), 1.0 / std::sqrt(static_cast<double>(d)));
  return softmax(logits);
}

std::pair<std::size_t, Var> select_target(Var scores, Var f_q) {
  const Tensor& s = scores.graph->value(scores);
  std::size_t idx = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[idx]) idx = i;
  return {idx, gather_rows(f_q, {idx})};
}

QuestionEncoding encode_question(ad::Graph& g, const Bound& p,
                                 const Tensor& question_words) {
  Var words_in = g.constant(question_words);
  SequenceEncoding enc = encode_sequence(g, words_in, lstm_params(p, "q_lstm"));
  Var state = reshape(enc.last_state, {1, 2 * question_words.cols()});
  Var h_q = mlp2(state, p.at("q_mlp.W1"), p.at("q_mlp.b1"), p.at("q_mlp.W2"),
                 p.at("q_mlp.b2"));
  QuestionEncoding q;
  q.words = enc.outputs;
  q.sentence = h_q;
  q.scores = question_contribution_scores(h_q, q.words);
  auto [idx, target] = select_target(q.scores, q.words);
  q.target_index = idx;
  q.target = target;
  return q;
}

Var spatial_attention(Var probe, Var regions) {
  return softmax(matmul(probe, transpose(regions)));
}

Var threshold_mask(Var s_q, double tau) { return threshold_keep(s_q, tau); }

Var combined_spatial_weights(Var s_a, Var s_q_hat, bool renormalize) {
  Var gate = mul(s_a, s_q_hat);
  if (!renormalize) return softmax(gate);
  const Tensor& kept = s_q_hat.graph->value(s_q_hat);
  Tensor mask(kept.shape());
  bool any = false;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    mask[i] = kept[i] > 0.0 ? 1.0 : 0.0;
    any = any || kept[i] > 0.0;
  }
  if (!any) return softmax(gate);
  return masked_softmax(gate, std::move(mask));
}

Var interesting_visual_feature(Var regions, Var s_a, Var s_q_hat,
                               bool renormalize) {
  return matmul(combined_spatial_weights(s_a, s_q_hat, renormalize), regions);
}

Var fuse_visual(Var f_v_global, Var f_v_interesting, Var w, Var b) {
  return linear(ad::tanh(concat_cols({f_v_global, f_v_interesting})), w, b);
}

SpatialGrounding ground_segment(ad::Graph& g, const Bound& p,
                                const ModelConfig& cfg, Var audio_feat,
                                Var regions, Var target) {
  SpatialGrounding sg;
  sg.audio_attention = spatial_attention(audio_feat, regions);
  if (cfg.target_aware) {
    Var s_q = spatial_attention(target, regions);
    sg.target_attention = threshold_mask(s_q, cfg.tau);
    sg.combined = combined_spatial_weights(sg.audio_attention, sg.target_attention,
                                           cfg.renormalize_spatial);
  } else {
    sg.combined = softmax(sg.audio_attention);
  }
  sg.interesting = matmul(sg.combined, regions);
  Var f_v_global = mean_rows(regions);
  sg.fused = fuse_visual(f_v_global, sg.interesting, p.at("tsg.fuse.W"),
                         p.at("tsg.fuse.b"));
  return sg;
}

}  // namespace tjstg
