#pragma once

#include <utility>

#include "tjstg/model.h"

namespace tjstg {

// Encoded question: LSTM word features, MLP-transformed sentence feature,
// contribution scores, and the selected target word.
struct QuestionEncoding {
  ad::Var words;     // N x d
  ad::Var sentence;  // 1 x d
  ad::Var scores;    // 1 x N simplex
  std::size_t target_index = 0;
  ad::Var target;    // 1 x d, row target_index of words
};

// softmax(h_q f_q^T / sqrt(d)); h_q: 1xd, f_q: Nxd -> 1xN.
ad::Var question_contribution_scores(ad::Var h_q, ad::Var f_q);

// argmax of the scores (ties -> lowest index) and the matching word row.
std::pair<std::size_t, ad::Var> select_target(ad::Var scores, ad::Var f_q);

// Full question pathway from raw word features using q_lstm / q_mlp params.
QuestionEncoding encode_question(ad::Graph& g, const Bound& p,
                                 const Tensor& question_words);

// softmax(probe . regions^T) over regions; probe: 1xd, regions: hw x d.
// Deliberately unscaled, unlike the word-score attention.
ad::Var spatial_attention(ad::Var probe, ad::Var regions);

// Entries below tau are zeroed, entries >= tau kept verbatim; the indicator
// contributes no gradient.
ad::Var threshold_mask(ad::Var s_q, double tau);

// softmax(s_a (.) s_q_hat). With renormalize, regions dropped by the
// threshold are masked out of the softmax instead of keeping exp(0) weight;
// if the threshold dropped everything the full map is kept.
ad::Var combined_spatial_weights(ad::Var s_a, ad::Var s_q_hat, bool renormalize);

// Weight-combined region feature f_v,i: 1xd.
ad::Var interesting_visual_feature(ad::Var regions, ad::Var s_a, ad::Var s_q_hat,
                                   bool renormalize = false);

// FC(tanh[f_v,g ; f_v,i]) -> 1xd.
ad::Var fuse_visual(ad::Var f_v_global, ad::Var f_v_interesting, ad::Var w,
                    ad::Var b);

struct SpatialGrounding {
  ad::Var audio_attention;   // s_a, 1 x hw
  ad::Var target_attention;  // thresholded s_q; invalid when target-aware off
  ad::Var combined;          // final region weights, 1 x hw simplex
  ad::Var interesting;       // f_v,i, 1 x d
  ad::Var fused;             // f_v, 1 x d
};

// One segment of the TSG pipeline. With cfg.target_aware off the combined
// weights reduce to softmax(s_a) and `target` is ignored (may be invalid).
SpatialGrounding ground_segment(ad::Graph& g, const Bound& p,
                                const ModelConfig& cfg, ad::Var audio_feat,
                                ad::Var regions, ad::Var target);

}  // namespace tjstg
