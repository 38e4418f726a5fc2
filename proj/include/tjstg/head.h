#pragma once

#include "tjstg/model.h"

namespace tjstg {

// e = f_av^q (.) h_q, elementwise.
ad::Var fuse_answer(ad::Var f_av_q, ad::Var h_q);

// softmax(linear(e)) over the answer vocabulary.
ad::Var predict(const Bound& p, ad::Var e);

// argmax with ties resolved to the lowest index.
std::size_t argmax_index(const Tensor& probs);

// -log p[label], clamped.
ad::Var qa_loss(ad::Var probs, std::size_t label);

// sigmoid(MLP([f_v^t ; f_a^t])), 1x1 in (0,1).
ad::Var matching_score(const Bound& p, ad::Var f_v_t, ad::Var f_a_t);

// One score per segment row.
std::vector<ad::Var> matching_scores(const Bound& p, ad::Var f_v_rows,
                                     ad::Var f_a_rows);

// Mean binary cross-entropy of the scores against one pair-level label.
ad::Var matching_bce(std::span<const ad::Var> scores, int match_label);

// Binary cross-entropy of the per-segment matching scores against one
// pair-level label, averaged over segments.
ad::Var matching_loss(ad::Graph& g, const Bound& p, ad::Var f_v_rows,
                      ad::Var f_a_rows, int match_label);

// l_qa + l_csl + lambda * l_s; the csl term is dropped when disabled.
ad::Var total_loss(ad::Var l_qa, ad::Var l_csl, ad::Var l_s,
                   const ModelConfig& cfg);

}  // namespace tjstg
