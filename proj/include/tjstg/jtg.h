#pragma once

#include <utility>
#include <vector>

#include "tjstg/model.h"

namespace tjstg {

struct LstmParams {
  ad::Var wx;  // d x 4d, gate order [input | forget | cell | output]
  ad::Var wh;  // d x 4d
  ad::Var b;   // 1 x 4d
};

LstmParams lstm_params(const Bound& p, const std::string& prefix);

// Two-layer perceptron with a ReLU hidden layer.
ad::Var mlp2(ad::Var x, ad::Var w1, ad::Var b1, ad::Var w2, ad::Var b2);

struct SequenceEncoding {
  ad::Var outputs;     // L x d hidden states
  ad::Var last_state;  // 2 x d, rows [h_L; c_L]
};

// Single-layer unidirectional LSTM over the rows of x (L x d), zero initial
// state.
SequenceEncoding encode_sequence(ad::Graph& g, ad::Var x, const LstmParams& p);

// Row k of the interleaved sequence comes from this index into the stacked
// [visual; audio] block (visual rows first).
std::vector<std::size_t> interleave_permutation(InterleaveOrder order,
                                                std::size_t segments);

// Positions of each modality inside the interleaved sequence.
std::vector<std::size_t> visual_positions(InterleaveOrder order, std::size_t segments);
std::vector<std::size_t> audio_positions(InterleaveOrder order, std::size_t segments);

// f_av: 2T x d rows arranged per `order`.
ad::Var interleave(ad::Var f_v, ad::Var f_a, InterleaveOrder order);

struct TemporalGrounding {
  ad::Var attended;  // attention-weighted sum of f_av rows, 1 x d
  ad::Var grounded;  // attended + MLP(mean of rows), 1 x d
  ad::Var weights;   // w_av, 1 x 2T simplex (head-averaged when heads > 1)
};

// Softmax((h_q Wq)(f_av Wk)^T) attention over the interleaved rows; no value
// projection, raw rows are summed. With heads > 1 each head attends over its
// dim/heads column chunk and w_av is the head average.
TemporalGrounding temporal_attention(ad::Graph& g, const Bound& p, ad::Var h_q,
                                     ad::Var f_av, std::size_t heads = 1);

struct ModalWeights {
  ad::Var audio_raw;   // deinterleaved slots, sums to the audio share
  ad::Var visual_raw;
  ad::Var audio;       // renormalized to a simplex for the divergence
  ad::Var visual;
};

ModalWeights extract_modal_weights(ad::Var w_av, InterleaveOrder order,
                                   std::size_t segments);

// JS divergence between the renormalized per-modality weights.
ad::Var csl_loss(const ModalWeights& w);
inline ad::Var csl_loss(ad::Var w_a, ad::Var w_v) {
  return ad::js_divergence(w_a, w_v);
}

// Question-conditioned simplex weights over the T segments of each modality:
// softmax(h_q f^T / sqrt(d)). The conceptual two-stream form of the CSL.
std::pair<ad::Var, ad::Var> question_aware_weights(ad::Var h_q, ad::Var f_a,
                                                   ad::Var f_v);

}  // namespace tjstg
