#include "tjstg/jtg.h"

#include <cmath>

namespace tjstg {

using namespace ad;

LstmParams lstm_params(const Bound& p, const std::string& prefix) {
  return {p.at(prefix + ".Wx"), p.at(prefix + ".Wh"), p.at(prefix + ".b")};
}

Var mlp2(Var x, Var w1, Var b1, Var w2, Var b2) {
  return linear(relu(linear(x, w1, b1)), w2, b2);
}

SequenceEncoding encode_sequence(ad::Graph& g, Var x, const LstmParams& p) {
  const Tensor& tx = x.graph->value(x);
  const std::size_t steps = tx.rows();
  const std::size_t d = tx.cols();
  if (x.graph->value(p.wx).rows() != d)
    throw ShapeError("encode_sequence: input width " + tx.shape_str() +
                     " does not match LSTM weights " +
                     x.graph->value(p.wx).shape_str());

  Var h = g.constant(Tensor({1, d}));
  Var c = g.constant(Tensor({1, d}));
  std::vector<Var> hidden;
  hidden.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var x_t = gather_rows(x, {t});
    Var gates = add_rowvec(add(matmul(x_t, p.wx), matmul(h, p.wh)), p.b);
    Var i_g = sigmoid(slice_cols(gates, 0, d));
    Var f_g = sigmoid(slice_cols(gates, d, d));
    Var g_g = ad::tanh(slice_cols(gates, 2 * d, d));
    Var o_g = sigmoid(slice_cols(gates, 3 * d, d));
    c = add(mul(f_g, c), mul(i_g, g_g));
    h = mul(o_g, ad::tanh(c));
    hidden.push_back(h);
  }
  SequenceEncoding enc;
  enc.outputs = concat_rows(std::span<const Var>(hidden.data(), hidden.size()));
  enc.last_state = concat_rows({h, c});
  return enc;
}

std::vector<std::size_t> interleave_permutation(InterleaveOrder order,
                                                std::size_t segments) {
  std::vector<std::size_t> perm(2 * segments);
  for (std::size_t t = 0; t < segments; ++t) {
    switch (order) {
      case InterleaveOrder::kVA:
        perm[2 * t] = t;
        perm[2 * t + 1] = segments + t;
        break;
      case InterleaveOrder::kAV:
        perm[2 * t] = segments + t;
        perm[2 * t + 1] = t;
        break;
      case InterleaveOrder::kCatVA:
        perm[t] = t;
        perm[segments + t] = segments + t;
        break;
      case InterleaveOrder::kCatAV:
        perm[t] = segments + t;
        perm[segments + t] = t;
        break;
    }
  }
  return perm;
}

std::vector<std::size_t> visual_positions(InterleaveOrder order,
                                          std::size_t segments) {
  const auto perm = interleave_permutation(order, segments);
  std::vector<std::size_t> pos(segments);
  for (std::size_t k = 0; k < perm.size(); ++k)
    if (perm[k] < segments) pos[perm[k]] = k;
  return pos;
}

std::vector<std::size_t> audio_positions(InterleaveOrder order,
                                         std::size_t segments) {
  const auto perm = interleave_permutation(order, segments);
  std::vector<std::size_t> pos(segments);
  for (std::size_t k = 0; k < perm.size(); ++k)
    if (perm[k] >= segments) pos[perm[k] - segments] = k;
  return pos;
}

Var interleave(Var f_v, Var f_a, InterleaveOrder order) {
  Graph* g = f_v.graph;
  const Tensor& tv = g->value(f_v);
  const Tensor& ta = g->value(f_a);
  if (tv.rank() != 2 || !tv.same_shape(ta))
    throw ShapeError("interleave: shape mismatch " + tv.shape_str() + " vs " +
                     ta.shape_str());
  Var stacked = concat_rows({f_v, f_a});
  return gather_rows(stacked, interleave_permutation(order, tv.rows()));
}

TemporalGrounding temporal_attention(ad::Graph& g, const Bound& p, Var h_q,
                                     Var f_av, std::size_t heads) {
  const Tensor& seq = g.value(f_av);
  const std::size_t d = seq.cols();
  if (heads < 1 || d % heads != 0)
    throw ContractError("temporal_attention: heads must divide dim");

  Var q = matmul(h_q, p.at("jtg.Wq"));   // 1 x d
  Var k = matmul(f_av, p.at("jtg.Wk"));  // 2T x d
  const std::size_t dh = d / heads;

  std::vector<Var> head_weights;
  std::vector<Var> head_outputs;
  head_weights.reserve(heads);
  head_outputs.reserve(heads);
  for (std::size_t hidx = 0; hidx < heads; ++hidx) {
    Var q_h = heads == 1 ? q : slice_cols(q, hidx * dh, dh);
    Var k_h = heads == 1 ? k : slice_cols(k, hidx * dh, dh);
    Var v_h = heads == 1 ? f_av : slice_cols(f_av, hidx * dh, dh);
    Var w_h = softmax(matmul(q_h, transpose(k_h)));  // 1 x 2T
    head_weights.push_back(w_h);
    head_outputs.push_back(matmul(w_h, v_h));
  }

  TemporalGrounding tg;
  tg.attended =
      heads == 1
          ? head_outputs[0]
          : concat_cols(std::span<const Var>(head_outputs.data(), heads));
  if (heads == 1) {
    tg.weights = head_weights[0];
  } else {
    Var sum = head_weights[0];
    for (std::size_t hidx = 1; hidx < heads; ++hidx)
      sum = add(sum, head_weights[hidx]);
    tg.weights = scale(sum, 1.0 / static_cast<double>(heads));
  }
  Var residual = mlp2(mean_rows(f_av), p.at("jtg.mlp.W1"), p.at("jtg.mlp.b1"),
                      p.at("jtg.mlp.W2"), p.at("jtg.mlp.b2"));
  tg.grounded = add(tg.attended, residual);
  return tg;
}

ModalWeights extract_modal_weights(Var w_av, InterleaveOrder order,
                                   std::size_t segments) {
  const Tensor& w = w_av.graph->value(w_av);
  if (w.rank() != 2 || w.rows() != 1 || w.cols() != 2 * segments)
    throw ShapeError("extract_modal_weights: expected 1x" +
                     std::to_string(2 * segments) + ", got " + w.shape_str());
  ModalWeights mw;
  mw.audio_raw = gather_cols(w_av, audio_positions(order, segments));
  mw.visual_raw = gather_cols(w_av, visual_positions(order, segments));
  mw.audio = normalize_sum(mw.audio_raw);
  mw.visual = normalize_sum(mw.visual_raw);
  return mw;
}

Var csl_loss(const ModalWeights& w) { return js_divergence(w.audio, w.visual); }

std::pair<Var, Var> question_aware_weights(Var h_q, Var f_a, Var f_v) {
  const std::size_t d = h_q.graph->value(h_q).cols();
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  Var a_q = softmax(scale(matmul(h_q, transpose(f_a)), inv));
  Var v_q = softmax(scale(matmul(h_q, transpose(f_v)), inv));
  return {a_q, v_q};
}

}  // namespace tjstg
