#include "tjstg/head.h"

#include "tjstg/jtg.h"

namespace tjstg {

using namespace ad;

Var fuse_answer(Var f_av_q, Var h_q) { return mul(f_av_q, h_q); }

Var predict(const Bound& p, Var e) {
  return softmax(linear(e, p.at("head.W"), p.at("head.b")));
}

std::size_t argmax_index(const Tensor& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

Var qa_loss(Var probs, std::size_t label) { return cross_entropy(probs, label); }

Var matching_score(const Bound& p, Var f_v_t, Var f_a_t) {
  Var z = mlp2(concat_cols({f_v_t, f_a_t}), p.at("match.W1"), p.at("match.b1"),
               p.at("match.W2"), p.at("match.b2"));
  return sigmoid(z);
}

std::vector<Var> matching_scores(const Bound& p, Var f_v_rows, Var f_a_rows) {
  ad::Graph* g = f_v_rows.graph;
  const Tensor& tv = g->value(f_v_rows);
  const Tensor& ta = g->value(f_a_rows);
  if (!tv.same_shape(ta))
    throw ShapeError("matching_scores: shape mismatch " + tv.shape_str() +
                     " vs " + ta.shape_str());
  std::vector<Var> scores;
  scores.reserve(tv.rows());
  for (std::size_t t = 0; t < tv.rows(); ++t)
    scores.push_back(matching_score(p, gather_rows(f_v_rows, {t}),
                                    gather_rows(f_a_rows, {t})));
  return scores;
}

Var matching_bce(std::span<const Var> scores, int match_label) {
  if (scores.empty()) throw ContractError("matching_bce: no segments");
  const double y = match_label ? 1.0 : 0.0;
  Var total;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    Var score = scores[t];
    // -(y log s + (1-y) log(1-s)), logs clamped like every probability here.
    Var bce = add(scale(log_clamped(score), -y),
                  scale(log_clamped(affine_scalar(score, -1.0, 1.0)), -(1.0 - y)));
    total = t == 0 ? bce : add(total, bce);
  }
  return scale(total, 1.0 / static_cast<double>(scores.size()));
}

Var matching_loss(ad::Graph& g, const Bound& p, Var f_v_rows, Var f_a_rows,
                  int match_label) {
  (void)g;
  const auto scores = matching_scores(p, f_v_rows, f_a_rows);
  return matching_bce(std::span<const Var>(scores.data(), scores.size()),
                      match_label);
}

Var total_loss(Var l_qa, Var l_csl, Var l_s, const ModelConfig& cfg) {
  Var loss = l_qa;
  if (cfg.csl_enabled) loss = add(loss, l_csl);
  return add(loss, scale(l_s, cfg.lambda_match));
}

}  // namespace tjstg
