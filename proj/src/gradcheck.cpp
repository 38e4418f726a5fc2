#include "tjstg/gradcheck.h"

namespace tjstg {

using namespace ad;

Var faulty_identity(Var x) {
  Graph* g = x.graph;
  Tensor out = g->value(x);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v]() {
    const Tensor& G = g->grad_ref(v.id);
    Tensor dx(G.shape());
    for (std::size_t i = 0; i < G.size(); ++i) dx[i] = -G[i];
    g->accumulate(x.id, dx);
  });
  return v;
}

std::vector<GradCheckCase> gradcheck_tiny_model(double eps, std::uint64_t seed,
                                                bool inject_fault) {
  TaskConfig task;
  task.segments = 3;
  task.words = 4;
  task.grid_h = 2;
  task.grid_w = 2;
  task.dim = 8;
  task.answers = 3;
  task.concepts = 4;
  task.noise_sigma = 0.1;
  task.seed = seed;

  ModelConfig mcfg;
  mcfg.dim = task.dim;
  mcfg.answers = task.answers;

  const ConceptBank bank = ConceptBank::make(task);
  const SyntheticScene scene = gen_scene(task, bank, 0);
  const SyntheticScene other = gen_scene(task, bank, 1);
  const ParamSet params = ParamSet::init(mcfg, seed);

  enum Which { kQa, kCsl, kMatch, kTotal };
  auto loss_fn = [&](Which which) {
    return [&, which](Graph& g, const Bound& bound) -> Var {
      // The matching branch pairs the other scene's audio (a negative).
      SceneLosses losses = scene_losses(g, bound, mcfg, scene, other.audio, 0);
      Var loss = which == kQa    ? losses.qa
                 : which == kCsl ? losses.csl
                 : which == kMatch ? losses.matching
                                   : losses.total;
      return inject_fault ? faulty_identity(loss) : loss;
    };
  };

  std::vector<GradCheckCase> cases;
  cases.push_back({"L_qa", grad_check(loss_fn(kQa), params.values, eps)});
  cases.push_back({"L_csl", grad_check(loss_fn(kCsl), params.values, eps)});
  cases.push_back({"L_s", grad_check(loss_fn(kMatch), params.values, eps)});
  cases.push_back({"L", grad_check(loss_fn(kTotal), params.values, eps)});
  return cases;
}

}  // namespace tjstg
