#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tjstg/gradcheck.h"
#include "tjstg/rng.h"
#include "tjstg/train.h"

using namespace tjstg;
namespace ad = tjstg::ad;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.next_gaussian();
  return t;
}

// In-memory dataset; every scene is an aligned positive unless swapped below.
Dataset make_dataset(TaskConfig cfg, std::size_t n_train, std::size_t n_val,
                     std::size_t n_test, double neg_fraction = 0.5) {
  Dataset ds;
  ds.cfg = cfg;
  const ConceptBank bank = ConceptBank::make(cfg);
  const std::size_t total = n_train + n_val + n_test;
  Rng pair_rng = Rng(cfg.seed).fork(1);
  for (std::size_t id = 0; id < total; ++id) {
    ds.scenes.push_back(gen_scene(cfg, bank, id));
    SceneEntry e;
    e.id = id;
    e.split = id < n_train ? "train" : (id < n_train + n_val ? "val" : "test");
    e.answer = ds.scenes.back().answer;
    e.question_type = to_string(cfg.task);
    e.target_word_index = ds.scenes.back().target_word_index;
    e.match_audio_of = id;
    e.match_label = 1;
    ds.entries.push_back(e);
    if (e.split == "train")
      ds.train.push_back(id);
    else if (e.split == "val")
      ds.val.push_back(id);
    else
      ds.test.push_back(id);
  }
  // Negatives pair the previous scene of the same split.
  auto assign = [&](const std::vector<std::size_t>& ids) {
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (ids.size() > 1 && pair_rng.next_double() < neg_fraction) {
        ds.entries[ids[k]].match_audio_of = ids[(k + ids.size() - 1) % ids.size()];
        ds.entries[ids[k]].match_label = 0;
      }
  };
  assign(ds.train);
  assign(ds.val);
  assign(ds.test);
  return ds;
}

}  // namespace

TEST_CASE("fuse_answer is the elementwise product") {
  ad::Graph g;
  ad::Var f = g.constant(Tensor::row({0.5, -2.0, 3.0}));
  CHECK(g.value(fuse_answer(f, g.constant(Tensor::full({1, 3}, 1.0)))) ==
        g.value(f));
  CHECK(g.value(fuse_answer(f, g.constant(Tensor({1, 3})))) == Tensor({1, 3}));

  Rng rng(2);
  Tensor a = random_tensor(rng, {1, 5});
  Tensor b = random_tensor(rng, {1, 5});
  const Tensor& e = g.value(fuse_answer(g.constant(a), g.constant(b)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(e[i] == a[i] * b[i]);
}

TEST_CASE("predict with zero weights is uniform; argmax ties go low") {
  ModelConfig cfg;
  cfg.dim = 6;
  cfg.answers = 4;
  ad::Graph g;
  Bound p;
  p.emplace("head.W", g.constant(Tensor({6, 4})));
  p.emplace("head.b", g.constant(Tensor({1, 4})));
  Rng rng(3);
  ad::Var probs = predict(p, g.constant(random_tensor(rng, {1, 6})));
  for (std::size_t c = 0; c < 4; ++c)
    CHECK(g.value(probs)[c] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(argmax_index(g.value(probs)) == 0);
  CHECK(argmax_index(Tensor::row({0.1, 0.5, 0.4})) == 1);
  CHECK(argmax_index(Tensor::row({0.5, 0.5})) == 0);
}

TEST_CASE("predict peaks where the logits are forced") {
  ad::Graph g;
  Bound p;
  Tensor w({2, 3});
  w.at(0, 1) = 30.0;  // e[0] drives class 1
  p.emplace("head.W", g.constant(w));
  p.emplace("head.b", g.constant(Tensor({1, 3})));
  ad::Var probs = predict(p, g.constant(Tensor::row({1.0, 0.0})));
  CHECK(argmax_index(g.value(probs)) == 1);
  CHECK(g.value(probs)[1] > 0.999);
}

TEST_CASE("qa_loss pinned values and errors") {
  ad::Graph g;
  CHECK(g.value(qa_loss(g.constant(Tensor::row({0.0, 1.0, 0.0})), 1)).item() ==
        0.0);
  CHECK(g.value(qa_loss(g.constant(Tensor::row({0.25, 0.25, 0.25, 0.25})), 2))
            .item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Rng rng(4);
  ad::Var probs = ad::softmax(g.constant(random_tensor(rng, {1, 5})));
  CHECK(g.value(qa_loss(probs, 3)).item() ==
        doctest::Approx(-std::log(g.value(probs)[3])).epsilon(1e-12));
  CHECK(g.value(qa_loss(probs, 3)).item() >= 0.0);
  CHECK_THROWS_AS(qa_loss(probs, 5), ContractError);
}

TEST_CASE("gradient of cross-entropy through predict") {
  Rng rng(5);
  std::map<std::string, Tensor> params{
      {"head.W", random_tensor(rng, {6, 3}, 0.5)},
      {"head.b", random_tensor(rng, {1, 3}, 0.2)},
      {"e", random_tensor(rng, {1, 6})}};
  auto fn = [](ad::Graph& g, const std::map<std::string, ad::Var>& p) {
    Bound b(p.begin(), p.end());
    return qa_loss(predict(b, p.at("e")), 2);
  };
  CHECK(ad::grad_check(fn, params).max_rel_err < 1e-4);
}

TEST_CASE("matching head with zero parameters sits at 0.5 and ln 2 loss") {
  const std::size_t d = 5, T = 4;
  ad::Graph g;
  Bound p;
  p.emplace("match.W1", g.constant(Tensor({2 * d, d})));
  p.emplace("match.b1", g.constant(Tensor({1, d})));
  p.emplace("match.W2", g.constant(Tensor({d, 1})));
  p.emplace("match.b2", g.constant(Tensor({1, 1})));
  Rng rng(6);
  ad::Var f_v = g.constant(random_tensor(rng, {T, d}));
  ad::Var f_a = g.constant(random_tensor(rng, {T, d}));
  const auto scores = matching_scores(p, f_v, f_a);
  for (const ad::Var& s : scores) CHECK(g.value(s).item() == 0.5);
  for (int label : {0, 1})
    CHECK(g.value(matching_loss(g, p, f_v, f_a, label)).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Sigmoid outputs stay strictly inside (0,1) for moderate inputs.
  Rng r2(7);
  Bound p2;
  p2.emplace("match.W1", g.constant(random_tensor(r2, {2 * d, d}, 0.8)));
  p2.emplace("match.b1", g.constant(random_tensor(r2, {1, d}, 0.3)));
  p2.emplace("match.W2", g.constant(random_tensor(r2, {d, 1}, 0.8)));
  p2.emplace("match.b2", g.constant(random_tensor(r2, {1, 1}, 0.3)));
  for (const ad::Var& s : matching_scores(p2, f_v, f_a)) {
    CHECK(g.value(s).item() > 0.0);
    CHECK(g.value(s).item() < 1.0);
  }
}

TEST_CASE("total_loss composition and the lambda default") {
  ModelConfig cfg;
  CHECK(cfg.lambda_match == 0.5);
  ad::Graph g;
  ad::Var qa = g.constant(Tensor::scalar(1.0));
  ad::Var csl = g.constant(Tensor::scalar(0.2));
  ad::Var ls = g.constant(Tensor::scalar(0.4));
  CHECK(g.value(total_loss(qa, csl, ls, cfg)).item() ==
        doctest::Approx(1.4).epsilon(1e-12));
  ModelConfig no_csl = cfg;
  no_csl.csl_enabled = false;
  CHECK(g.value(total_loss(qa, csl, ls, no_csl)).item() ==
        doctest::Approx(1.2).epsilon(1e-12));
  // Monotone in each component.
  ad::Var qa2 = g.constant(Tensor::scalar(1.5));
  CHECK(g.value(total_loss(qa2, csl, ls, cfg)).item() >
        g.value(total_loss(qa, csl, ls, cfg)).item());
}

TEST_CASE("lr schedule follows the step decay") {
  TrainConfig cfg;
  CHECK(lr_schedule(0, cfg) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_schedule(9, cfg) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_schedule(10, cfg) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_schedule(29, cfg) == doctest::Approx(2e-6).epsilon(1e-12));
  for (std::size_t e = 1; e < 40; ++e)
    CHECK(lr_schedule(e, cfg) <= lr_schedule(e - 1, cfg));
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  ModelConfig mcfg;
  mcfg.dim = 4;
  mcfg.answers = 2;
  ParamSet params = ParamSet::init(mcfg, 1);
  const ParamSet before = params;
  AdamState state;
  std::map<std::string, Tensor> grads;
  for (const auto& [name, t] : params.values) grads.emplace(name, Tensor::zeros(t.shape()));
  adam_step(params, grads, state, 0.1);
  for (const auto& [name, t] : params.values) CHECK(t == before.at(name));
}

TEST_CASE("adam first step on a unit gradient moves by almost exactly lr") {
  ParamSet params;
  params.values.emplace("x", Tensor::scalar(1.0));
  AdamState state;
  std::map<std::string, Tensor> grads{{"x", Tensor::scalar(1.0)}};
  adam_step(params, grads, state, 0.1);
  // Bias correction makes mhat = vhat = 1, so the update is lr/(1+eps).
  CHECK(std::abs(params.at("x").item() - 0.9) < 1e-8);
}

TEST_CASE("two adam steps match an independent straight-line implementation") {
  Rng rng(9);
  ParamSet params;
  params.values.emplace("w", random_tensor(rng, {2, 3}));
  const Tensor g1 = random_tensor(rng, {2, 3});
  const Tensor g2 = random_tensor(rng, {2, 3});
  AdamState state;
  adam_step(params, {{"w", g1}}, state, 0.05);
  adam_step(params, {{"w", g2}}, state, 0.05);

  // Reference: scalar-by-scalar textbook update, written independently.
  Rng rng2(9);
  Tensor w = random_tensor(rng2, {2, 3});
  Tensor rg1 = random_tensor(rng2, {2, 3});
  Tensor rg2 = random_tensor(rng2, {2, 3});
  for (std::size_t i = 0; i < w.size(); ++i) {
    double m = 0.0, v = 0.0;
    const double grads[2] = {rg1[i], rg2[i]};
    for (int step = 1; step <= 2; ++step) {
      const double gi = grads[step - 1];
      m = 0.9 * m + 0.1 * gi;
      v = 0.999 * v + 0.001 * gi * gi;
      const double mhat = m / (1.0 - std::pow(0.9, step));
      const double vhat = v / (1.0 - std::pow(0.999, step));
      w[i] -= 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    CHECK(std::abs(params.at("w")[i] - w[i]) < 1e-12);
  }
}

TEST_CASE("adam validates gradient presence and shape") {
  ParamSet params;
  params.values.emplace("x", Tensor::scalar(1.0));
  AdamState state;
  CHECK_THROWS_AS(adam_step(params, {}, state, 0.1), ContractError);
  std::map<std::string, Tensor> bad{{"x", Tensor({2, 2})}};
  CHECK_THROWS_AS(adam_step(params, bad, state, 0.1), ShapeError);
}

TEST_CASE("evaluate measures exactly the argmax-correct fraction") {
  TaskConfig task;
  task.seed = 70;
  Dataset ds = make_dataset(task, 1, 1, 1000, 0.0);
  ModelConfig mcfg;

  // Uniform model: zero answer head makes every prediction class 0.
  ParamSet params = ParamSet::init(mcfg, 3);
  params.values.at("head.W") = Tensor({mcfg.dim, mcfg.answers});
  params.values.at("head.b") = Tensor({1, mcfg.answers});
  const EvalReport report = evaluate(ds, "test", params, mcfg);
  double zero_fraction = 0.0;
  for (const std::size_t id : ds.test)
    if (ds.scenes[id].answer == 0) zero_fraction += 1.0;
  zero_fraction /= static_cast<double>(ds.test.size());
  CHECK(report.accuracy == doctest::Approx(zero_fraction).epsilon(1e-12));
  // Chance level for the uniform-answer generator, within 3 sigma.
  CHECK(std::abs(report.accuracy - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / 1000.0));
  CHECK(report.count == 1000);
  CHECK(report.per_type.at("counting") == report.accuracy);

  // Oracle check: relabel every scene with the model's own prediction.
  Dataset oracle = make_dataset(task, 1, 1, 30, 0.0);
  ParamSet rparams = ParamSet::init(mcfg, 4);
  for (const std::size_t id : oracle.test) {
    ad::Graph g;
    Bound b = rparams.bind(g);
    const ModelOutputs out = run_model(g, b, mcfg, oracle.scenes[id]);
    oracle.scenes[id].answer = argmax_index(g.value(out.probs));
    oracle.entries[id].answer = oracle.scenes[id].answer;
  }
  CHECK(evaluate(oracle, "test", rparams, mcfg).accuracy == 1.0);

  CHECK_THROWS_AS(evaluate(ds, "bogus", params, mcfg), ContractError);
}

TEST_CASE("stage-I training learns noise-free matching") {
  TaskConfig task;
  task.noise_sigma = 0.0;
  task.seed = 90;
  const Dataset ds = make_dataset(task, 192, 24, 48, 0.5);
  ModelConfig mcfg;
  TrainConfig tcfg;
  tcfg.seed = 12;
  tcfg.batch_size = 32;
  tcfg.stage1_epochs = 10;

  const Stage1Result result = train_stage1(ds, mcfg, tcfg);
  REQUIRE(result.history.size() == 10);
  // Epoch-mean loss decreases monotonically on separable data.
  for (std::size_t e = 1; e < result.history.size(); ++e)
    CHECK(result.history[e].loss_s < result.history[e - 1].loss_s);

  // Pair-level accuracy and positive-pair confidence on held-out scenes.
  std::size_t correct = 0;
  double positive_mean = 0.0;
  std::size_t positives = 0;
  for (const std::size_t id : ds.test) {
    const double conf =
        matching_confidence(result.params, mcfg, ds.scenes[id], ds.match_audio(id));
    if ((conf > 0.5) == (ds.entries[id].match_label != 0)) ++correct;
    if (ds.entries[id].match_label != 0) {
      positive_mean += conf;
      ++positives;
    }
  }
  CHECK(static_cast<double>(correct) / ds.test.size() > 0.95);
  REQUIRE(positives > 0);
  CHECK(positive_mean / positives > 0.9);

  // Determinism: the same seed reproduces the final loss exactly.
  const Stage1Result again = train_stage1(ds, mcfg, tcfg);
  CHECK(again.history.back().loss_s == result.history.back().loss_s);
  CHECK(again.params.at("match.W1") == result.params.at("match.W1"));
}

TEST_CASE("stage-II training runs deterministically and improves the loss") {
  TaskConfig task;
  task.noise_sigma = 0.0;
  task.seed = 91;
  const Dataset ds = make_dataset(task, 128, 16, 16, 0.5);
  ModelConfig mcfg;
  TrainConfig tcfg;
  tcfg.seed = 5;
  tcfg.batch_size = 32;
  tcfg.stage1_epochs = 2;
  tcfg.epochs = 6;

  const Stage1Result s1 = train_stage1(ds, mcfg, tcfg);
  const Stage2Result s2 = train_stage2(ds, mcfg, tcfg, s1.params);
  REQUIRE(s2.history.size() == 6);
  for (const Stage2Epoch& row : s2.history) {
    CHECK(std::isfinite(row.loss_qa));
    CHECK(std::isfinite(row.loss_csl));
    CHECK(std::isfinite(row.loss_s));
  }
  const auto total = [&](const Stage2Epoch& r) {
    return r.loss_qa + r.loss_csl + mcfg.lambda_match * r.loss_s;
  };
  CHECK(total(s2.history.back()) < total(s2.history.front()));

  const Stage2Result rerun = train_stage2(ds, mcfg, tcfg, s1.params);
  for (std::size_t e = 0; e < s2.history.size(); ++e) {
    CHECK(rerun.history[e].loss_qa == s2.history[e].loss_qa);
    CHECK(rerun.history[e].val_acc == s2.history[e].val_acc);
  }
  for (const auto& [name, t] : s2.params.values)
    CHECK(rerun.params.at(name) == t);

  // Metrics CSV round trip is byte-identical for identical histories.
  const fs::path csv1 = fs::temp_directory_path() / "tjstg_m1.csv";
  const fs::path csv2 = fs::temp_directory_path() / "tjstg_m2.csv";
  write_stage2_csv(csv1.string(), s2.history);
  write_stage2_csv(csv2.string(), rerun.history);
  std::ifstream a(csv1), b(csv2);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);
  CHECK(bytes_a.rfind("epoch,lr,loss_qa,loss_csl,loss_s,train_acc,val_acc\n", 0) == 0);
}

TEST_CASE("checkpoints round trip through save and load") {
  ModelConfig mcfg;
  mcfg.tau = 0.002;
  mcfg.order = InterleaveOrder::kAV;
  mcfg.csl_enabled = false;
  const ParamSet params = ParamSet::init(mcfg, 77);
  const fs::path dir = fs::temp_directory_path() / "tjstg_ckpt";
  fs::remove_all(dir);
  save_checkpoint(dir.string(), params, mcfg);
  auto [loaded, cfg] = load_checkpoint(dir.string());
  CHECK(cfg.tau == mcfg.tau);
  CHECK(cfg.order == mcfg.order);
  CHECK(cfg.csl_enabled == mcfg.csl_enabled);
  for (const auto& [name, t] : params.values) CHECK(loaded.at(name) == t);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt"), IoError);
}

TEST_CASE("training rejects an empty dataset") {
  Dataset empty;
  empty.cfg = TaskConfig{};
  ModelConfig mcfg;
  TrainConfig tcfg;
  CHECK_THROWS_AS(train_stage1(empty, mcfg, tcfg), ContractError);
}

TEST_CASE("faulty backward rule is caught by the checker") {
  const auto cases = gradcheck_tiny_model(1e-5, 11, true);
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, c.report.max_rel_err);
  CHECK(worst > 1e-2);
}
