#include "tjstg/train.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "tjstg/rng.h"

namespace tjstg {

namespace {

constexpr std::uint64_t kShuffleStage1 = 4;
constexpr std::uint64_t kShuffleStage2 = 5;
constexpr std::uint64_t kStage2FreshInit = 6;

void shuffle_ids(std::vector<std::size_t>& ids, Rng& rng) {
  for (std::size_t i = ids.size(); i > 1; --i) {
    const std::size_t j = rng.next_below(i);
    std::swap(ids[i - 1], ids[j]);
  }
}

struct GradAccumulator {
  std::map<std::string, Tensor> sum;
  std::size_t count = 0;

  void add(const Bound& bound, const ad::Graph& g) {
    for (const auto& [name, var] : bound) {
      Tensor grad = g.grad(var);
      auto it = sum.find(name);
      if (it == sum.end()) {
        sum.emplace(name, std::move(grad));
      } else {
        Tensor& acc = it->second;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
      }
    }
    ++count;
  }

  // Mean over the batch, optional global-norm clip.
  std::map<std::string, Tensor> finish(double clip) {
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& [name, t] : sum)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] *= inv;
    if (clip > 0.0) {
      double norm2 = 0.0;
      for (const auto& [name, t] : sum)
        for (std::size_t i = 0; i < t.size(); ++i) norm2 += t[i] * t[i];
      const double norm = std::sqrt(norm2);
      if (norm > clip) {
        const double s = clip / norm;
        for (auto& [name, t] : sum)
          for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s;
      }
    }
    return std::move(sum);
  }
};

void require_nonempty(const Dataset& ds) {
  if (ds.train.empty()) throw ContractError("training split is empty");
  if (ds.scenes.empty()) throw ContractError("dataset has no scenes");
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 1 || stage1_epochs < 1)
    throw ContractError("TrainConfig: batch size and epoch counts must be >= 1");
  if (!(lr0 > 0.0)) throw ContractError("TrainConfig: lr0 must be positive");
  if (lr_drop_every < 1) throw ContractError("TrainConfig: lr_drop_every must be >= 1");
  if (!(lr_factor > 0.0) || lr_factor > 1.0)
    throw ContractError("TrainConfig: lr_factor must be in (0,1]");
  if (grad_clip < 0.0) throw ContractError("TrainConfig: grad_clip must be >= 0");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  cfg.validate();
  const auto drops = static_cast<double>(epoch / cfg.lr_drop_every);
  return cfg.lr0 * std::pow(cfg.lr_factor, drops);
}

void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, double lr) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params.values) {
    const auto git = grads.find(name);
    if (git == grads.end())
      throw ContractError("adam_step: missing gradient for " + name);
    const Tensor& g = git->second;
    if (!g.same_shape(theta))
      throw ShapeError("adam_step: gradient shape " + g.shape_str() +
                       " does not match parameter " + theta.shape_str());
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(theta.shape())).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(theta.shape())).first->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

Stage1Result train_stage1(const Dataset& ds, const ModelConfig& mcfg,
                          const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  require_nonempty(ds);

  Stage1Result result;
  result.params = ParamSet::init(mcfg, tcfg.seed);
  AdamState adam;
  Rng shuffle_rng = Rng(tcfg.seed).fork(kShuffleStage1);
  std::vector<std::size_t> ids = ds.train;

  for (std::size_t epoch = 0; epoch < tcfg.stage1_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tcfg);
    shuffle_ids(ids, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < ids.size(); start += tcfg.batch_size) {
      const std::size_t stop = std::min(ids.size(), start + tcfg.batch_size);
      GradAccumulator acc;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t id = ids[k];
        const SceneEntry& entry = ds.entries[id];
        ad::Graph g;
        Bound bound = result.params.bind(g);
        MatchingForward fwd = matching_forward(g, bound, mcfg, ds.scenes[id],
                                               ds.match_audio(id), entry.match_label);
        loss_sum += g.value(fwd.loss).item();
        double mean_score = 0.0;
        for (const ad::Var& s : fwd.scores) mean_score += g.value(s).item();
        mean_score /= static_cast<double>(fwd.scores.size());
        if ((mean_score > 0.5) == (entry.match_label != 0)) ++correct;
        g.backward(fwd.loss);
        acc.add(bound, g);
      }
      adam_step(result.params, acc.finish(tcfg.grad_clip), adam, lr);
    }

    Stage1Epoch row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss_s = loss_sum / static_cast<double>(ids.size());
    row.match_acc = static_cast<double>(correct) / static_cast<double>(ids.size());
    result.history.push_back(row);
  }
  return result;
}

Stage2Result train_stage2(const Dataset& ds, const ModelConfig& mcfg,
                          const TrainConfig& tcfg, const ParamSet& stage1) {
  mcfg.validate();
  tcfg.validate();
  require_nonempty(ds);

  Stage2Result result;
  // Fresh init for everything, then pull the pretrained stage-I tensors in.
  result.params = ParamSet::init(mcfg, Rng(tcfg.seed).fork(kStage2FreshInit).next_u64());
  for (const std::string& name : ParamSet::stage1_names()) {
    const Tensor& src = stage1.at(name);
    Tensor& dst = result.params.values.at(name);
    if (!src.same_shape(dst))
      throw ContractError("stage-I parameter " + name + " has shape " +
                          src.shape_str() + ", expected " + dst.shape_str());
    dst = src;
  }

  AdamState adam;
  Rng shuffle_rng = Rng(tcfg.seed).fork(kShuffleStage2);
  std::vector<std::size_t> ids = ds.train;

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tcfg);
    shuffle_ids(ids, shuffle_rng);
    double qa_sum = 0.0, csl_sum = 0.0, s_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < ids.size(); start += tcfg.batch_size) {
      const std::size_t stop = std::min(ids.size(), start + tcfg.batch_size);
      GradAccumulator acc;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t id = ids[k];
        const SceneEntry& entry = ds.entries[id];
        const SyntheticScene& scene = ds.scenes[id];
        const Tensor& paired = entry.match_audio_of == id ? scene.audio
                                                          : ds.match_audio(id);
        ad::Graph g;
        Bound bound = result.params.bind(g);
        SceneLosses losses =
            scene_losses(g, bound, mcfg, scene, paired, entry.match_label);
        qa_sum += g.value(losses.qa).item();
        csl_sum += mcfg.csl_enabled ? g.value(losses.csl).item() : 0.0;
        s_sum += g.value(losses.matching).item();
        if (argmax_index(g.value(losses.out.probs)) == scene.answer) ++correct;
        g.backward(losses.total);
        acc.add(bound, g);
      }
      adam_step(result.params, acc.finish(tcfg.grad_clip), adam, lr);
    }

    Stage2Epoch row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss_qa = qa_sum / static_cast<double>(ids.size());
    row.loss_csl = csl_sum / static_cast<double>(ids.size());
    row.loss_s = s_sum / static_cast<double>(ids.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(ids.size());
    row.val_acc = ds.val.empty()
                      ? 0.0
                      : evaluate(ds, "val", result.params, mcfg).accuracy;
    result.history.push_back(row);
  }
  return result;
}

EvalReport evaluate(const Dataset& ds, const std::string& split,
                    const ParamSet& params, const ModelConfig& mcfg) {
  const std::vector<std::size_t>& ids = ds.split(split);
  if (ids.empty()) throw ContractError("evaluate: split '" + split + "' is empty");

  EvalReport report;
  std::map<std::string, std::size_t> correct_per_type;
  double js_sum = 0.0;
  std::size_t correct = 0;
  for (const std::size_t id : ids) {
    const SyntheticScene& scene = ds.scenes[id];
    ad::Graph g;
    Bound bound = params.bind(g);
    ModelOutputs out = run_model(g, bound, mcfg, scene);
    const bool ok = argmax_index(g.value(out.probs)) == scene.answer;
    const std::string& type = ds.entries[id].question_type;
    report.type_counts[type] += 1;
    if (ok) {
      ++correct;
      correct_per_type[type] += 1;
    }
    js_sum += g.value(csl_loss(out.modal)).item();
  }
  report.count = ids.size();
  report.accuracy = static_cast<double>(correct) / static_cast<double>(ids.size());
  for (const auto& [type, n] : report.type_counts)
    report.per_type[type] =
        static_cast<double>(correct_per_type[type]) / static_cast<double>(n);
  report.mean_js = js_sum / static_cast<double>(ids.size());
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_stage2_csv(const std::string& path, const std::vector<Stage2Epoch>& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,lr,loss_qa,loss_csl,loss_s,train_acc,val_acc\n";
  for (const Stage2Epoch& r : h)
    out << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.loss_qa) << ','
        << fmt(r.loss_csl) << ',' << fmt(r.loss_s) << ',' << fmt(r.train_acc)
        << ',' << fmt(r.val_acc) << '\n';
  if (!out) throw IoError("short write: " + path);
}

void write_stage1_csv(const std::string& path, const std::vector<Stage1Epoch>& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,lr,loss_s,match_acc\n";
  for (const Stage1Epoch& r : h)
    out << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.loss_s) << ','
        << fmt(r.match_acc) << '\n';
  if (!out) throw IoError("short write: " + path);
}

}  // namespace tjstg
