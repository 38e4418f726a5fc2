// Command-line front end: dataset generation, two-stage training, evaluation,
// gradient checking, and attention dumps. All outputs are files; every
// subcommand is deterministic in --seed.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tjstg/gradcheck.h"
#include "tjstg/train.h"

namespace fs = std::filesystem;
using namespace tjstg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitContract = 3;
constexpr int kExitGradcheck = 4;

struct GenOptions {
  std::uint64_t seed = 0;
  std::size_t t = 6, n_words = 8, grid = 4, dim = 16;
  std::size_t classes = 6, answers = 4;
  double noise = 0.1;
  std::string task = "counting";
  std::size_t n_train = 2000, n_val = 250, n_test = 250;
  double neg_fraction = 0.5;
  std::string out;
};

TaskConfig task_config(const GenOptions& o) {
  TaskConfig cfg;
  cfg.segments = o.t;
  cfg.words = o.n_words;
  cfg.grid_h = cfg.grid_w = o.grid;
  cfg.dim = o.dim;
  cfg.concepts = o.classes;
  cfg.answers = o.answers;
  cfg.noise_sigma = o.noise;
  cfg.seed = o.seed;
  cfg.task = question_kind_from_string(o.task);
  return cfg;
}

int run_gen(const GenOptions& o) {
  const std::string manifest =
      gen_dataset(task_config(o), o.n_train, o.n_val, o.n_test, o.neg_fraction, o.out);
  std::cout << "wrote " << manifest << "\n";
  return kExitOk;
}

struct TrainOptions {
  std::uint64_t seed = 0;
  std::string data;
  std::string out;
  double tau = 0.005;
  double lambda = 0.5;
  bool no_csl = false;
  bool no_ta = false;
  bool renorm_spatial = false;
  std::string order = "va";
  std::size_t heads = 1;
  std::size_t epochs = 30;
  std::size_t stage1_epochs = 10;
  double lr = 2e-4;
  std::size_t batch = 64;
  double grad_clip = 0.0;
  bool stage2_only = false;
  std::string init;
};

ModelConfig model_config(const TrainOptions& o, const TaskConfig& task) {
  ModelConfig m;
  m.dim = task.dim;
  m.answers = task.answers;
  m.heads = o.heads;
  m.tau = o.tau;
  m.lambda_match = o.lambda;
  m.csl_enabled = !o.no_csl;
  m.target_aware = !o.no_ta;
  m.renormalize_spatial = o.renorm_spatial;
  m.order = interleave_order_from_string(o.order);
  m.validate();
  return m;
}

int run_train(const TrainOptions& o) {
  const Dataset ds = Dataset::load(o.data);
  const ModelConfig mcfg = model_config(o, ds.cfg);
  TrainConfig tcfg;
  tcfg.seed = o.seed;
  tcfg.epochs = o.epochs;
  tcfg.stage1_epochs = o.stage1_epochs;
  tcfg.lr0 = o.lr;
  tcfg.batch_size = o.batch;
  tcfg.grad_clip = o.grad_clip;
  tcfg.validate();

  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create " + o.out + ": " + ec.message());

  ParamSet stage1_params;
  if (o.stage2_only) {
    if (o.init.empty())
      throw ContractError("--stage2-only requires --init CHECKPOINT");
    auto [params, ckpt_cfg] = load_checkpoint(o.init);
    if (ckpt_cfg.dim != mcfg.dim || ckpt_cfg.answers != mcfg.answers)
      throw ContractError("--init checkpoint does not match the dataset dims");
    stage1_params = std::move(params);
    std::cout << "stage I: loaded " << o.init << "\n";
  } else {
    Stage1Result s1 = train_stage1(ds, mcfg, tcfg);
    write_stage1_csv((fs::path(o.out) / "metrics_stage1.csv").string(), s1.history);
    save_checkpoint((fs::path(o.out) / "checkpoint_stage1").string(), s1.params, mcfg);
    const Stage1Epoch& last = s1.history.back();
    std::cout << "stage I: loss_s " << last.loss_s << " match_acc "
              << last.match_acc << "\n";
    stage1_params = std::move(s1.params);
  }

  Stage2Result s2 = train_stage2(ds, mcfg, tcfg, stage1_params);
  write_stage2_csv((fs::path(o.out) / "metrics.csv").string(), s2.history);
  save_checkpoint((fs::path(o.out) / "checkpoint").string(), s2.params, mcfg);

  const EvalReport report = evaluate(ds, "test", s2.params, mcfg);
  std::cout << "stage II: train_acc " << s2.history.back().train_acc
            << " val_acc " << s2.history.back().val_acc << "\n"
            << "test accuracy " << report.accuracy << " mean_js "
            << report.mean_js << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::string data, init, split = "test", out;
  std::uint64_t seed = 0;
};

int run_eval(const EvalOptions& o) {
  const Dataset ds = Dataset::load(o.data);
  auto [params, mcfg] = load_checkpoint(o.init);
  const EvalReport report = evaluate(ds, o.split, params, mcfg);
  std::cout << "split " << o.split << ": accuracy " << report.accuracy << " ("
            << report.count << " scenes), mean_js " << report.mean_js << "\n";
  for (const auto& [type, acc] : report.per_type)
    std::cout << "  " << type << ": " << acc << " ("
              << report.type_counts.at(type) << ")\n";
  if (!o.out.empty()) {
    nlohmann::ordered_json j;
    j["split"] = o.split;
    j["accuracy"] = report.accuracy;
    j["count"] = report.count;
    j["mean_js"] = report.mean_js;
    j["per_type"] = report.per_type;
    std::ofstream f(o.out);
    if (!f) throw IoError("cannot write " + o.out);
    f << j.dump(2) << "\n";
  }
  return kExitOk;
}

struct GradcheckOptions {
  std::uint64_t seed = 11;
  double eps = 1e-5;
  double tol = 1e-4;
  bool inject_fault = false;
};

int run_gradcheck(const GradcheckOptions& o) {
  const auto cases = gradcheck_tiny_model(o.eps, o.seed, o.inject_fault);
  // One line per named parameter group: worst error across all four losses.
  std::map<std::string, double> per_group;
  for (const GradCheckCase& c : cases)
    for (const auto& entry : c.report.entries) {
      auto [it, inserted] = per_group.try_emplace(entry.name, entry.max_rel_err);
      if (!inserted) it->second = std::max(it->second, entry.max_rel_err);
    }
  bool ok = true;
  for (const auto& [name, err] : per_group) {
    const bool pass = err < o.tol;
    ok = ok && pass;
    std::printf("%-14s %-12s max_rel_err %.3e\n", name.c_str(),
                pass ? "pass" : "FAIL", err);
  }
  for (const GradCheckCase& c : cases)
    std::printf("loss %-6s max_rel_err %.3e\n", c.loss_name.c_str(),
                c.report.max_rel_err);
  return ok ? kExitOk : kExitGradcheck;
}

struct DumpOptions {
  std::string data, init, out, split = "test";
  std::size_t limit = 0;  // 0 = all scenes in the split
  std::uint64_t seed = 0;
};

void write_pgm(const std::string& path, const Tensor& weights, std::size_t h,
               std::size_t w) {
  double lo = weights[0], hi = weights[0];
  for (std::size_t i = 0; i < weights.size(); ++i) {
    lo = std::min(lo, weights[i]);
    hi = std::max(hi, weights[i]);
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "P2\n" << w << " " << h << "\n255\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = weights[r * w + c];
      const int g = hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo)))
                            : 0;
      f << g << (c + 1 < w ? " " : "");
    }
    f << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

int run_dump_attn(const DumpOptions& o) {
  const Dataset ds = Dataset::load(o.data);
  auto [params, mcfg] = load_checkpoint(o.init);
  const auto& ids = ds.split(o.split);
  const std::size_t count = o.limit == 0 ? ids.size() : std::min(o.limit, ids.size());

  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create " + o.out + ": " + ec.message());

  std::ofstream temporal((fs::path(o.out) / "temporal.csv").string());
  if (!temporal) throw IoError("cannot write temporal.csv in " + o.out);
  temporal << "scene,modality";
  const std::size_t T = ds.cfg.segments;
  for (std::size_t t = 0; t < T; ++t) temporal << ",w" << t;
  temporal << "\n";

  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t id = ids[k];
    const SyntheticScene& scene = ds.scenes[id];
    ad::Graph g;
    Bound bound = params.bind(g);
    ModelOutputs out = run_model(g, bound, mcfg, scene);

    char dir_name[32];
    std::snprintf(dir_name, sizeof(dir_name), "scene_%06zu", id);
    const fs::path scene_dir = fs::path(o.out) / dir_name;
    fs::create_directories(scene_dir, ec);
    if (ec) throw IoError("cannot create " + scene_dir.string());

    std::ofstream spatial((scene_dir / "spatial.csv").string());
    if (!spatial) throw IoError("cannot write spatial.csv for scene " + std::to_string(id));
    spatial << "segment";
    for (std::size_t r = 0; r < ds.cfg.regions(); ++r) spatial << ",r" << r;
    spatial << "\n";
    for (std::size_t t = 0; t < T; ++t) {
      const Tensor& weights = g.value(out.spatial[t].combined);
      char pgm_name[32];
      std::snprintf(pgm_name, sizeof(pgm_name), "seg_%zu.pgm", t);
      write_pgm((scene_dir / pgm_name).string(), weights, ds.cfg.grid_h,
                ds.cfg.grid_w);
      spatial << t;
      char num[64];
      for (std::size_t r = 0; r < weights.size(); ++r) {
        std::snprintf(num, sizeof(num), "%.17g", weights[r]);
        spatial << ',' << num;
      }
      spatial << "\n";
    }

    const Tensor w_a = g.value(out.modal.audio);
    const Tensor w_v = g.value(out.modal.visual);
    char num[64];
    temporal << id << ",audio";
    for (std::size_t t = 0; t < T; ++t) {
      std::snprintf(num, sizeof(num), "%.17g", w_a[t]);
      temporal << ',' << num;
    }
    temporal << "\n" << id << ",visual";
    for (std::size_t t = 0; t < T; ++t) {
      std::snprintf(num, sizeof(num), "%.17g", w_v[t]);
      temporal << ',' << num;
    }
    temporal << "\n";
  }
  std::cout << "wrote attention dumps for " << count << " scenes to " << o.out
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"target-aware joint spatio-temporal grounding on synthetic scenes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file with long-option values");

  GenOptions gen;
  CLI::App* cmd_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  cmd_gen->add_option("--seed", gen.seed, "dataset seed");
  cmd_gen->add_option("--t", gen.t, "segments per scene");
  cmd_gen->add_option("--n-words", gen.n_words, "words per question");
  cmd_gen->add_option("--grid", gen.grid, "spatial grid side (h = w)");
  cmd_gen->add_option("--dim", gen.dim, "feature dimension");
  cmd_gen->add_option("--classes", gen.classes, "number of concept classes");
  cmd_gen->add_option("--answers", gen.answers, "answer vocabulary size");
  cmd_gen->add_option("--noise", gen.noise, "additive gaussian noise sigma");
  cmd_gen->add_option("--task", gen.task, "counting | existential");
  cmd_gen->add_option("--n-train", gen.n_train, "training scenes");
  cmd_gen->add_option("--n-val", gen.n_val, "validation scenes");
  cmd_gen->add_option("--n-test", gen.n_test, "test scenes");
  cmd_gen->add_option("--neg-fraction", gen.neg_fraction,
                      "fraction of scenes paired with mismatched audio");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();

  TrainOptions train;
  CLI::App* cmd_train = app.add_subcommand("train", "two-stage training");
  cmd_train->add_option("--seed", train.seed, "training seed");
  cmd_train->add_option("--data", train.data, "dataset directory")->required();
  cmd_train->add_option("--out", train.out, "output directory")->required();
  cmd_train->add_option("--tau", train.tau, "spatial threshold");
  cmd_train->add_option("--lambda", train.lambda, "matching loss weight");
  cmd_train->add_flag("--no-csl", train.no_csl, "disable the synchrony loss");
  cmd_train->add_flag("--no-ta", train.no_ta, "disable target-aware grounding");
  cmd_train->add_flag("--renorm-spatial", train.renorm_spatial,
                      "renormalize thresholded spatial attention");
  cmd_train->add_option("--interleave-order", train.order,
                        "va | av | cat-va | cat-av");
  cmd_train->add_option("--heads", train.heads, "attention heads");
  cmd_train->add_option("--epochs", train.epochs, "stage-II epochs");
  cmd_train->add_option("--stage1-epochs", train.stage1_epochs, "stage-I epochs");
  cmd_train->add_option("--lr", train.lr, "initial learning rate");
  cmd_train->add_option("--batch", train.batch, "batch size");
  cmd_train->add_option("--grad-clip", train.grad_clip,
                        "global-norm gradient clip (0 = off)");
  cmd_train->add_flag("--stage2-only", train.stage2_only,
                      "skip stage I, start from --init");
  cmd_train->add_option("--init", train.init, "checkpoint used with --stage2-only");

  EvalOptions eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->add_option("--seed", eval.seed, "unused, accepted for uniformity");
  cmd_eval->add_option("--data", eval.data, "dataset directory")->required();
  cmd_eval->add_option("--init", eval.init, "checkpoint directory")->required();
  cmd_eval->add_option("--split", eval.split, "train | val | test");
  cmd_eval->add_option("--out", eval.out, "optional JSON report path");

  GradcheckOptions gc;
  CLI::App* cmd_gc = app.add_subcommand("gradcheck",
                                        "finite-difference check of every "
                                        "parameter group on a tiny model");
  cmd_gc->add_option("--seed", gc.seed, "model/scene seed");
  cmd_gc->add_option("--eps", gc.eps, "finite-difference step");
  cmd_gc->add_option("--tol", gc.tol, "pass threshold on the relative error");
  cmd_gc->add_flag("--inject-fault", gc.inject_fault,
                   "flip one backward rule's sign (test fixture)");

  DumpOptions dump;
  CLI::App* cmd_dump = app.add_subcommand("dump-attn",
                                          "write spatial attention heatmaps "
                                          "(PGM) and temporal weights (CSV)");
  cmd_dump->add_option("--seed", dump.seed, "unused, accepted for uniformity");
  cmd_dump->add_option("--data", dump.data, "dataset directory")->required();
  cmd_dump->add_option("--init", dump.init, "checkpoint directory")->required();
  cmd_dump->add_option("--out", dump.out, "output directory")->required();
  cmd_dump->add_option("--split", dump.split, "train | val | test");
  cmd_dump->add_option("--limit", dump.limit, "max scenes (0 = all)");

  int code = kExitOk;
  cmd_gen->callback([&]() { code = run_gen(gen); });
  cmd_train->callback([&]() { code = run_train(train); });
  cmd_eval->callback([&]() { code = run_eval(eval); });
  cmd_gc->callback([&]() { code = run_gradcheck(gc); });
  cmd_dump->callback([&]() { code = run_dump_attn(dump); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ShapeError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kExitContract;
  }
  return code;
}
