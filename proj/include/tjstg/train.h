#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tjstg/network.h"

namespace tjstg {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 30;         // stage II
  std::size_t stage1_epochs = 10;  // matching pretraining
  double lr0 = 2e-4;
  std::size_t lr_drop_every = 10;  // epochs between x lr_factor drops
  double lr_factor = 0.1;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

// lr0 * factor^floor(epoch / drop_every); non-increasing in epoch.
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

// Standard bias-corrected Adam, beta1=0.9, beta2=0.999, eps=1e-8.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Tensor> m, v;
};

void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, double lr);

struct Stage1Epoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_s = 0.0;
  double match_acc = 0.0;  // running accuracy over the training pass
};

struct Stage2Epoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_qa = 0.0;
  double loss_csl = 0.0;  // reported as 0 when the CSL is disabled
  double loss_s = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct Stage1Result {
  ParamSet params;
  std::vector<Stage1Epoch> history;
};

struct Stage2Result {
  ParamSet params;
  std::vector<Stage2Epoch> history;
};

// Minimizes the matching loss alone; deterministic in cfg.seed.
Stage1Result train_stage1(const Dataset& ds, const ModelConfig& mcfg,
                          const TrainConfig& tcfg);

// Joint optimization of qa + csl + lambda*matching starting from the stage-I
// parameters (non-pretrained tensors get a fresh seeded init).
Stage2Result train_stage2(const Dataset& ds, const ModelConfig& mcfg,
                          const TrainConfig& tcfg, const ParamSet& stage1);

struct EvalReport {
  double accuracy = 0.0;
  std::map<std::string, double> per_type;
  std::map<std::string, std::size_t> type_counts;
  double mean_js = 0.0;  // mean JS(w_a, w_v) over the split
  std::size_t count = 0;
};

EvalReport evaluate(const Dataset& ds, const std::string& split,
                    const ParamSet& params, const ModelConfig& mcfg);

// epoch,lr,loss_qa,loss_csl,loss_s,train_acc,val_acc
void write_stage2_csv(const std::string& path, const std::vector<Stage2Epoch>& h);
// epoch,lr,loss_s,match_acc
void write_stage1_csv(const std::string& path, const std::vector<Stage1Epoch>& h);

}  // namespace tjstg
