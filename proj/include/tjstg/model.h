#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tjstg/autodiff.h"

namespace tjstg {

// Row layout of the interleaved audio-visual sequence. The two Cat variants
// concatenate whole modalities instead of alternating per segment.
enum class InterleaveOrder { kVA, kAV, kCatVA, kCatAV };

const char* to_string(InterleaveOrder order);
InterleaveOrder interleave_order_from_string(const std::string& s);

struct ModelConfig {
  std::size_t dim = 16;     // shared feature dimension d
  std::size_t answers = 4;  // answer vocabulary size C
  std::size_t heads = 1;    // attention heads; dim must be divisible
  double tau = 0.005;       // spatial threshold
  InterleaveOrder order = InterleaveOrder::kVA;
  bool target_aware = true;        // off reproduces the "w/o T-A" ablation
  bool csl_enabled = true;         // off reproduces the "w/o L_csl" ablation
  bool renormalize_spatial = false;  // mask dropped regions out of the softmax
  double lambda_match = 0.5;       // weight of the matching loss in the total

  void validate() const;
};

// Binding of parameter names to tape variables for one graph.
using Bound = std::map<std::string, ad::Var>;

// Every trainable tensor, addressable by name. Names are dotted paths
// ("q_lstm.Wx", "head.W", ...) and double as gradient-check group names.
struct ParamSet {
  std::map<std::string, Tensor> values;

  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, deterministic in seed.
  static ParamSet init(const ModelConfig& cfg, std::uint64_t seed);

  Bound bind(ad::Graph& g) const;
  std::vector<std::string> names() const;
  const Tensor& at(const std::string& name) const;

  // Parameters reached by the stage-I matching objective; these are the ones
  // carried over into stage II.
  static std::vector<std::string> stage1_names();
};

// Checkpoint directory: params/<name>.tjt per tensor plus index.json.
void save_checkpoint(const std::string& dir, const ParamSet& params,
                     const ModelConfig& cfg);
std::pair<ParamSet, ModelConfig> load_checkpoint(const std::string& dir);

}  // namespace tjstg
