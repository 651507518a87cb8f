#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

class PruningMask;

// Shape of the toy decoder. All fields must be set; validate() is called by
// the model constructor and by checkpoint loading.
struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 0;
  int n_layers = 0;
  int d_ff = 0;
  int context_len = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError on any violated constraint, naming the field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Aggregate parameter counts for reporting. `sparsity` and `nonzero_params`
// reflect the mask handed to param_report; without one the model is treated
// as fully dense.
struct ParamReport {
  long long total_params = 0;
  long long prunable_params = 0;
  long long nonzero_params = 0;
  double sparsity = 0.0;
};

// Decoder-only transformer with pre-norm blocks, learned absolute position
// embeddings, GELU feed-forward, and embedding/output weight tying
// (logits = h * tok_emb^T). Attention projections carry no biases; the
// feed-forward layers do. Everything runs in double precision.
//
// Parameter names: "tok_emb", "pos_emb", per block "l<i>.ln1.gain",
// "l<i>.ln1.bias", "l<i>.w_q", "l<i>.w_k", "l<i>.w_v", "l<i>.w_o",
// "l<i>.ln2.gain", "l<i>.ln2.bias", "l<i>.w_ff1", "l<i>.b_ff1", "l<i>.w_ff2",
// "l<i>.b_ff2", and finally "lnf.gain", "lnf.bias".
class TransformerModel {
 public:
  // Builds and initializes all weights from config.seed: matrices and
  // embeddings are Gaussian(0, 0.02), biases zero, layer-norm gains one.
  // The draw order is the named_parameters() order, so equal configs give
  // bit-identical weights.
  explicit TransformerModel(const ModelConfig& config);

  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;
  TransformerModel(TransformerModel&&) = default;
  TransformerModel& operator=(TransformerModel&&) = default;

  // All-zero weights; checkpoint loading overwrites them.
  static TransformerModel uninitialized(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Logits for each position of a token sequence, shape [len, vocab_size].
  // InputError when the sequence is empty, longer than context_len, or
  // contains a token outside [0, vocab_size).
  Tensor forward(std::span<const int> tokens) const;

  // Every learnable tensor, in a fixed documented order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  // The pruning-eligible subset: attention projections and feed-forward
  // matrices, layer-major ({w_q, w_k, w_v, w_o, w_ff1, w_ff2} per block).
  // Embeddings, biases, and layer-norm parameters are never pruned.
  std::vector<std::pair<std::string, Tensor>> prunable_parameters() const;

  // The named tensor, or ContractError if no such parameter exists.
  Tensor parameter(const std::string& name) const;

  // Deep copy: fresh storage, identical values, no shared state.
  TransformerModel clone() const;

  void zero_grad();

  // Counts for reporting. With a mask, nonzero/sparsity describe what the
  // mask prunes; the mask must match this model's prunable set.
  ParamReport param_report(const PruningMask* mask = nullptr) const;

  static constexpr double kLayerNormEps = 1e-5;

 private:
  struct Block {
    Tensor ln1_gain, ln1_bias;
    Tensor w_q, w_k, w_v, w_o;
    Tensor ln2_gain, ln2_bias;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
  };

  TransformerModel(const ModelConfig& config, bool initialize);

  ModelConfig config_;
  Tensor tok_emb_;  // [vocab_size, d_model], also the output projection
  Tensor pos_emb_;  // [context_len, d_model]
  std::vector<Block> blocks_;
  Tensor lnf_gain_, lnf_bias_;
};

}  // namespace prunekit
