#include "prunekit/model.hpp"

#include <numeric>

#include "prunekit/pruning.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

void ModelConfig::validate() const {
  auto positive = [](int value, const char* field) {
    if (value <= 0) {
      throw ConfigError(std::string("model.") + field + " must be positive, got " +
                        std::to_string(value));
    }
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(context_len, "context_len");
  if (n_layers < 0) {
    throw ConfigError("model.n_layers must be non-negative, got " + std::to_string(n_layers));
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.n_heads (" + std::to_string(n_heads) + ")");
  }
}

TransformerModel::TransformerModel(const ModelConfig& config)
    : TransformerModel(config, /*initialize=*/true) {}

TransformerModel TransformerModel::uninitialized(const ModelConfig& config) {
  return TransformerModel(config, /*initialize=*/false);
}

TransformerModel::TransformerModel(const ModelConfig& config, bool initialize)
    : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int d = config_.d_model;
  const int v = config_.vocab_size;
  const int f = config_.d_ff;

  auto weight = [&](std::vector<int> shape) {
    return initialize ? Tensor::gaussian(std::move(shape), rng, 0.0, 0.02, true)
                      : Tensor::zeros(std::move(shape), true);
  };
  // Gains start at one, biases at zero; neither consumes random draws, so the
  // weight stream is a function of the matrix order alone.
  auto ones = [&](int n) { return Tensor::full({n}, 1.0, true); };
  auto zeros_vec = [&](int n) { return Tensor::zeros({n}, true); };

  tok_emb_ = weight({v, d});
  pos_emb_ = weight({config_.context_len, d});
  blocks_.reserve(static_cast<std::size_t>(config_.n_layers));
  for (int i = 0; i < config_.n_layers; ++i) {
    Block b;
    b.ln1_gain = ones(d);
    b.ln1_bias = zeros_vec(d);
    b.w_q = weight({d, d});
    b.w_k = weight({d, d});
    b.w_v = weight({d, d});
    b.w_o = weight({d, d});
    b.ln2_gain = ones(d);
    b.ln2_bias = zeros_vec(d);
    b.w_ff1 = weight({d, f});
    b.b_ff1 = zeros_vec(f);
    b.w_ff2 = weight({f, d});
    b.b_ff2 = zeros_vec(d);
    blocks_.push_back(std::move(b));
  }
  lnf_gain_ = ones(d);
  lnf_bias_ = zeros_vec(d);
}

Tensor TransformerModel::forward(std::span<const int> tokens) const {
  const int len = static_cast<int>(tokens.size());
  if (len == 0) throw InputError("forward: empty token sequence");
  if (len > config_.context_len) {
    throw InputError("forward: sequence length " + std::to_string(len) + " exceeds context_len " +
                     std::to_string(config_.context_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw InputError("forward: token " + std::to_string(t) + " out of range [0," +
                       std::to_string(config_.vocab_size) + ")");
    }
  }

  std::vector<int> positions(static_cast<std::size_t>(len));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor h = add(embedding_rows(tok_emb_, tokens), embedding_rows(pos_emb_, positions));

  const int d = config_.d_model;
  const int head_dim = d / config_.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  for (const Block& blk : blocks_) {
    // attention sublayer, pre-norm
    Tensor x = layer_norm(h, blk.ln1_gain, blk.ln1_bias, kLayerNormEps);
    Tensor q = matmul(x, blk.w_q);
    Tensor k = matmul(x, blk.w_k);
    Tensor v = matmul(x, blk.w_v);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(config_.n_heads));
    for (int head = 0; head < config_.n_heads; ++head) {
      const int start = head * head_dim;
      Tensor qh = slice_cols(q, start, head_dim);
      Tensor kh = slice_cols(k, start, head_dim);
      Tensor vh = slice_cols(v, start, head_dim);
      Tensor scores = scale(matmul(qh, kh, false, true), att_scale);
      Tensor att = softmax(causal_mask(scores), 1);
      head_outputs.push_back(matmul(att, vh));
    }
    Tensor attended = concat_cols(head_outputs);
    h = add(h, matmul(attended, blk.w_o));

    // feed-forward sublayer, pre-norm
    Tensor y = layer_norm(h, blk.ln2_gain, blk.ln2_bias, kLayerNormEps);
    Tensor ff = add_bias(matmul(gelu(add_bias(matmul(y, blk.w_ff1), blk.b_ff1)), blk.w_ff2),
                         blk.b_ff2);
    h = add(h, ff);
  }

  Tensor out = layer_norm(h, lnf_gain_, lnf_bias_, kLayerNormEps);
  // tied output head: logits = out * tok_emb^T
  return matmul(out, tok_emb_, false, true);
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    const Block& b = blocks_[i];
    out.emplace_back(p + "ln1.gain", b.ln1_gain);
    out.emplace_back(p + "ln1.bias", b.ln1_bias);
    out.emplace_back(p + "w_q", b.w_q);
    out.emplace_back(p + "w_k", b.w_k);
    out.emplace_back(p + "w_v", b.w_v);
    out.emplace_back(p + "w_o", b.w_o);
    out.emplace_back(p + "ln2.gain", b.ln2_gain);
    out.emplace_back(p + "ln2.bias", b.ln2_bias);
    out.emplace_back(p + "w_ff1", b.w_ff1);
    out.emplace_back(p + "b_ff1", b.b_ff1);
    out.emplace_back(p + "w_ff2", b.w_ff2);
    out.emplace_back(p + "b_ff2", b.b_ff2);
  }
  out.emplace_back("lnf.gain", lnf_gain_);
  out.emplace_back("lnf.bias", lnf_bias_);
  return out;
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::prunable_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    const Block& b = blocks_[i];
    out.emplace_back(p + "w_q", b.w_q);
    out.emplace_back(p + "w_k", b.w_k);
    out.emplace_back(p + "w_v", b.w_v);
    out.emplace_back(p + "w_o", b.w_o);
    out.emplace_back(p + "w_ff1", b.w_ff1);
    out.emplace_back(p + "w_ff2", b.w_ff2);
  }
  return out;
}

Tensor TransformerModel::parameter(const std::string& name) const {
  for (auto& [n, t] : named_parameters()) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named '" + name + "'");
}

TransformerModel TransformerModel::clone() const {
  TransformerModel copy = uninitialized(config_);
  auto src = named_parameters();
  auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].second.data() = src[i].second.data();
  }
  return copy;
}

void TransformerModel::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

ParamReport TransformerModel::param_report(const PruningMask* mask) const {
  ParamReport report;
  for (const auto& [name, t] : named_parameters()) {
    report.total_params += static_cast<long long>(t.numel());
  }
  for (const auto& [name, t] : prunable_parameters()) {
    report.prunable_params += static_cast<long long>(t.numel());
  }
  long long pruned = 0;
  if (mask != nullptr) {
    mask->require_match(*this);
    pruned = mask->pruned_count();
  }
  report.nonzero_params = report.total_params - pruned;
  report.sparsity = report.prunable_params > 0
                        ? static_cast<double>(pruned) / static_cast<double>(report.prunable_params)
                        : 0.0;
  return report;
}

}  // namespace prunekit
