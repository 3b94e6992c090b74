#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metaprompt/tensor.hpp"
#include "metaprompt/vocabulary.hpp"

namespace metaprompt {

struct BackboneConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 32;
  int vocab_size = 512;
  int max_seq_len = 128;
  std::uint64_t seed = 0;

  // Item-similarity structure standing in for what a pretrained model knows
  // about its items. Item tokens are split into consecutive groups of
  // `semantic_group_size`, starting at `semantic_item_base`; members of a
  // group share a common embedding direction carrying `semantic_share` of
  // the variance. semantic_groups = 0 gives a plain i.i.d. Gaussian table.
  int semantic_groups = 0;
  int semantic_group_size = 0;
  double semantic_share = 0.5;
  int semantic_item_base = vocab::kItemBase;

  /// Throws ConfigError on an invalid geometry.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

struct LayerWeights {
  ad::Tensor ln1_gain, ln1_bias;
  std::vector<ad::Tensor> query, key, value;  // per head, d x d/h
  std::vector<ad::Tensor> output;             // per head, d/h x d
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor mlp_in;   // d x 4d
  ad::Tensor mlp_out;  // 4d x d
};

struct BackboneWeights {
  ad::Tensor token_embedding;     // V x d, also the (tied) output head
  ad::Tensor position_embedding;  // max_seq_len x d
  std::vector<LayerWeights> layers;
  ad::Tensor final_gain, final_bias;

  void for_each(const std::function<void(const ad::Tensor&)>& fn) const;
};

/// Small frozen pre-LN decoder-only transformer. Immutable after
/// construction and safe to share across threads.
class Backbone {
 public:
  explicit Backbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  const BackboneWeights& weights() const { return weights_; }
  int d_model() const { return config_.d_model; }

  std::size_t parameter_count() const;
  /// Fingerprint of every weight value and of the geometry.
  std::string digest() const;

  /// Token embeddings without positions: t x d.
  ad::Tensor embed_tokens(std::span<const int> token_ids) const;

  /// Causal logits for every row of an input given as embeddings, which may
  /// include prompt rows: (l+t) x d -> (l+t) x V.
  ad::Tensor forward(const ad::Tensor& input_embeddings) const;

  /// Final-position logits of [prompt; tokens] for n sequences: n x V, row
  /// i for sequence i. Prompt rows are computed once and all sequences run
  /// packed together; row i equals the last row of forward() on the
  /// composed input of sequence i.
  ad::Tensor final_logits(const ad::Tensor& prompt,
                          std::span<const std::vector<int>> sequences) const;

 private:
  ad::Tensor positions(std::size_t begin, std::size_t count) const;
  ad::Tensor block(const ad::Tensor& x, const LayerWeights& layer) const;
  ad::Tensor mlp(const ad::Tensor& x, const LayerWeights& layer) const;

  BackboneConfig config_;
  BackboneWeights weights_;
  ad::Tensor head_;  // d x V, transpose of the token embedding
};

Backbone init_backbone(const BackboneConfig& config);

}  // namespace metaprompt
