#include "metaprompt/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "metaprompt/digest.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/ops.hpp"

namespace metaprompt {

using ad::Tensor;

namespace {

constexpr double kInitStd = 0.02;

Tensor gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = dist(rng);
  return Tensor(rows, cols, std::move(values));
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void BackboneConfig::validate() const {
  require(n_layers > 0, "n_layers must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(d_model > 0, "d_model must be positive");
  require(vocab_size > 0, "vocab_size must be positive");
  require(max_seq_len > 0, "max_seq_len must be positive");
  require(d_model % n_heads == 0,
          "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
              std::to_string(n_heads) + ")");
  require(semantic_groups >= 0 && semantic_group_size >= 0,
          "semantic group parameters must be non-negative");
  require(semantic_share >= 0.0 && semantic_share <= 1.0,
          "semantic_share must lie in [0, 1]");
  if (semantic_groups > 0) {
    require(semantic_group_size > 0, "semantic_group_size must be positive");
    require(semantic_item_base >= 0 &&
                semantic_item_base + semantic_groups * semantic_group_size <=
                    vocab_size,
            "semantic item groups exceed the vocabulary");
  }
}

void BackboneWeights::for_each(
    const std::function<void(const Tensor&)>& fn) const {
  fn(token_embedding);
  fn(position_embedding);
  for (const auto& layer : layers) {
    fn(layer.ln1_gain);
    fn(layer.ln1_bias);
    for (const auto& w : layer.query) fn(w);
    for (const auto& w : layer.key) fn(w);
    for (const auto& w : layer.value) fn(w);
    for (const auto& w : layer.output) fn(w);
    fn(layer.ln2_gain);
    fn(layer.ln2_bias);
    fn(layer.mlp_in);
    fn(layer.mlp_out);
  }
  fn(final_gain);
  fn(final_bias);
}

Backbone::Backbone(BackboneConfig config) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto dh = static_cast<std::size_t>(config_.head_dim());
  const auto vocab = static_cast<std::size_t>(config_.vocab_size);
  std::mt19937_64 rng(config_.seed);

  weights_.token_embedding = gaussian(vocab, d, rng);
  if (config_.semantic_groups > 0) {
    // Rebuild item rows as sqrt(s) * group_direction + sqrt(1 - s) * own,
    // which keeps the per-entry standard deviation at kInitStd.
    const double shared = std::sqrt(config_.semantic_share);
    const double own = std::sqrt(1.0 - config_.semantic_share);
    auto table = weights_.token_embedding.mutable_data();
    for (int g = 0; g < config_.semantic_groups; ++g) {
      const Tensor direction = gaussian(1, d, rng);
      for (int m = 0; m < config_.semantic_group_size; ++m) {
        const auto row = static_cast<std::size_t>(
            config_.semantic_item_base + g * config_.semantic_group_size + m);
        for (std::size_t j = 0; j < d; ++j) {
          table[row * d + j] =
              shared * direction.data()[j] + own * table[row * d + j];
        }
      }
    }
  }
  weights_.position_embedding =
      gaussian(static_cast<std::size_t>(config_.max_seq_len), d, rng);

  for (int l = 0; l < config_.n_layers; ++l) {
    LayerWeights layer;
    layer.ln1_gain = Tensor::full(1, d, 1.0);
    layer.ln1_bias = Tensor::zeros(1, d);
    for (int h = 0; h < config_.n_heads; ++h) {
      layer.query.push_back(gaussian(d, dh, rng));
      layer.key.push_back(gaussian(d, dh, rng));
      layer.value.push_back(gaussian(d, dh, rng));
      layer.output.push_back(gaussian(dh, d, rng));
    }
    layer.ln2_gain = Tensor::full(1, d, 1.0);
    layer.ln2_bias = Tensor::zeros(1, d);
    layer.mlp_in = gaussian(d, 4 * d, rng);
    layer.mlp_out = gaussian(4 * d, d, rng);
    weights_.layers.push_back(std::move(layer));
  }
  weights_.final_gain = Tensor::full(1, d, 1.0);
  weights_.final_bias = Tensor::zeros(1, d);
  head_ = ad::transpose(weights_.token_embedding);
}

std::size_t Backbone::parameter_count() const {
  std::size_t total = 0;
  weights_.for_each([&](const Tensor& t) { total += t.numel(); });
  return total;
}

std::string Backbone::digest() const {
  Digest digest;
  for (int v : {config_.n_layers, config_.n_heads, config_.d_model,
                config_.vocab_size, config_.max_seq_len}) {
    digest.update(static_cast<std::uint64_t>(v));
  }
  weights_.for_each([&](const Tensor& t) { digest.update(t.data()); });
  return digest.hex();
}

Tensor Backbone::embed_tokens(std::span<const int> token_ids) const {
  return ad::gather_rows(weights_.token_embedding, token_ids);
}

Tensor Backbone::positions(std::size_t begin, std::size_t count) const {
  if (begin + count > static_cast<std::size_t>(config_.max_seq_len)) {
    throw LengthError("sequence length " + std::to_string(begin + count) +
                      " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  return ad::slice_rows(weights_.position_embedding, begin, count);
}

Tensor Backbone::mlp(const Tensor& x, const LayerWeights& layer) const {
  const Tensor normed = ad::layer_norm(x, layer.ln2_gain, layer.ln2_bias);
  const Tensor hidden = ad::gelu(ad::matmul(normed, layer.mlp_in));
  return ad::add(x, ad::matmul(hidden, layer.mlp_out));
}

Tensor Backbone::block(const Tensor& x, const LayerWeights& layer) const {
  const Tensor normed = ad::layer_norm(x, layer.ln1_gain, layer.ln1_bias);
  Tensor out = x;
  for (int h = 0; h < config_.n_heads; ++h) {
    const Tensor head = ad::causal_attention(ad::matmul(normed, layer.query[h]),
                                             ad::matmul(normed, layer.key[h]),
                                             ad::matmul(normed, layer.value[h]));
    out = ad::add(out, ad::matmul(head, layer.output[h]));
  }
  return mlp(out, layer);
}

Tensor Backbone::forward(const Tensor& input_embeddings) const {
  if (input_embeddings.cols() != static_cast<std::size_t>(config_.d_model)) {
    throw ShapeError("forward: input " + input_embeddings.shape().str() +
                     " does not match d_model " +
                     std::to_string(config_.d_model));
  }
  Tensor x = ad::add(input_embeddings, positions(0, input_embeddings.rows()));
  for (const auto& layer : weights_.layers) x = block(x, layer);
  const Tensor normed = ad::layer_norm(x, weights_.final_gain, weights_.final_bias);
  return ad::matmul(normed, head_);
}

Tensor Backbone::final_logits(const Tensor& prompt,
                              std::span<const std::vector<int>> sequences) const {
  const std::size_t l = prompt.rows();
  if (l > 0 && prompt.cols() != static_cast<std::size_t>(config_.d_model)) {
    throw ShapeError("prompt " + prompt.shape().str() +
                     " does not match d_model " + std::to_string(config_.d_model));
  }
  if (sequences.empty()) throw ContractError("final_logits: no sequences");
  const auto heads = static_cast<std::size_t>(config_.n_heads);

  // All sequences' token rows are packed into one matrix; row r belongs to
  // sequence owner[r] at in-sequence index index[r].
  std::vector<int> tokens, pos_ids, last_rows;
  std::vector<std::size_t> owner, index;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.empty()) throw ContractError("final_logits: empty token sequence");
    if (l + seq.size() > static_cast<std::size_t>(config_.max_seq_len)) {
      throw LengthError("sequence length " + std::to_string(l + seq.size()) +
                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
      tokens.push_back(seq[i]);
      pos_ids.push_back(static_cast<int>(l + i));
      owner.push_back(s);
      index.push_back(i);
    }
    last_rows.push_back(static_cast<int>(tokens.size() - 1));
  }
  const std::size_t total = tokens.size();

  // Suffix row r sees every prompt row and the rows of its own sequence up
  // to itself.
  auto visibility = [&](std::span<const int> query_rows) {
    const std::size_t width = l + total;
    std::vector<std::uint8_t> visible(query_rows.size() * width, 0);
    for (std::size_t qi = 0; qi < query_rows.size(); ++qi) {
      const auto r = static_cast<std::size_t>(query_rows[qi]);
      std::uint8_t* row = visible.data() + qi * width;
      std::fill(row, row + l, 1);
      for (std::size_t c = 0; c < total; ++c) {
        if (owner[c] == owner[r] && index[c] <= index[r]) row[l + c] = 1;
      }
    }
    return visible;
  };
  std::vector<int> all_rows(total);
  for (std::size_t r = 0; r < total; ++r) all_rows[r] = static_cast<int>(r);
  const auto visible_all = visibility(all_rows);
  const auto visible_last = visibility(last_rows);

  Tensor prefix;
  if (l > 0) prefix = ad::add(prompt, positions(0, l));
  Tensor suffix = ad::add(embed_tokens(tokens),
                          ad::gather_rows(weights_.position_embedding, pos_ids));

  for (std::size_t li = 0; li < weights_.layers.size(); ++li) {
    const LayerWeights& layer = weights_.layers[li];
    const bool last = li + 1 == weights_.layers.size();

    Tensor prefix_normed, next_prefix;
    if (l > 0) {
      prefix_normed = ad::layer_norm(prefix, layer.ln1_gain, layer.ln1_bias);
      next_prefix = prefix;
    }
    const Tensor normed = ad::layer_norm(suffix, layer.ln1_gain, layer.ln1_bias);
    // The last layer only needs each sequence's final position.
    const Tensor query_rows = last ? ad::gather_rows(normed, last_rows) : normed;
    Tensor out = last ? ad::gather_rows(suffix, last_rows) : suffix;

    for (std::size_t h = 0; h < heads; ++h) {
      Tensor keys = ad::matmul(normed, layer.key[h]);
      Tensor values = ad::matmul(normed, layer.value[h]);
      if (l > 0) {
        const Tensor prefix_keys = ad::matmul(prefix_normed, layer.key[h]);
        const Tensor prefix_values = ad::matmul(prefix_normed, layer.value[h]);
        if (!last) {
          const Tensor head = ad::causal_attention(
              ad::matmul(prefix_normed, layer.query[h]), prefix_keys, prefix_values);
          next_prefix = ad::add(next_prefix, ad::matmul(head, layer.output[h]));
        }
        const Tensor k_parts[] = {prefix_keys, keys};
        const Tensor v_parts[] = {prefix_values, values};
        keys = ad::concat_rows(k_parts);
        values = ad::concat_rows(v_parts);
      }
      const Tensor head =
          ad::masked_attention(ad::matmul(query_rows, layer.query[h]), keys, values,
                               last ? visible_last : visible_all);
      out = ad::add(out, ad::matmul(head, layer.output[h]));
    }
    suffix = mlp(out, layer);
    if (l > 0 && !last) prefix = mlp(next_prefix, layer);
  }

  const Tensor normed =
      ad::layer_norm(suffix, weights_.final_gain, weights_.final_bias);
  return ad::matmul(normed, head_);
}

Backbone init_backbone(const BackboneConfig& config) { return Backbone(config); }

}  // namespace metaprompt
