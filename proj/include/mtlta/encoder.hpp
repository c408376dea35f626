#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtlta/params.hpp"
#include "mtlta/rng.hpp"
#include "mtlta/tensor.hpp"

namespace mtlta {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_len = 64;
  std::size_t ffn_mult = 4;

  std::size_t latent_dim() const { return 2 * hidden; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Closed-form parameter count.
  std::size_t param_count() const;
};

struct EncoderOutput {
  Tensor sequence;  // [len x hidden]
  Tensor latent;    // [2*hidden] = max_pool ++ mean_pool
};

/// Embeddings ~ U(-0.05, 0.05); linear weights ~ U(-0.05, 0.05) / sqrt(fan_in);
/// biases 0; layer-norm gain 1 and bias 0.
ParamSet init_encoder_params(const EncoderConfig& config, Rng& rng);

/// Token + learned position embeddings, then `layers` post-norm transformer
/// blocks, then masked max and mean pooling. An empty mask means every position is valid.
EncoderOutput encode(std::span<const std::size_t> token_ids, const std::vector<bool>& mask, const ParamSet& params,
                     const EncoderConfig& config);

/// Attention probabilities of every head in every layer, for inspection: [layer][head] -> [len x len].
std::vector<std::vector<Tensor>> attention_maps(std::span<const std::size_t> token_ids, const std::vector<bool>& mask,
                                                const ParamSet& params, const EncoderConfig& config);

}  // namespace mtlta
