#include "mtlta/encoder.hpp"

#include <cmath>
#include <string>

#include "mtlta/errors.hpp"

namespace mtlta {
namespace {

constexpr double kInitRange = 0.05;

std::string layer_name(std::size_t layer, const char* suffix) { return "layer" + std::to_string(layer) + "." + suffix; }

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void add_linear(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(prefix + ".weight", uniform_tensor({in, out}, kInitRange / std::sqrt(static_cast<double>(in)), rng));
  ps.add(prefix + ".bias", Tensor::zeros({out}, true));
}

void add_norm(ParamSet& ps, const std::string& prefix, std::size_t width) {
  ps.add(prefix + ".gain", Tensor::full({width}, 1.0, true));
  ps.add(prefix + ".bias", Tensor::zeros({width}, true));
}

Tensor linear(const Tensor& x, const ParamSet& ps, const std::string& prefix) {
  return add_row(matmul(x, ps.get(prefix + ".weight")), ps.get(prefix + ".bias"));
}

struct Forward {
  Tensor sequence;
  std::vector<std::vector<Tensor>> attention;
};

Forward run(std::span<const std::size_t> ids, const std::vector<bool>& mask, const ParamSet& ps,
            const EncoderConfig& cfg, bool keep_attention) {
  const std::size_t len = ids.size();
  if (len == 0) throw ShapeError("encode: empty sequence");
  if (len > cfg.max_len) {
    throw ShapeError("encode: sequence of " + std::to_string(len) + " tokens exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  if (!mask.empty() && mask.size() != len) {
    throw ShapeError("encode: mask has " + std::to_string(mask.size()) + " entries for " + std::to_string(len) +
                     " tokens");
  }
  bool any_valid = mask.empty();
  for (bool m : mask) any_valid = any_valid || m;
  if (!any_valid) throw ShapeError("encode: no valid positions");
  for (std::size_t id : ids) {
    if (id >= cfg.vocab_size) {
      throw IndexError("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }

  std::vector<std::size_t> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = i;
  Tensor x = add(embedding_lookup(ps.get("embed.token"), ids), embedding_lookup(ps.get("embed.position"), positions));

  Forward out;
  const std::size_t dh = cfg.hidden / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Tensor q = linear(x, ps, layer_name(l, "attn.q"));
    Tensor k = linear(x, ps, layer_name(l, "attn.k"));
    Tensor v = linear(x, ps, layer_name(l, "attn.v"));
    Tensor heads;
    std::vector<Tensor> maps;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Tensor qh = slice_last(q, h * dh, (h + 1) * dh);
      Tensor kh = slice_last(k, h * dh, (h + 1) * dh);
      Tensor vh = slice_last(v, h * dh, (h + 1) * dh);
      Tensor probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
      if (keep_attention) maps.push_back(probs);
      Tensor head = matmul(probs, vh);
      heads = h == 0 ? head : concat(heads, head);
    }
    if (keep_attention) out.attention.push_back(std::move(maps));
    Tensor attn = linear(heads, ps, layer_name(l, "attn.out"));
    x = layer_norm(add(x, attn), ps.get(layer_name(l, "norm1.gain")), ps.get(layer_name(l, "norm1.bias")));
    Tensor ffn = linear(relu(linear(x, ps, layer_name(l, "ffn.in"))), ps, layer_name(l, "ffn.out"));
    x = layer_norm(add(x, ffn), ps.get(layer_name(l, "norm2.gain")), ps.get(layer_name(l, "norm2.bias")));
  }
  out.sequence = x;
  return out;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("encoder.vocab_size", "must be at least 2 (PAD and UNK)");
  if (hidden == 0) throw ConfigError("encoder.hidden", "must be positive");
  if (heads == 0) throw ConfigError("encoder.heads", "must be positive");
  if (hidden % heads != 0) {
    throw ConfigError("encoder.heads", "hidden " + std::to_string(hidden) + " is not divisible by heads " +
                                           std::to_string(heads));
  }
  if (max_len < 2) throw ConfigError("encoder.max_len", "must be at least 2");
  if (ffn_mult == 0) throw ConfigError("encoder.ffn_mult", "must be positive");
}

std::size_t EncoderConfig::param_count() const {
  const std::size_t h = hidden, f = ffn_mult * hidden;
  const std::size_t per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
  return vocab_size * h + max_len * h + layers * per_layer;
}

ParamSet init_encoder_params(const EncoderConfig& config, Rng& rng) {
  config.validate();
  ParamSet ps;
  const std::size_t h = config.hidden;
  ps.add("embed.token", uniform_tensor({config.vocab_size, h}, kInitRange, rng));
  ps.add("embed.position", uniform_tensor({config.max_len, h}, kInitRange, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    add_linear(ps, layer_name(l, "attn.q"), h, h, rng);
    add_linear(ps, layer_name(l, "attn.k"), h, h, rng);
    add_linear(ps, layer_name(l, "attn.v"), h, h, rng);
    add_linear(ps, layer_name(l, "attn.out"), h, h, rng);
    add_norm(ps, layer_name(l, "norm1"), h);
    add_linear(ps, layer_name(l, "ffn.in"), h, config.ffn_mult * h, rng);
    add_linear(ps, layer_name(l, "ffn.out"), config.ffn_mult * h, h, rng);
    add_norm(ps, layer_name(l, "norm2"), h);
  }
  return ps;
}

EncoderOutput encode(std::span<const std::size_t> token_ids, const std::vector<bool>& mask, const ParamSet& params,
                     const EncoderConfig& config) {
  Forward f = run(token_ids, mask, params, config, false);
  EncoderOutput out;
  out.latent = concat(max_pool(f.sequence, mask), mean_pool(f.sequence, mask));
  out.sequence = std::move(f.sequence);
  return out;
}

std::vector<std::vector<Tensor>> attention_maps(std::span<const std::size_t> token_ids, const std::vector<bool>& mask,
                                                const ParamSet& params, const EncoderConfig& config) {
  return run(token_ids, mask, params, config, true).attention;
}

}  // namespace mtlta
