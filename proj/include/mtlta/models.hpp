#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

#include "mtlta/encoder.hpp"
#include "mtlta/params.hpp"
#include "mtlta/rng.hpp"
#include "mtlta/task.hpp"
#include "mtlta/tensor.hpp"

namespace mtlta {

enum class Variant { stl, mtl, mtl_tai, mtl_te };

/// "stl", "mtl", "mtl-tai", "mtl-te".
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
/// Report order: STL, MTL, MTL-TAI, MTL-TE.
int variant_rank(Variant v);

struct TaskHead {
  Tensor weight;  // [latent x classes]
  Tensor bias;    // [classes]
};

/// Learning units: each a linear map followed by ReLU. The first takes latent ++ TIV.
struct TEBlock {
  std::vector<TaskHead> units;  // reuses the weight/bias pair
  std::size_t latent_dim = 0;
  std::size_t num_tasks = 0;
};

/// Throws ConfigError unless 1 <= units <= 3.
TEBlock make_teb(std::size_t latent_dim, std::size_t num_tasks, std::size_t units, Rng& rng);

/// Zeros with a single 1 at task_index.
Tensor one_hot_tiv(std::size_t task_index, std::size_t num_tasks);

/// h0 = latent ++ tiv, h_i = relu(h_{i-1} W_i + b_i). Accepts a single latent
/// vector with a TIV vector, or a [batch x latent] matrix with a [batch x N] TIV matrix.
Tensor teb_forward(const Tensor& latent, const Tensor& tiv, const TEBlock& block);

struct ModelConfig {
  Variant variant = Variant::mtl;
  EncoderConfig encoder;
  std::size_t teb_units = 1;

  void validate(std::size_t num_tasks) const;
};

/// Shared encoder with one linear head per task, plus the TEB for MTL-TE.
class Model {
 public:
  Model(ModelConfig config, TaskRegistry tasks, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const TaskRegistry& tasks() const { return tasks_; }
  Variant variant() const { return config_.variant; }

  /// Logits [batch x classes] for a batch of token-id sequences belonging to one task.
  /// MTL-TAI sequences must already carry the TD prefix. Passing a dropout Rng
  /// selects training mode: dropout with probability `dropout_p` is applied to the head input.
  Tensor forward(const std::vector<std::vector<std::size_t>>& batch, std::size_t task_index,
                 Rng* dropout_rng = nullptr, double dropout_p = 0.0) const;

  /// Encoder, TEB (MTL-TE) and the head of `task_index`; other heads are excluded.
  std::vector<Tensor> trainable_params(std::size_t task_index) const;
  /// Every parameter with a qualified name, in checkpoint order.
  ParamSet all_params() const;

  const ParamSet& encoder_params() const { return encoder_; }
  const TaskHead& head(std::size_t task_index) const;
  const TEBlock* teb() const { return config_.variant == Variant::mtl_te ? &teb_ : nullptr; }

  /// Deep copy with independent parameter storage.
  Model clone() const;

  void save(const std::filesystem::path& path) const;
  /// Reads a checkpoint; variant, encoder shape and task order must match this model.
  void load(const std::filesystem::path& path);

 private:
  Model() = default;
  ModelConfig config_;
  TaskRegistry tasks_;
  ParamSet encoder_;
  std::vector<TaskHead> heads_;
  TEBlock teb_;
};

/// Row-wise argmax; ties go to the lowest class index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

/// Predicted classes in eval mode without recording a graph, `chunk` sequences at a time.
std::vector<std::size_t> predict(const Model& model, const std::vector<std::vector<std::size_t>>& inputs,
                                 std::size_t task_index, std::size_t chunk = 256);

}  // namespace mtlta
