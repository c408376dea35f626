#include "mtlta/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtlta/errors.hpp"

namespace mtlta {
namespace {

constexpr std::string_view kCheckpointMagic = "mtlta-checkpoint";
constexpr int kCheckpointVersion = 1;

TaskHead make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 0.05 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

TaskHead clone_pair(const TaskHead& h) { return {h.weight.clone(), h.bias.clone()}; }

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::stl:
      return "stl";
    case Variant::mtl:
      return "mtl";
    case Variant::mtl_tai:
      return "mtl-tai";
    case Variant::mtl_te:
      return "mtl-te";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "stl") return Variant::stl;
  if (name == "mtl") return Variant::mtl;
  if (name == "mtl-tai") return Variant::mtl_tai;
  if (name == "mtl-te") return Variant::mtl_te;
  throw ConfigError("variant", "unknown variant '" + std::string(name) + "' (stl, mtl, mtl-tai, mtl-te)");
}

int variant_rank(Variant v) { return static_cast<int>(v); }

TEBlock make_teb(std::size_t latent_dim, std::size_t num_tasks, std::size_t units, Rng& rng) {
  if (units < 1 || units > 3) {
    throw ConfigError("teb_units", "must be 1, 2 or 3, got " + std::to_string(units));
  }
  TEBlock block;
  block.latent_dim = latent_dim;
  block.num_tasks = num_tasks;
  for (std::size_t i = 0; i < units; ++i) {
    block.units.push_back(make_linear(i == 0 ? latent_dim + num_tasks : latent_dim, latent_dim, rng));
  }
  return block;
}

Tensor one_hot_tiv(std::size_t task_index, std::size_t num_tasks) {
  if (task_index >= num_tasks) {
    throw IndexError("task index " + std::to_string(task_index) + " outside " + std::to_string(num_tasks) + " tasks");
  }
  std::vector<double> v(num_tasks, 0.0);
  v[task_index] = 1.0;
  return Tensor::from({num_tasks}, std::move(v));
}

Tensor teb_forward(const Tensor& latent, const Tensor& tiv, const TEBlock& block) {
  const std::size_t lw = latent.shape().back(), tw = tiv.shape().back();
  if (lw != block.latent_dim || tw != block.num_tasks) {
    throw ShapeError("teb_forward: block expects latent " + std::to_string(block.latent_dim) + " and TIV " +
                     std::to_string(block.num_tasks) + ", got " + shape_string(latent.shape()) + " and " +
                     shape_string(tiv.shape()));
  }
  Tensor h = concat(latent, tiv);
  for (const auto& unit : block.units) h = relu(add_row(matmul(h, unit.weight), unit.bias));
  return h;
}

void ModelConfig::validate(std::size_t num_tasks) const {
  encoder.validate();
  if (variant == Variant::stl && num_tasks != 1) {
    throw ConfigError("tasks", "stl requires exactly one task, got " + std::to_string(num_tasks));
  }
  if (variant != Variant::stl && num_tasks < 2) {
    throw ConfigError("tasks", std::string(variant_name(variant)) + " requires at least two tasks, got " +
                                   std::to_string(num_tasks));
  }
  if (variant == Variant::mtl_te && (teb_units < 1 || teb_units > 3)) {
    throw ConfigError("teb_units", "must be 1, 2 or 3, got " + std::to_string(teb_units));
  }
}

Model::Model(ModelConfig config, TaskRegistry tasks, Rng& rng) : config_(std::move(config)), tasks_(std::move(tasks)) {
  config_.validate(tasks_.size());
  encoder_ = init_encoder_params(config_.encoder, rng);
  const std::size_t latent = config_.encoder.latent_dim();
  if (config_.variant == Variant::mtl_te) teb_ = make_teb(latent, tasks_.size(), config_.teb_units, rng);
  for (const auto& t : tasks_.tasks()) heads_.push_back(make_linear(latent, t.num_classes(), rng));
}

const TaskHead& Model::head(std::size_t task_index) const {
  tasks_.at(task_index);
  return heads_[task_index];
}

Tensor Model::forward(const std::vector<std::vector<std::size_t>>& batch, std::size_t task_index, Rng* dropout_rng,
                      double dropout_p) const {
  const TaskHead& h = head(task_index);
  if (batch.empty()) throw ShapeError("forward: empty batch");
  std::vector<Tensor> latents;
  latents.reserve(batch.size());
  for (const auto& ids : batch) latents.push_back(encode(ids, {}, encoder_, config_.encoder).latent);
  Tensor z = stack_rows(latents);
  if (config_.variant == Variant::mtl_te) {
    const std::size_t n = tasks_.size();
    std::vector<double> tiv(batch.size() * n, 0.0);
    for (std::size_t b = 0; b < batch.size(); ++b) tiv[b * n + task_index] = 1.0;
    z = teb_forward(z, Tensor::from({batch.size(), n}, std::move(tiv)), teb_);
  }
  if (dropout_rng != nullptr) z = dropout(z, dropout_p, true, *dropout_rng);
  return add_row(matmul(z, h.weight), h.bias);
}

std::vector<Tensor> Model::trainable_params(std::size_t task_index) const {
  const TaskHead& h = head(task_index);
  std::vector<Tensor> out = encoder_.tensors();
  if (config_.variant == Variant::mtl_te) {
    for (const auto& u : teb_.units) {
      out.push_back(u.weight);
      out.push_back(u.bias);
    }
  }
  out.push_back(h.weight);
  out.push_back(h.bias);
  return out;
}

ParamSet Model::all_params() const {
  ParamSet ps;
  for (const auto& [name, t] : encoder_.entries()) ps.add("encoder." + name, t);
  if (config_.variant == Variant::mtl_te) {
    for (std::size_t i = 0; i < teb_.units.size(); ++i) {
      ps.add("teb.unit" + std::to_string(i) + ".weight", teb_.units[i].weight);
      ps.add("teb.unit" + std::to_string(i) + ".bias", teb_.units[i].bias);
    }
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    ps.add("head." + tasks_.at(i).name + ".weight", heads_[i].weight);
    ps.add("head." + tasks_.at(i).name + ".bias", heads_[i].bias);
  }
  return ps;
}

Model Model::clone() const {
  Model m;
  m.config_ = config_;
  m.tasks_ = tasks_;
  for (const auto& [name, t] : encoder_.entries()) m.encoder_.add(name, t.clone());
  for (const auto& h : heads_) m.heads_.push_back(clone_pair(h));
  m.teb_.latent_dim = teb_.latent_dim;
  m.teb_.num_tasks = teb_.num_tasks;
  for (const auto& u : teb_.units) m.teb_.units.push_back(clone_pair(u));
  return m;
}

void Model::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const auto& e = config_.encoder;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "variant " << variant_name(config_.variant) << '\n';
  out << "encoder " << e.vocab_size << ' ' << e.hidden << ' ' << e.layers << ' ' << e.heads << ' ' << e.max_len << ' '
      << e.ffn_mult << '\n';
  out << "teb_units " << (config_.variant == Variant::mtl_te ? config_.teb_units : 0) << '\n';
  out << "tasks " << tasks_.size() << '\n';
  for (const auto& t : tasks_.tasks()) out << t.name << '\n';
  all_params().write(out);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

void Model::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  const std::string src = path.string();
  std::string magic, key, variant;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw DataError(src + ": not a checkpoint");
  if (version != kCheckpointVersion) throw DataError(src + ": unsupported checkpoint version");
  in >> key >> variant;
  if (key != "variant" || parse_variant(variant) != config_.variant) {
    throw DataError(src + ": checkpoint variant '" + variant + "' does not match model");
  }
  EncoderConfig e;
  in >> key >> e.vocab_size >> e.hidden >> e.layers >> e.heads >> e.max_len >> e.ffn_mult;
  const auto& c = config_.encoder;
  if (key != "encoder" || e.vocab_size != c.vocab_size || e.hidden != c.hidden || e.layers != c.layers ||
      e.heads != c.heads || e.max_len != c.max_len || e.ffn_mult != c.ffn_mult) {
    throw DataError(src + ": encoder shape does not match model");
  }
  std::size_t units = 0, n = 0;
  in >> key >> units;
  in >> key >> n;
  if (key != "tasks" || n != tasks_.size()) throw DataError(src + ": task count does not match model");
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < n; ++i) {
    std::getline(in, line);
    if (line != tasks_.at(i).name) throw DataError(src + ": task " + std::to_string(i) + " is '" + line + "'");
  }
  all_params().read(in, src);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected a matrix, got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  const auto v = logits.values();
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 1; c < cols; ++c)
      if (v[r * cols + c] > v[r * cols + out[r]]) out[r] = c;
  }
  return out;
}

std::vector<std::size_t> predict(const Model& model, const std::vector<std::vector<std::size_t>>& inputs,
                                 std::size_t task_index, std::size_t chunk) {
  NoGradGuard guard;
  std::vector<std::size_t> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += chunk) {
    std::size_t end = std::min(inputs.size(), start + chunk);
    std::vector<std::vector<std::size_t>> part(inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                               inputs.begin() + static_cast<std::ptrdiff_t>(end));
    auto preds = argmax_rows(model.forward(part, task_index));
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

}  // namespace mtlta
