#include "mtlta/gradcheck_suite.hpp"

#include "mtlta/gradcheck.hpp"
#include "mtlta/models.hpp"

namespace mtlta {

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

// Values bounded away from zero, so relu and max ties stay off their kinks.
Tensor off_kink(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.2, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar probe: random weighted sum, so every output coordinate gets a distinct gradient.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(multiply(y, w)); }

double check_params(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  return gradcheck_params(f, params);
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradcheckEntry> out;
  auto op = [&](const std::string& name, double err) { out.push_back({name, err, kOpGradTolerance}); };

  {
    Tensor a = uniform({3, 4}, rng), b = uniform({4, 2}, rng), w = uniform({3, 2}, rng);
    op("matmul", check_params([&] { return probe(matmul(a, b), w); }, {a, b}));
  }
  {
    Tensor x = uniform({3, 4}, rng), w = uniform({4, 3}, rng);
    op("transpose", check_params([&] { return probe(transpose(x), w); }, {x}));
  }
  {
    Tensor x = uniform({3, 4}, rng), w = uniform({2, 6}, rng);
    op("reshape", check_params([&] { return probe(reshape(x, {2, 6}), w); }, {x}));
  }
  {
    Tensor a = uniform({2, 3}, rng), b = uniform({2, 3}, rng), w = uniform({2, 3}, rng);
    op("add", check_params([&] { return probe(add(a, b), w); }, {a, b}));
    op("multiply", check_params([&] { return probe(multiply(a, b), w); }, {a, b}));
    op("scale", check_params([&] { return probe(scale(a, -1.7), w); }, {a}));
  }
  {
    Tensor x = uniform({3, 4}, rng), bias = uniform({4}, rng), w = uniform({3, 4}, rng);
    op("add_row", check_params([&] { return probe(add_row(x, bias), w); }, {x, bias}));
  }
  {
    Tensor x = uniform({2, 5}, rng);
    op("sum", check_params([&] { return sum(x); }, {x}));
  }
  {
    Tensor x = off_kink({3, 4}, rng), w = uniform({3, 4}, rng);
    op("relu", check_params([&] { return probe(relu(x), w); }, {x}));
  }
  {
    Tensor x = uniform({3, 5}, rng, -2, 2), w = uniform({3, 5}, rng);
    const std::vector<bool> mask = {true, false, true, true, false};
    op("softmax_rows", check_params([&] { return probe(softmax_rows(x, mask), w); }, {x}));
  }
  {
    Tensor x = uniform({4, 3}, rng, -2, 2);
    const std::vector<std::size_t> labels = {2, 0, 1, 2};
    op("softmax_cross_entropy", check_params([&] { return softmax_cross_entropy(x, labels); }, {x}));
  }
  {
    Tensor x = off_kink({5, 3}, rng), w = uniform({3}, rng);
    const std::vector<bool> mask = {true, true, false, true, false};
    op("mean_pool", check_params([&] { return probe(mean_pool(x, mask), w); }, {x}));
    op("max_pool", check_params([&] { return probe(max_pool(x, mask), w); }, {x}));
  }
  {
    Tensor a = uniform({2, 3}, rng), b = uniform({2, 2}, rng), w = uniform({2, 5}, rng);
    op("concat", check_params([&] { return probe(concat(a, b), w); }, {a, b}));
    Tensor w2 = uniform({2, 2}, rng);
    op("slice_last", check_params([&] { return probe(slice_last(a, 1, 3), w2); }, {a}));
  }
  {
    Tensor r0 = uniform({3}, rng), r1 = uniform({3}, rng), w = uniform({2, 3}, rng);
    op("stack_rows", check_params(
                         [&] {
                           const Tensor rows[] = {r0, r1};
                           return probe(stack_rows(rows), w);
                         },
                         {r0, r1}));
  }
  {
    Tensor x = uniform({3, 4}, rng), w = uniform({3, 4}, rng);
    op("dropout", check_params(
                      [&] {
                        Rng mask_rng(seed + 17);  // same mask on every evaluation
                        return probe(dropout(x, 0.3, true, mask_rng), w);
                      },
                      {x}));
  }
  {
    Tensor table = uniform({6, 3}, rng), w = uniform({4, 3}, rng);
    const std::vector<std::size_t> ids = {4, 1, 4, 0};
    op("embedding_lookup", check_params([&] { return probe(embedding_lookup(table, ids), w); }, {table}));
  }
  {
    Tensor x = uniform({3, 5}, rng, -2, 2), gain = uniform({5}, rng, 0.5, 1.5), bias = uniform({5}, rng);
    Tensor w = uniform({3, 5}, rng);
    op("layer_norm", check_params([&] { return probe(layer_norm(x, gain, bias), w); }, {x, gain, bias}));
  }

  for (auto v : {Variant::stl, Variant::mtl, Variant::mtl_tai, Variant::mtl_te}) {
    ModelConfig c;
    c.variant = v;
    c.encoder.vocab_size = 12;
    c.encoder.hidden = 4;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
    c.encoder.max_len = 8;
    c.encoder.ffn_mult = 2;
    c.teb_units = 2;
    std::vector<TaskSpec> specs;
    const std::size_t n_tasks = v == Variant::stl ? 1 : 2;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      specs.push_back({"t" + std::to_string(t), "task " + std::to_string(t), {"no", "yes"}, std::nullopt,
                       Metric::accuracy});
    }
    Model model(c, TaskRegistry(specs), rng);
    // Larger-than-init weights so attention, layer norm and the TEB are exercised away from flat regions.
    for (auto& [name, t] : model.all_params().entries()) {
      Tensor h = t;
      for (auto& x : h.mutable_values()) x += rng.uniform(-0.3, 0.3);
    }
    const std::size_t task = n_tasks - 1;
    const std::vector<std::vector<std::size_t>> batch = {{2, 5, 9}, {3, 4}, {7, 2, 11, 6}};
    const std::vector<std::size_t> labels = {1, 0, 1};
    const double err = check_params([&] { return softmax_cross_entropy(model.forward(batch, task), labels); },
                                    model.trainable_params(task));
    out.push_back({"model:" + std::string(variant_name(v)), err, kModelGradTolerance});
  }
  return out;
}

}  // namespace mtlta
