#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtlta/errors.hpp"
#include "mtlta/metrics.hpp"
#include "mtlta/training.hpp"
#include "test_util.hpp"

using namespace mtlta;
using mtlta::testing::to_vector;

namespace {

TaskSpec binary_task(const std::string& name) {
  return {name, name + " detection", {"no", "yes"}, std::nullopt, Metric::accuracy};
}

ModelConfig small_config(Variant v, std::size_t vocab = 24) {
  ModelConfig c;
  c.variant = v;
  c.encoder.vocab_size = vocab;
  c.encoder.hidden = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.max_len = 12;
  c.encoder.ffn_mult = 2;
  return c;
}

// Label 1 iff token 2 appears; token 3 marks the negatives. Fillers are 4..23.
EncodedSet separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  EncodedSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    std::vector<std::size_t> ids(4 + rng.below(5));
    for (auto& id : ids) id = 4 + rng.below(20);
    ids[rng.below(ids.size())] = y == 1 ? 2 : 3;
    s.inputs.push_back(ids);
    s.labels.push_back(y);
  }
  return s;
}

OptimConfig no_dropout(double lr = 1e-2, std::size_t epochs = 5) {
  OptimConfig c;
  c.lr_peak = lr;
  c.epochs = epochs;
  c.batch_size = 8;
  c.dropout_p = 0.0;
  return c;
}

}  // namespace

TEST_CASE("adamw leaves parameters alone for zero gradient and no decay") {
  auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  p.zero_grad();
  OptimConfig c;
  c.weight_decay = 0.0;
  OptimState s;
  std::vector<Tensor> ps = {p};
  adamw_step(ps, s, 1e-3, c);
  CHECK(to_vector(p) == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adamw single unit-gradient step moves by lr") {
  auto p = Tensor::from({1}, {0.25}, true);
  p.accumulate_grad(std::vector<double>{1.0});
  OptimConfig c;
  c.eps = 0.0;
  c.weight_decay = 0.0;
  OptimState s;
  std::vector<Tensor> ps = {p};
  adamw_step(ps, s, 0.01, c);
  CHECK(p.item() == doctest::Approx(0.25 - 0.01).epsilon(1e-14));
}

TEST_CASE("adamw decoupled decay shrinks by 1 - lr * wd") {
  auto p = Tensor::from({2}, {3.0, -1.5}, true);
  p.zero_grad();
  OptimConfig c;
  c.weight_decay = 0.1;
  OptimState s;
  std::vector<Tensor> ps = {p};
  adamw_step(ps, s, 0.5, c);
  CHECK(p.at(0) == doctest::Approx(3.0 * (1 - 0.05)).epsilon(1e-14));
  CHECK(p.at(1) == doctest::Approx(-1.5 * (1 - 0.05)).epsilon(1e-14));
}

TEST_CASE("adamw two-step trace matches bias-corrected Adam by hand") {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
  auto p = Tensor::from({1}, {1.0}, true);
  OptimConfig c;
  c.weight_decay = 0.0;
  OptimState s;
  std::vector<Tensor> ps = {p};
  const double g1 = 0.5, g2 = -2.0;

  p.zero_grad();
  p.accumulate_grad(std::vector<double>{g1});
  adamw_step(ps, s, lr, c);
  p.zero_grad();
  p.accumulate_grad(std::vector<double>{g2});
  adamw_step(ps, s, lr, c);

  double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1;
  double x = 1.0 - lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
  m = b1 * m + (1 - b1) * g2;
  v = b2 * v + (1 - b2) * g2 * g2;
  x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
  CHECK(p.item() == doctest::Approx(x).epsilon(1e-14));
  const auto* slot = s.find(p);
  REQUIRE(slot != nullptr);
  CHECK(slot->t == 2);
  CHECK(slot->v[0] >= 0.0);
}

TEST_CASE("linear decay schedule") {
  CHECK(lr_at(0, 100, 1e-3) == 1e-3);
  CHECK(lr_at(100, 100, 1e-3) == 0.0);
  CHECK(lr_at(50, 100, 1e-3) == doctest::Approx(5e-4));
  CHECK_THROWS(lr_at(101, 100, 1e-3));
  double prev = lr_at(0, 37, 2e-5);
  for (std::size_t s = 1; s <= 37; ++s) {
    const double cur = lr_at(s, 37, 2e-5);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("optimizer config validation") {
  OptimConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimConfig{};
  c.lr_peak = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimConfig{};
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_schedule("proportional") == SchedulePolicy::proportional);
  CHECK_THROWS_AS(parse_schedule("random"), ConfigError);
}

TEST_CASE("best epoch selection") {
  auto hist = [](std::vector<double> values) {
    std::vector<EpochRecord> h;
    for (std::size_t e = 0; e < values.size(); ++e) {
      h.push_back({e, 0, "accuracy", values[e], 0.0});
      h.push_back({e, 1, "accuracy", 1.0 - values[e], 0.0});
    }
    return h;
  };
  CHECK(select_best_epoch(hist({0.1, 0.2, 0.3}), 0) == 2);
  CHECK(select_best_epoch(hist({0.8, 0.9, 0.9}), 0) == 1);
  CHECK(select_best_epoch(hist({0.8, 0.9, 0.9}), 1) == 0);
  CHECK_THROWS(select_best_epoch(hist({0.5}), 4));

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + rng.below(12));
    for (auto& x : v) x = static_cast<double>(rng.below(5)) / 4.0;
    std::size_t expected = 0;
    for (std::size_t e = 1; e < v.size(); ++e)
      if (v[e] > v[expected]) expected = e;
    CHECK(select_best_epoch(hist(v), 0) == expected);
  }
}

TEST_CASE("validation split") {
  auto [train, val] = split_validation(100, 0.1, 4);
  CHECK(val.size() == 10);
  CHECK(train.size() == 90);
  auto [t2, v2] = split_validation(5, 0.1, 4);
  CHECK(v2.size() == 1);
  auto again = split_validation(100, 0.1, 4);
  CHECK(again.second == val);
}

TEST_CASE("head isolation across many steps on one task") {
  Rng rng(2);
  Model m(small_config(Variant::mtl_te), TaskRegistry({binary_task("a"), binary_task("b")}), rng);
  auto head_b = to_vector(m.head(1).weight);
  auto bias_b = to_vector(m.head(1).bias);
  auto enc0 = to_vector(m.encoder_params().get("embed.token"));
  auto teb0 = to_vector(m.teb()->units[0].weight);
  auto data = separable(32, 3);
  OptimState state;
  auto cfg = no_dropout();
  for (int step = 0; step < 20; ++step) {
    const std::size_t b = static_cast<std::size_t>(step % 4) * 8;
    std::vector<std::vector<std::size_t>> in(data.inputs.begin() + b, data.inputs.begin() + b + 8);
    std::vector<std::size_t> lab(data.labels.begin() + b, data.labels.begin() + b + 8);
    train_step(m, state, in, lab, 0, 1e-2, cfg, nullptr);
  }
  CHECK(to_vector(m.head(1).weight) == head_b);
  CHECK(to_vector(m.head(1).bias) == bias_b);
  CHECK(to_vector(m.encoder_params().get("embed.token")) != enc0);
  CHECK(to_vector(m.teb()->units[0].weight) != teb0);
}

TEST_CASE("joint training is deterministic and logs every epoch") {
  auto run = [] {
    Rng rng(4);
    Model m(small_config(Variant::mtl), TaskRegistry({binary_task("a"), binary_task("b")}), rng);
    std::vector<TaskData> data = {{separable(24, 5), separable(6, 6)}, {separable(40, 7), separable(6, 8)}};
    auto cfg = no_dropout(1e-2, 3);
    cfg.dropout_p = 0.3;
    return train_joint(m, data, cfg, SchedulePolicy::round_robin, 9);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.steps.size() == b.steps.size());
  // 3 + 5 batches per epoch, 3 epochs.
  CHECK(a.steps.size() == 24);
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].loss == b.steps[i].loss);
    CHECK(a.steps[i].task == b.steps[i].task);
  }
  CHECK(a.steps.front().lr == 1e-2);
  CHECK(a.history.size() == 6);
  CHECK(a.best_models.size() == 2);
  // Round robin alternates while both tasks have batches left.
  CHECK(a.steps[0].task == 0);
  CHECK(a.steps[1].task == 1);
  CHECK(a.steps[6].task == 1);
  CHECK(a.steps[7].task == 1);
}

TEST_CASE("proportional schedule runs every batch once per epoch") {
  Rng rng(5);
  Model m(small_config(Variant::mtl), TaskRegistry({binary_task("a"), binary_task("b")}), rng);
  std::vector<TaskData> data = {{separable(16, 1), {}}, {separable(48, 2), {}}};
  auto res = train_joint(m, data, no_dropout(1e-2, 2), SchedulePolicy::proportional, 3);
  std::size_t a = 0, b = 0;
  for (const auto& s : res.steps) (s.task == 0 ? a : b)++;
  CHECK(a == 4);
  CHECK(b == 12);
  CHECK(res.steps.back().lr > 0.0);
}

TEST_CASE("a head moves when its task is scheduled") {
  Rng rng(6);
  Model m(small_config(Variant::mtl), TaskRegistry({binary_task("a"), binary_task("b")}), rng);
  auto head_b = to_vector(m.head(1).weight);
  // Task b's only batch is consumed in the first round; all later steps belong to task a.
  std::vector<TaskData> data = {{separable(16, 1), {}}, {separable(4, 2), {}}};
  auto cfg = no_dropout(1e-2, 1);
  auto res = train_joint(m, data, cfg, SchedulePolicy::round_robin, 3);
  REQUIRE(res.steps.size() == 3);
  CHECK(res.steps[1].task == 1);
  CHECK(to_vector(m.head(1).weight) != head_b);
}

TEST_CASE("loss on a fixed batch decreases over the first 10 steps") {
  int decreasing = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Model m(small_config(Variant::stl), TaskRegistry({binary_task("a")}), rng);
    auto data = separable(16, 100 + seed);
    OptimState state;
    auto cfg = no_dropout(1e-3);
    double first = train_step(m, state, data.inputs, data.labels, 0, 1e-3, cfg, nullptr);
    double last = first;
    for (int s = 1; s < 10; ++s) last = train_step(m, state, data.inputs, data.labels, 0, 1e-3, cfg, nullptr);
    decreasing += last < first ? 1 : 0;
  }
  CHECK(decreasing >= 4);
}

TEST_CASE("two identical tasks trained jointly converge to the same accuracy") {
  double gap = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Model m(small_config(Variant::mtl), TaskRegistry({binary_task("a"), binary_task("b")}), rng);
    auto train = separable(48, 10 + seed);
    auto test = separable(40, 50 + seed);
    std::vector<TaskData> data = {{train, {}}, {train, {}}};
    train_joint(m, data, no_dropout(1e-2, 8), SchedulePolicy::round_robin, seed);
    const double a0 = accuracy(predict(m, test.inputs, 0), test.labels);
    const double a1 = accuracy(predict(m, test.inputs, 1), test.labels);
    gap += (a0 - a1) / 5.0;
  }
  CHECK(std::abs(gap) <= 0.02);
}

TEST_CASE("train_joint rejects mismatched inputs") {
  Rng rng(7);
  Model m(small_config(Variant::mtl), TaskRegistry({binary_task("a"), binary_task("b")}), rng);
  std::vector<TaskData> one = {{separable(8, 1), {}}};
  CHECK_THROWS_AS(train_joint(m, one, no_dropout(), SchedulePolicy::round_robin, 0), ConfigError);
  std::vector<TaskData> empty = {{separable(8, 1), {}}, {}};
  CHECK_THROWS_AS(train_joint(m, empty, no_dropout(), SchedulePolicy::round_robin, 0), DataError);
}
