#include <cmath>
#include <vector>

#include "cwm/error.hpp"
#include "cwm/ops.hpp"
#include "cwm/optim.hpp"
#include "cwm/rng.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "op_suite.hpp"

using namespace cwm;
using namespace cwm::ad;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("x^2 at 3 has gradient 6") {
  GraphFn f = [](Tape&, std::span<const Var> p, std::span<const Var>) { return sum(mul(p[0], p[0])); };
  const std::vector<Tensor> params = {Tensor({1}, 3.0)};
  const auto e = evaluate_with_gradients(f, params, {});
  CHECK(e.loss == 9.0);
  CHECK(e.grads[0][0] == 6.0);
}

TEST_CASE("linear + leaky relu + mean matches finite differences") {
  GraphFn f = [](Tape&, std::span<const Var> p, std::span<const Var> in) {
    return mean(leaky_relu(linear(in[0], p[0], p[1])));
  };
  const std::vector<Tensor> params = {random_tensor({4, 5}, 1), random_tensor({4}, 2)};
  const std::vector<Tensor> inputs = {random_tensor({3, 5}, 3)};
  const auto r = testing::check_gradients(f, params, inputs, 1e-6, 1e-9);
  CHECK(r.checked == 24);
  CHECK(r.ok());
}

TEST_CASE("two-layer GRU over six steps matches finite differences") {
  const int in = 3, hid = 4;
  GraphFn f = [&](Tape& tape, std::span<const Var> p, std::span<const Var> x) {
    Var h1 = tape.constant(Tensor({2, hid}));
    Var h2 = h1;
    for (int t = 0; t < 6; ++t) {
      h1 = gru_cell(x[t], h1, p[0], p[1], p[2], p[3]);
      h2 = gru_cell(h1, h2, p[4], p[5], p[6], p[7]);
    }
    return sum(mul(h2, h2));
  };
  std::vector<Tensor> params = {random_tensor({3 * hid, in}, 1), random_tensor({3 * hid, hid}, 2),
                                random_tensor({3 * hid}, 3),     random_tensor({3 * hid}, 4),
                                random_tensor({3 * hid, hid}, 5), random_tensor({3 * hid, hid}, 6),
                                random_tensor({3 * hid}, 7),     random_tensor({3 * hid}, 8)};
  std::vector<Tensor> xs;
  for (int t = 0; t < 6; ++t) xs.push_back(random_tensor({2, in}, 100 + t));
  const auto r = testing::check_gradients(f, params, xs, 1e-5, 1e-6);
  CHECK(r.ok());
}

TEST_CASE("every op's backward matches finite differences") {
  struct Case {
    const char* name;
    GraphFn fn;
    std::vector<Tensor> params;
  };
  const std::vector<Case> cases = {
      {"add/sub/scale", [](Tape&, auto p, auto) { return sum(mul(sub(add(p[0], p[1]), scale(p[1], 0.3)), p[0])); },
       {random_tensor({3, 2}, 1), random_tensor({3, 2}, 2)}},
      {"add_scalar/sigmoid/tanh", [](Tape&, auto p, auto) { return sum(tanh(sigmoid(add_scalar(p[0], 0.2)))); },
       {random_tensor({2, 5}, 3)}},
      {"relu", [](Tape&, auto p, auto) { return sum(mul(relu(p[0]), p[0])); }, {random_tensor({7}, 4)}},
      {"conv2d", [](Tape&, auto p, auto) { return sum(tanh(conv2d(p[0], p[1], p[2], 2, 1))); },
       {random_tensor({2, 2, 5, 5}, 5), random_tensor({3, 2, 3, 3}, 6), random_tensor({3}, 7)}},
      {"layer_norm", [](Tape&, auto p, auto) { return sum(mul(layer_norm(p[0], p[1], p[2]), p[3])); },
       {random_tensor({3, 4}, 8), random_tensor({4}, 9), random_tensor({4}, 10), random_tensor({3, 4}, 11)}},
      {"concat/row_sum", [](Tape&, auto p, auto) { return sum(tanh(row_sum(concat({p[0], p[1]})))); },
       {random_tensor({2, 3}, 12), random_tensor({2, 2}, 13)}},
      {"squared_distance/mean", [](Tape&, auto p, auto) { return mean(squared_distance(p[0], p[1])); },
       {random_tensor({4, 3}, 14), random_tensor({4, 3}, 15)}},
      {"reshape/gather/segment",
       [](Tape&, auto p, auto) {
         Var g = gather_rows(reshape(p[0], {3, 4}), {2, 0, 2, 1});
         return sum(tanh(segment_sum(g, {1, 0, 1, 1}, 3)));
       },
       {random_tensor({12}, 16)}},
      {"softmax_cross_entropy",
       [](Tape&, auto p, auto) { return softmax_cross_entropy(p[0], {1, 0, 2}); }, {random_tensor({3, 3}, 17)}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto r = testing::check_gradients(c.fn, c.params, {}, 1e-5, 1e-6);
    CHECK(r.ok());
  }
}

TEST_CASE("fan-out gradients accumulate") {
  Tape tape;
  Var x = tape.parameter(Tensor({2}, std::vector<double>{1.0, -2.0}));
  Var y = add(add(x, x), scale(x, 3.0));
  tape.backward(sum(y));
  const Tensor g = tape.grad(x);
  CHECK(g[0] == 5.0);
  CHECK(g[1] == 5.0);
}

TEST_CASE("unused parameters get zero gradient and constants are not reached") {
  Tape tape;
  Var a = tape.parameter(Tensor({2}, 1.0));
  Var b = tape.parameter(Tensor({2}, 1.0));
  Var c = tape.constant(Tensor({2}, 4.0));
  tape.backward(sum(mul(a, c)));
  CHECK_FALSE(tape.reached(b));
  CHECK(tape.grad(b) == Tensor({2}, 0.0));
  CHECK(tape.grad(a) == Tensor({2}, 4.0));
}

TEST_CASE("evaluation is deterministic") {
  GraphFn f = [](Tape&, std::span<const Var> p, std::span<const Var> in) {
    return mean(tanh(conv2d(in[0], p[0], p[1], 1, 0)));
  };
  const std::vector<Tensor> params = {random_tensor({4, 3, 3, 3}, 1), random_tensor({4}, 2)};
  const std::vector<Tensor> in = {random_tensor({2, 3, 8, 8}, 3)};
  const auto a = evaluate_with_gradients(f, params, in);
  const auto b = evaluate_with_gradients(f, params, in);
  CHECK(a.loss == b.loss);
  CHECK(a.grads == b.grads);
}

TEST_CASE("graph errors") {
  Tape tape;
  Var x = tape.constant(Tensor({2, 3}, 1.0));
  Var y = tape.constant(Tensor({3, 2}, 1.0));
  CHECK_THROWS_AS(apply("softplus", x), Error);
  try {
    apply("softplus", x);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::GraphError);
  }
  try {
    add(x, y);
    FAIL("shape mismatch accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::GraphError);
  }
  try {
    tape.backward(x);
    FAIL("non-scalar loss accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::GraphError);
  }
  Var big = tape.constant(Tensor({1}, 1e200));
  try {
    mul(big, big);
    FAIL("overflow accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NumericsError);
  }
  CHECK(apply("relu", x).value() == Tensor({2, 3}, 1.0));
  CHECK(apply("sub", x, x).value() == Tensor({2, 3}, 0.0));
}

TEST_CASE("adam: zero gradient is a fixed point, first step has size lr") {
  std::vector<Tensor> p = {Tensor({3}, std::vector<double>{1.0, -1.0, 0.5})};
  const Tensor start = p[0];
  auto st = AdamState::zeros_like(p);
  const std::vector<Tensor> zero = {Tensor({3}, 0.0)};
  adam_step(p, zero, st);
  CHECK(p[0] == start);

  const std::vector<Tensor> g = {Tensor({3}, std::vector<double>{0.3, -2.0, 1e-3})};
  auto st2 = AdamState::zeros_like(p);
  adam_step(p, g, st2);
  CHECK(p[0][0] == doctest::Approx(1.0 - 5e-4).epsilon(1e-6));
  CHECK(p[0][1] == doctest::Approx(-1.0 + 5e-4).epsilon(1e-6));
  CHECK(p[0][2] == doctest::Approx(0.5 - 5e-4 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam minimises a quadratic") {
  std::vector<Tensor> p = {Tensor({1}, 0.0)};
  auto st = AdamState::zeros_like(p, AdamConfig{0.1});
  for (int i = 0; i < 100; ++i) {
    const std::vector<Tensor> g = {Tensor({1}, 2.0 * (p[0][0] - 2.0))};
    adam_step(p, g, st);
  }
  CHECK(std::abs(p[0][0] - 2.0) < 0.05);
  CHECK(st.step == 100);
}

TEST_CASE("adam rejects mismatched gradients") {
  std::vector<Tensor> p = {Tensor({2}, 0.0)};
  auto st = AdamState::zeros_like(p);
  const std::vector<Tensor> g = {Tensor({3}, 0.0)};
  CHECK_THROWS_AS(adam_step(p, g, st), Error);
}

TEST_CASE("glorot init") {
  const std::vector<ParamSpec> specs = {
      {"w", {400, 250}, InitKind::Weight}, {"b", {400}, InitKind::Bias}, {"g", {7}, InitKind::Gain},
      {"k", {8, 3, 5, 5}, InitKind::Weight}};
  const auto a = init_params(specs, 42);
  const auto b = init_params(specs, 42);
  const auto c = init_params(specs, 43);
  CHECK(a == b);
  CHECK(a[0] != c[0]);
  CHECK(a[1] == Tensor({400}, 0.0));
  CHECK(a[2] == Tensor({7}, 1.0));

  const double lim = std::sqrt(6.0 / 650.0);
  CHECK(glorot_limit({400, 250}) == doctest::Approx(lim));
  CHECK(glorot_limit({8, 3, 5, 5}) == doctest::Approx(std::sqrt(6.0 / (75.0 + 200.0))));
  double s = 0, s2 = 0;
  for (double v : a[0].values()) {
    REQUIRE(std::abs(v) <= lim);
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(a[0].size());
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(std::abs(var - lim * lim / 3.0) < 0.05 * lim * lim / 3.0);
}

TEST_CASE("randomized op trials match finite differences") {
  Rng rng(2024);
  for (const auto& op : testing::op_names()) {
    CAPTURE(op);
    for (int trial = 0; trial < 10; ++trial) {
      const auto t = testing::op_trial(op, rng);
      const auto r = testing::check_trial(t, 1e-5, 1e-8, 0, rng);
      CHECK(r.result.ok());
      CHECK(r.kinks == 0);
    }
  }
}

TEST_CASE("randomized composed losses match finite differences") {
  Rng rng(7);
  for (auto mode : {model::Mode::WM, model::Mode::CWM, model::Mode::CRM_CWM}) {
    CAPTURE(model::to_string(mode));
    for (int trial = 0; trial < 3; ++trial) {
      const auto t = testing::loss_trial(mode, rng);
      const auto r = testing::check_trial(t, 1e-5, 1e-8, 40, rng);
      CHECK(r.result.ok());
      CHECK(r.kinks <= 1);
    }
  }
}
