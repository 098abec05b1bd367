#include <doctest.h>

#include <cmath>
#include <vector>

#include "divopt/errors.hpp"
#include "divopt/nn.hpp"
#include "support.hpp"

using namespace divopt;
using namespace testsupport;

namespace {

const std::vector<std::size_t> kToyWidths{2, 32, 32, 32};
const std::vector<std::size_t> kSmallWidths{2, 8, 8, 8};

void zero_all_parameters(TwoHeadModel& model) {
  for (auto block : parameter_blocks(model)) std::fill(block.begin(), block.end(), 0.0);
}

// Loss = sum_ij w1_ij p1_ij + w2_ij p2_ij with fixed random weights.
struct LinearProbe {
  Tensor2D w1, w2;
  double value(const TwoHeadModel& model, const Tensor2D& x) const {
    const ForwardPass pass = forward(model, x);
    double v = 0.0;
    for (std::size_t i = 0; i < pass.p1.size(); ++i) {
      v += w1.data()[i] * pass.p1.data()[i] + w2.data()[i] * pass.p2.data()[i];
    }
    return v;
  }
  void accumulate(TwoHeadModel& model, const Tensor2D& x) const {
    const ForwardPass pass = forward(model, x);
    backward(model, pass.cache, w1, w2);
  }
};

}  // namespace

TEST_CASE("init_model shapes") {
  const TwoHeadModel m = init_model(kToyWidths, 3, 7);
  REQUIRE(m.generator.size() == 3);
  REQUIRE(m.head1.size() == 3);
  REQUIRE(m.head2.size() == 3);
  CHECK(m.head1.back().weight.rows() == 3);
  CHECK(m.head1.back().weight.cols() == 32);
  CHECK(m.head2.back().weight.rows() == 3);
  CHECK(m.head2.back().weight.cols() == 32);
  CHECK(m.generator.front().weight.cols() == 2);
  CHECK(m.head1.back().activation == Activation::Identity);
  CHECK(m.head1[0].activation == Activation::ReLU);
  for (const auto& l : m.generator) CHECK(l.activation == Activation::ReLU);
}

TEST_CASE("init_model is deterministic per seed and varies across seeds") {
  const TwoHeadModel a = init_model(kToyWidths, 3, 7);
  const TwoHeadModel b = init_model(kToyWidths, 3, 7);
  const TwoHeadModel c = init_model(kToyWidths, 3, 8);
  CHECK(serialize_parameters(a) == serialize_parameters(b));
  CHECK(serialize_parameters(a) != serialize_parameters(c));
}

TEST_CASE("heads start from distinct streams and Glorot bounds hold") {
  TwoHeadModel m = init_model(kToyWidths, 3, 7);
  CHECK(m.head1[0].weight != m.head2[0].weight);
  auto check_layer = [](const DenseLayer& l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in_width() + l.out_width()));
    for (double w : l.weight.data()) CHECK(std::abs(w) <= bound);
    for (double b : l.bias) CHECK(b == 0.0);
  };
  for (const auto& l : m.generator) check_layer(l);
  for (const auto& l : m.head1) check_layer(l);
  for (const auto& l : m.head2) check_layer(l);
  for (double g : flat_gradients(m)) CHECK(g == 0.0);
}

TEST_CASE("init_model rejects zero widths and fewer than two classes") {
  const std::vector<std::size_t> bad{2, 0, 4};
  CHECK_THROWS_AS(init_model(bad, 3, 1), ConfigError);
  CHECK_THROWS_AS(init_model(kSmallWidths, 1, 1), ConfigError);
  CHECK_THROWS_AS(init_model(std::vector<std::size_t>{}, 3, 1), ConfigError);
}

TEST_CASE("softmax examples") {
  const auto u = softmax(std::vector<double>{0.0, 0.0, 0.0});
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto p = softmax(std::vector<double>{1.0, 2.0, 3.0});
  // exp-normalize oracle
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(std::abs(p[0] - std::exp(1.0) / z) < 1e-15);
  CHECK(std::abs(p[1] - std::exp(2.0) / z) < 1e-15);
  CHECK(std::abs(p[2] - std::exp(3.0) / z) < 1e-15);
  CHECK(std::abs(p[0] - 0.09003) < 1e-5);
  CHECK(std::abs(p[1] - 0.24473) < 1e-5);
  CHECK(std::abs(p[2] - 0.66524) < 1e-5);
}

TEST_CASE("softmax is shift invariant and survives large logits") {
  Xoshiro256pp rng(2);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal(), b = rng.normal(), c = 50.0 * rng.normal();
    const auto p = softmax(std::vector<double>{a, b});
    const auto q = softmax(std::vector<double>{c + a, c + b});
    CHECK(std::abs(p[0] - q[0]) < 1e-12);
    CHECK(std::abs(p[1] - q[1]) < 1e-12);
  }
  const auto big = softmax(std::vector<double>{1000.0, 0.0});
  CHECK(big[0] == 1.0);
  CHECK(std::isfinite(big[1]));
}

TEST_CASE("softmax rejects non-finite logits") {
  CHECK_THROWS_AS(softmax(std::vector<double>{1.0, NAN}), NumericError);
  CHECK_THROWS_AS(softmax(std::vector<double>{INFINITY, 0.0}), NumericError);
}

TEST_CASE("zero-weight model predicts uniform probabilities") {
  TwoHeadModel m = init_model(kToyWidths, 3, 7);
  zero_all_parameters(m);
  Xoshiro256pp rng(4);
  const ForwardPass pass = forward(m, random_matrix(rng, 5, 2, 3.0));
  for (double v : pass.p1.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  for (double v : pass.p2.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("forward rows are distributions and forward is pure") {
  const TwoHeadModel m = init_model(kToyWidths, 3, 9);
  Xoshiro256pp rng(6);
  const Tensor2D x = random_matrix(rng, 64, 2, 5.0);
  const ForwardPass a = forward(m, x);
  const ForwardPass b = forward(m, x);
  CHECK(a.p1 == b.p1);
  CHECK(a.p2 == b.p2);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s1 = 0.0, s2 = 0.0;
    for (double v : a.p1.row(r)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s1 += v;
    }
    for (double v : a.p2.row(r)) s2 += v;
    CHECK(std::abs(s1 - 1.0) < 1e-12);
    CHECK(std::abs(s2 - 1.0) < 1e-12);
  }
}

TEST_CASE("forward rejects a wrong input width") {
  const TwoHeadModel m = init_model(kToyWidths, 3, 9);
  CHECK_THROWS_AS(forward(m, Tensor2D(4, 3)), DimensionError);
}

TEST_CASE("backward with zero upstream gradient leaves gradients zero") {
  TwoHeadModel m = init_model(kSmallWidths, 3, 1);
  Xoshiro256pp rng(1);
  const ForwardPass pass = forward(m, random_matrix(rng, 4, 2));
  backward(m, pass.cache, Tensor2D(4, 3), Tensor2D(4, 3));
  for (double g : flat_gradients(m)) CHECK(g == 0.0);
}

TEST_CASE("batch gradient equals the sum of per-sample gradients") {
  TwoHeadModel m = init_model(kSmallWidths, 3, 21);
  Xoshiro256pp rng(8);
  const Tensor2D x = random_matrix(rng, 4, 2, 2.0);
  const LinearProbe probe{random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)};
  probe.accumulate(m, x);
  const std::vector<double> batch = flat_gradients(m);
  zero_gradients(m);

  std::vector<double> summed(batch.size(), 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    const std::vector<std::size_t> one{r};
    const LinearProbe single{probe.w1.select_rows(one), probe.w2.select_rows(one)};
    single.accumulate(m, x.select_rows(one));
    const auto g = flat_gradients(m);
    for (std::size_t i = 0; i < g.size(); ++i) summed[i] += g[i];
    zero_gradients(m);
  }
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(std::abs(batch[i] - summed[i]) < 1e-12);
}

TEST_CASE("analytic gradient matches central differences on a small net") {
  for (std::uint64_t seed : {3ULL, 4ULL, 5ULL}) {
    TwoHeadModel m = init_model(kSmallWidths, 3, seed);
    Xoshiro256pp rng(seed + 100);
    const Tensor2D x = random_matrix(rng, 4, 2, 2.0);
    const LinearProbe probe{random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)};
    probe.accumulate(m, x);
    const auto analytic = flat_gradients(m);
    zero_gradients(m);
    const auto numeric =
        central_differences(m, [&](TwoHeadModel& mm) { return probe.value(mm, x); }, 1e-5);
    CHECK(max_relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("backward rejects a stale cache") {
  TwoHeadModel m = init_model(kSmallWidths, 3, 1);
  Xoshiro256pp rng(1);
  const ForwardPass pass = forward(m, random_matrix(rng, 2, 2));
  sgd_step(m, {0.1, 0.0}, UpdateScope::All);
  CHECK_THROWS_AS(backward(m, pass.cache, Tensor2D(2, 3), Tensor2D(2, 3)), UsageError);
}

TEST_CASE("sgd_step honours its scope and zeroes gradients") {
  TwoHeadModel base = init_model(kSmallWidths, 3, 12);
  Xoshiro256pp rng(12);
  const Tensor2D x = random_matrix(rng, 4, 2, 2.0);
  const LinearProbe probe{random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)};

  auto run = [&](UpdateScope scope) {
    TwoHeadModel m = base;
    probe.accumulate(m, x);
    sgd_step(m, {0.1, 0.9}, scope);
    for (double g : flat_gradients(m)) CHECK(g == 0.0);
    return m;
  };

  const TwoHeadModel heads = run(UpdateScope::HeadsOnly);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(heads.generator[i].weight == base.generator[i].weight);
    CHECK(heads.generator[i].bias == base.generator[i].bias);
  }
  CHECK(heads.head1[0].weight != base.head1[0].weight);

  const TwoHeadModel gen = run(UpdateScope::GeneratorOnly);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(gen.head1[i].weight == base.head1[i].weight);
    CHECK(gen.head2[i].weight == base.head2[i].weight);
    CHECK(gen.head1[i].bias == base.head1[i].bias);
    CHECK(gen.head2[i].bias == base.head2[i].bias);
  }
  CHECK(gen.generator[0].weight != base.generator[0].weight);

  const TwoHeadModel all = run(UpdateScope::All);
  CHECK(all.generator[0].weight != base.generator[0].weight);
  CHECK(all.head2[0].weight != base.head2[0].weight);
}

TEST_CASE("sgd_step applies momentum as v = mu v + g, theta -= lr v") {
  TwoHeadModel m = init_model(kSmallWidths, 3, 2);
  const double before = m.head1[2].bias[0];
  m.head1[2].grad_bias[0] = 1.0;
  sgd_step(m, {0.1, 0.5}, UpdateScope::All);
  CHECK(m.head1[2].bias[0] == doctest::Approx(before - 0.1));
  m.head1[2].grad_bias[0] = 1.0;
  sgd_step(m, {0.1, 0.5}, UpdateScope::All);
  // v = 0.5 * 1 + 1 = 1.5
  CHECK(m.head1[2].bias[0] == doctest::Approx(before - 0.1 - 0.15));
}

TEST_CASE("learning rate zero changes nothing") {
  TwoHeadModel m = init_model(kSmallWidths, 3, 2);
  const std::string before = serialize_parameters(m);
  Xoshiro256pp rng(2);
  const Tensor2D x = random_matrix(rng, 4, 2);
  LinearProbe{random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)}.accumulate(m, x);
  sgd_step(m, {0.0, 0.9}, UpdateScope::All);
  CHECK(serialize_parameters(m) == before);
}

TEST_CASE("parameter CSV round-trips exactly") {
  TwoHeadModel m = init_model(kToyWidths, 3, 33);
  const std::string csv = serialize_parameters(m);
  CHECK(csv.rfind("layer,row,col,value\n", 0) == 0);
  TwoHeadModel back = parse_parameters(csv);
  CHECK(serialize_parameters(back) == csv);
  CHECK(flat_parameters(back) == flat_parameters(m));
  CHECK(back.num_classes == 3);
  CHECK(back.input_width == 2);
  CHECK(parameter_count(back) == parameter_count(m));
}

TEST_CASE("parse_parameters rejects malformed input") {
  CHECK_THROWS(parse_parameters("layer,row,col,value\nhead1.0.weight,0,0,abc\n"));
  CHECK_THROWS(parse_parameters("nonsense"));
}
