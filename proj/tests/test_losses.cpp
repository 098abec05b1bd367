#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "divopt/errors.hpp"
#include "divopt/losses.hpp"
#include "support.hpp"

using namespace divopt;
using namespace testsupport;

namespace {

using Vec = std::vector<double>;

// Oracles in extended precision, written without the library's helpers.
long double ref_kl(const Vec& p, const Vec& q) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s += static_cast<long double>(p[i]) * std::log(static_cast<long double>(p[i]) / q[i]);
  }
  return s;
}

long double ref_entropy(const Vec& p) {
  long double s = 0.0L;
  for (double v : p) s -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
  return s;
}

long double ref_cross(const Vec& p, const Vec& q) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s -= static_cast<long double>(p[i]) * std::log(static_cast<long double>(q[i]));
  }
  return s;
}

double ref_g(double x, double delta, double m) {
  return std::abs(x - delta) > m ? -std::abs(x - delta) : 0.0;
}

Tensor2D rows_of(std::initializer_list<Vec> rows) {
  Tensor2D t(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const Vec& v : rows) {
    std::copy(v.begin(), v.end(), t.row(r).begin());
    ++r;
  }
  return t;
}

const Vec kP{0.9, 0.1};
const Vec kQ{0.5, 0.5};

}  // namespace

TEST_CASE("kl examples") {
  CHECK(kl(kP, kP) == 0.0);
  CHECK(std::abs(kl(kP, kQ) - 0.36814) < 1e-4);
  CHECK(std::abs(kl(kP, kQ) - static_cast<double>(ref_kl(kP, kQ))) < 1e-12);
}

TEST_CASE("kl is nonnegative on random pairs") {
  Xoshiro256pp rng(1);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(19);
    CHECK(kl(random_probs(rng, k), random_probs(rng, k)) >= 0.0);
  }
}

TEST_CASE("kl rejects a length mismatch") {
  CHECK_THROWS_AS(kl(Vec{0.5, 0.5}, Vec{0.2, 0.3, 0.5}), DimensionError);
}

TEST_CASE("kl clamps zero probabilities instead of returning infinity") {
  const double v = kl(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("skld examples") {
  const Tensor2D same = rows_of({kP, kQ});
  CHECK(skld(same, same) == 0.0);

  const Tensor2D p1 = rows_of({kP});
  const Tensor2D p2 = rows_of({kQ});
  CHECK(std::abs(skld(p1, p2) - 0.87897) < 1e-4);
  CHECK(std::abs(skld(p1, p2) - static_cast<double>(ref_kl(kP, kQ) + ref_kl(kQ, kP))) < 1e-12);
}

TEST_CASE("skld is symmetric under swapping the heads") {
  Xoshiro256pp rng(2);
  const Tensor2D a = random_probs_batch(rng, 16, 5);
  const Tensor2D b = random_probs_batch(rng, 16, 5);
  CHECK(skld(a, b) == doctest::Approx(skld(b, a)).epsilon(1e-14));
}

TEST_CASE("skld of an empty batch is a usage error") {
  CHECK_THROWS_AS(skld(Tensor2D(0, 3), Tensor2D(0, 3)), UsageError);
}

TEST_CASE("crs_ent examples") {
  const Vec u(3, 1.0 / 3.0);
  const CrsEnt ue = crs_ent({u, u});
  CHECK(ue.crs == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-14));
  CHECK(ue.ent == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-14));
  CHECK(std::abs(ue.crs - 2.19722) < 1e-5);

  const CrsEnt ce = crs_ent({kP, kQ});
  CHECK(std::abs(ce.ent - 1.01823) < 1e-4);
  CHECK(std::abs(ce.crs - 1.89720) < 1e-4);
  CHECK(std::abs(ce.ent - static_cast<double>(ref_entropy(kP) + ref_entropy(kQ))) < 1e-12);
  CHECK(std::abs(ce.crs - static_cast<double>(ref_cross(kP, kQ) + ref_cross(kQ, kP))) < 1e-12);
}

TEST_CASE("property: crs - ent equals symmetric KL and entropy bounds hold") {
  Xoshiro256pp rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(19);
    const Vec p1 = random_probs(rng, k);
    const Vec p2 = random_probs(rng, k);
    const CrsEnt ce = crs_ent({p1, p2});
    CHECK(std::abs((kl(p1, p2) + kl(p2, p1)) - (ce.crs - ce.ent)) < 1e-10);
    CHECK(ce.ent >= 0.0);
    CHECK(ce.ent <= 2.0 * std::log(static_cast<double>(k)) + 1e-12);
    CHECK(ce.crs >= ce.ent - 1e-12);
    const double jd = joint_divergence({p1, p2});
    CHECK(jd == ce.crs + ce.ent);
    CHECK(jd >= kl(p1, p2) + kl(p2, p1));
  }
}

TEST_CASE("joint_divergence examples") {
  const Vec u(3, 1.0 / 3.0);
  CHECK(joint_divergence({u, u}) == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-14));
  CHECK(std::abs(joint_divergence({u, u}) - 4.39445) < 1e-5);

  const Vec onehot{1.0, 0.0, 0.0};
  CHECK(joint_divergence({onehot, onehot}) <= 1e-9);

  CHECK(std::abs(joint_divergence({kP, kQ}) - 2.91543) < 1e-4);
  const long double oracle =
      ref_cross(kP, kQ) + ref_cross(kQ, kP) + ref_entropy(kP) + ref_entropy(kQ);
  CHECK(std::abs(joint_divergence({kP, kQ}) - static_cast<double>(oracle)) < 1e-12);
}

TEST_CASE("supervised_loss examples") {
  const Tensor2D onehot = rows_of({{0.0, 1.0, 0.0}});
  CHECK(supervised_loss(onehot, onehot, std::vector<int>{1}) == 0.0);

  const Tensor2D u = rows_of({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  CHECK(supervised_loss(u, u, std::vector<int>{2}) == doctest::Approx(2.0 * std::log(3.0)));
  CHECK(std::abs(supervised_loss(u, u, std::vector<int>{2}) - 2.19722) < 1e-5);

  const Tensor2D p1 = rows_of({{0.5, 0.5}});
  const Tensor2D p2 = rows_of({{0.75, 0.25}});
  const double v = supervised_loss(p1, p2, std::vector<int>{1});
  CHECK(std::abs(v - 2.07944) < 1e-5);
  CHECK(std::abs(v - (std::log(2.0) + std::log(4.0))) < 1e-12);
}

TEST_CASE("supervised_loss rejects out-of-range labels") {
  const Tensor2D p = rows_of({{0.5, 0.5}});
  CHECK_THROWS_AS(supervised_loss(p, p, std::vector<int>{2}), DataError);
  CHECK_THROWS_AS(supervised_loss(p, p, std::vector<int>{-1}), DataError);
}

TEST_CASE("source_loss degenerate cases and per-sample values") {
  Xoshiro256pp rng(4);
  const Tensor2D p1 = random_probs_batch(rng, 8, 3);
  const Tensor2D p2 = random_probs_batch(rng, 8, 3);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};

  CHECK(source_loss(p1, p2, y, 0.0).total == supervised_loss(p1, p2, y));
  CHECK(source_loss(p1, p1, y, 0.1).total == doctest::Approx(supervised_loss(p1, p1, y)).epsilon(1e-15));

  const SourceLoss s = source_loss(p1, p2, y, 0.1);
  REQUIRE(s.per_sample.size() == 8);
  double mean = 0.0;
  for (std::size_t r = 0; r < 8; ++r) {
    const Vec a(p1.row(r).begin(), p1.row(r).end());
    const Vec b(p2.row(r).begin(), p2.row(r).end());
    const auto yi = static_cast<std::size_t>(y[r]);
    const double expect =
        -std::log(a[yi]) - std::log(b[yi]) + 0.1 * static_cast<double>(ref_kl(a, b) + ref_kl(b, a));
    CHECK(s.per_sample[r] == doctest::Approx(expect).epsilon(1e-12));
    mean += expect / 8.0;
  }
  CHECK(s.total == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("small_loss_select examples") {
  const Vec losses{0.1, 5.0, 0.2, 0.3};
  CHECK(small_loss_select(losses, 0.25) == std::vector<std::size_t>{0, 2, 3});
  CHECK(small_loss_select(losses, 0.0) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(small_loss_select(Vec(4, 1.0), 0.5) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("small_loss_select keeps ceil((1 - alpha) N) when that is an exact integer") {
  // (1 - 0.2) * 10 rounds to 8.000000000000002 in doubles.
  CHECK(small_loss_select(Vec(10, 1.0), 0.2).size() == 8);
  CHECK(small_loss_select(Vec(64, 1.0), 0.2).size() == 52);  // ceil(51.2)
}

TEST_CASE("property: selection size and ordering contract") {
  Xoshiro256pp rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(100);
    const double alpha = 0.95 * rng.uniform01();
    Vec losses(n);
    for (double& v : losses) v = rng.below(4) == 0 ? 1.0 : rng.uniform(0.0, 3.0);
    const auto sel = small_loss_select(losses, alpha);
    const auto expected = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n) - 1e-9));
    REQUIRE(sel.size() == expected);
    CHECK(std::is_sorted(sel.begin(), sel.end()));
    std::set<std::size_t> chosen(sel.begin(), sel.end());
    double max_sel = -1.0, min_unsel = 1e300;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen.count(i)) max_sel = std::max(max_sel, losses[i]);
      else min_unsel = std::min(min_unsel, losses[i]);
    }
    CHECK(max_sel <= min_unsel);
  }
}

TEST_CASE("separation_loss examples") {
  const double delta = std::log(3.0);
  const SeparationParams params{delta, 1.0};
  CHECK(separation_term(2.5, params) == doctest::Approx(-(2.5 - delta)));
  CHECK(std::abs(separation_term(2.5, params) - (-1.40139)) < 1e-5);
  CHECK(separation_term(1.2, params) == 0.0);
  // Band edges are inclusive; 1.5 +- 1 is exact in binary.
  CHECK(separation_term(2.5, {1.5, 1.0}) == 0.0);
  CHECK(separation_term(0.5, {1.5, 1.0}) == 0.0);
  CHECK(separation_term(2.5 + 1e-9, {1.5, 1.0}) < 0.0);

  // Pairs whose crs and ent sit inside the band contribute nothing.
  const Vec u(3, 1.0 / 3.0);
  const Tensor2D uu = rows_of({u, u});
  CHECK(separation_loss(uu, uu, {2.0 * std::log(3.0), 0.5}) == 0.0);
}

TEST_CASE("separation_loss matches the per-sample definition") {
  Xoshiro256pp rng(6);
  const Tensor2D p1 = random_probs_batch(rng, 10, 4);
  const Tensor2D p2 = random_probs_batch(rng, 10, 4);
  const SeparationParams params{std::log(4.0), 0.5};
  double expect = 0.0;
  for (std::size_t r = 0; r < 10; ++r) {
    const Vec a(p1.row(r).begin(), p1.row(r).end());
    const Vec b(p2.row(r).begin(), p2.row(r).end());
    const auto crs = static_cast<double>(ref_cross(a, b) + ref_cross(b, a));
    const auto ent = static_cast<double>(ref_entropy(a) + ref_entropy(b));
    expect += (ref_g(crs, params.delta, params.margin) + ref_g(ent, params.delta, params.margin)) / 10.0;
  }
  CHECK(separation_loss(p1, p2, params) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("property: separation term is piecewise linear with unit slope outside the band") {
  const SeparationParams params{1.5, 0.4};
  Xoshiro256pp rng(7);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-2.0, 5.0);
    const double h = 1e-6;
    if (std::abs(std::abs(x - params.delta) - params.margin) < 1e-3) continue;
    const double slope = (separation_term(x + h, params) - separation_term(x - h, params)) / (2 * h);
    if (std::abs(x - params.delta) <= params.margin) {
      CHECK(separation_term(x, params) == 0.0);
      CHECK(slope == 0.0);
    } else {
      CHECK(std::abs(std::abs(slope) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("WithKL weights equal the separately coded symmetric-KL objective") {
  Xoshiro256pp rng(8);
  const Tensor2D p1 = random_probs_batch(rng, 12, 3);
  const Tensor2D p2 = random_probs_batch(rng, 12, 3);
  const SeparationParams params{0.6, 0.2};
  double crs_part = 0.0, ent_part = 0.0;
  for (std::size_t r = 0; r < 12; ++r) {
    const Vec a(p1.row(r).begin(), p1.row(r).end());
    const Vec b(p2.row(r).begin(), p2.row(r).end());
    crs_part += ref_g(static_cast<double>(ref_cross(a, b) + ref_cross(b, a)), 0.6, 0.2) / 12.0;
    ent_part += ref_g(static_cast<double>(ref_entropy(a) + ref_entropy(b)), 0.6, 0.2) / 12.0;
  }
  const Objectives kl_obj = variant_objectives(MethodVariant::WithKL, 0.2, 0.1, params);
  CHECK(separation_loss(p1, p2, params, kl_obj.weights) ==
        doctest::Approx(crs_part - ent_part).epsilon(1e-12));
}

TEST_CASE("variant objectives") {
  const SeparationParams sep{std::log(3.0), 1.0};
  const Objectives full = variant_objectives(MethodVariant::Full, 0.2, 0.1, sep);
  CHECK(full.alpha == 0.2);
  CHECK(full.lambda == 0.1);
  CHECK(full.weights == SeparationWeights{1.0, 1.0});
  CHECK(full.run_separation);
  CHECK(full.run_minimax);

  const Objectives nodiv = variant_objectives(MethodVariant::NoDiv, 0.2, 0.1, sep);
  CHECK(nodiv.lambda == 0.0);
  CHECK(nodiv.alpha == full.alpha);
  CHECK(nodiv.weights == full.weights);
  CHECK(nodiv.run_separation == full.run_separation);
  CHECK(nodiv.run_minimax == full.run_minimax);

  const Objectives src = variant_objectives(MethodVariant::SourceOnly, 0.2, 0.1, sep);
  CHECK(src.alpha == 0.0);
  CHECK(src.lambda == 0.0);
  CHECK_FALSE(src.run_separation);
  CHECK_FALSE(src.run_minimax);

  CHECK(variant_objectives(MethodVariant::NoSelect, 0.2, 0.1, sep).alpha == 0.0);
  CHECK(variant_objectives(MethodVariant::NoCrs, 0.2, 0.1, sep).weights == SeparationWeights{0.0, 1.0});
  CHECK(variant_objectives(MethodVariant::NoEnt, 0.2, 0.1, sep).weights == SeparationWeights{1.0, 0.0});
  CHECK(variant_objectives(MethodVariant::WithKL, 0.2, 0.1, sep).weights == SeparationWeights{1.0, -1.0});
  CHECK_FALSE(variant_objectives(MethodVariant::NoMinimax, 0.2, 0.1, sep).run_minimax);

  const Objectives nosep = variant_objectives(MethodVariant::NoSep, 0.2, 0.1, sep);
  CHECK_FALSE(nosep.run_separation);
  Xoshiro256pp rng(9);
  const Tensor2D p1 = random_probs_batch(rng, 6, 3);
  const Tensor2D p2 = random_probs_batch(rng, 6, 3);
  CHECK(separation_loss(p1, p2, {0.01, 0.0}, nosep.weights) == 0.0);
}

TEST_CASE("variant names round-trip") {
  for (MethodVariant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_FALSE(parse_variant("Nope").has_value());
}

TEST_CASE("common_mask examples") {
  // Build two-class pairs with a prescribed crs. Equal pairs (t, 1-t) cover
  // [0, 2 ln 2]; mirrored pairs (t, 1-t) vs (1-t, t) cover [2 ln 2, inf).
  auto pair_with_crs = [](double target) {
    const bool mirrored = target > 2.0 * std::log(2.0);
    auto crs_of = [&](double t) {
      const Vec a{t, 1 - t};
      const Vec b = mirrored ? Vec{1 - t, t} : a;
      return static_cast<double>(ref_cross(a, b) + ref_cross(b, a));
    };
    double lo = 0.5, hi = 1.0 - 1e-9;  // monotone in t, rising only when mirrored
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (crs_of(mid) < target) == mirrored ? lo = mid : hi = mid;
    }
    const double t = 0.5 * (lo + hi);
    return std::pair<Vec, Vec>{Vec{t, 1 - t}, mirrored ? Vec{1 - t, t} : Vec{t, 1 - t}};
  };
  const auto a = pair_with_crs(0.5);
  const auto b = pair_with_crs(2.5);
  const auto c = pair_with_crs(1.9);
  const Tensor2D p1 = rows_of({a.first, b.first, c.first});
  const Tensor2D p2 = rows_of({a.second, b.second, c.second});
  const Vec expect_crs{0.5, 2.5, 1.9};
  for (std::size_t r = 0; r < 3; ++r) {
    REQUIRE(crs_ent({p1.row(r), p2.row(r)}).crs == doctest::Approx(expect_crs[r]).epsilon(1e-9));
  }
  CHECK(common_mask(p1, p2, {3.0, 1.0}) == std::vector<bool>{true, false, true});

  // m = delta selects nothing.
  Xoshiro256pp rng(10);
  const Tensor2D x = random_probs_batch(rng, 20, 3);
  const Tensor2D y = random_probs_batch(rng, 20, 3);
  for (bool v : common_mask(x, y, {0.7, 0.7})) CHECK_FALSE(v);
}

TEST_CASE("common_mask is exactly crs < delta - m") {
  Xoshiro256pp rng(11);
  const Tensor2D a = random_probs_batch(rng, 200, 3);
  const Tensor2D b = random_probs_batch(rng, 200, 3);
  const SeparationParams params{3.0, 1.0};
  const auto mask = common_mask(a, b, params);
  for (std::size_t r = 0; r < 200; ++r) {
    CHECK(mask[r] == (crs_ent({a.row(r), b.row(r)}).crs < 2.0));
  }
}

TEST_CASE("reject_unknown examples and monotonicity") {
  const double delta = std::log(3.0);
  CHECK(reject_unknown(1.2, delta));
  CHECK_FALSE(reject_unknown(delta, delta));
  CHECK(std::abs(std::log(20.0) - 3.0) < 0.01);
  bool seen_true = false;
  for (double x = 0.0; x < 4.0; x += 0.01) {
    const bool r = reject_unknown(x, delta);
    if (seen_true) CHECK(r);
    seen_true = seen_true || r;
  }
}

TEST_CASE("loss gradients match central differences in probability space") {
  Xoshiro256pp rng(12);
  const Tensor2D p1 = random_probs_batch(rng, 4, 3);
  const Tensor2D p2 = random_probs_batch(rng, 4, 3);
  const std::vector<int> y{0, 2, 1, 2};
  const std::vector<std::size_t> rows{0, 1, 3};
  const SeparationParams sep{0.8, 0.1};

  auto check = [&](auto value_fn, const LossGrad& g) {
    for (int head = 0; head < 2; ++head) {
      for (std::size_t i = 0; i < p1.size(); ++i) {
        Tensor2D a = p1, b = p2;
        Tensor2D& t = head == 0 ? a : b;
        const double h = 1e-6 * t.data()[i];  // relative step; some entries are tiny
        t.data()[i] += h;
        const double up = value_fn(a, b);
        t.data()[i] -= 2 * h;
        const double down = value_fn(a, b);
        const double numeric = (up - down) / (2 * h);
        const double analytic = (head == 0 ? g.d_p1 : g.d_p2).data()[i];
        CHECK(std::abs(numeric - analytic) <= 1e-5 * std::max({1.0, std::abs(numeric)}));
      }
    }
  };

  check([&](const Tensor2D& a, const Tensor2D& b) { return source_loss_grad(a, b, y, rows, 0.1).value; },
        source_loss_grad(p1, p2, y, rows, 0.1));
  check([&](const Tensor2D& a, const Tensor2D& b) {
          return separation_loss_grad(a, b, sep, {1.0, 1.0}).value;
        },
        separation_loss_grad(p1, p2, sep, {1.0, 1.0}));
  check([&](const Tensor2D& a, const Tensor2D& b) { return crs_mean_grad(a, b, rows, -1.0).value; },
        crs_mean_grad(p1, p2, rows, -1.0));
}
