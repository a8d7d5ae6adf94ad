#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "maskcap/masks.hpp"
#include "test_helpers.hpp"

using namespace maskcap;
using Catch::Approx;

namespace {

// Independent scalar cosine for oracle checks.
double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

Mask tape_mask(Tape& tape, double mu, double sigma, double tau, MaskFamily fam, int n,
               MaskWarnings* w = nullptr) {
  return build_mask(tape, tape.scalar(mu), tape.scalar(sigma), tau, fam, n, w);
}

}  // namespace

TEST_CASE("gaussian mask peak and width") {
  // peak at the center frame: N_v = 2, t = 1 gives t' = 0.5 = mu
  MaskParams p{0.5, 0.3, 1.0, MaskFamily::gaussian};
  const auto v = mask_vector(p, 2);
  CHECK(v[0] == Approx(1.0));

  // value exp(-1/2) at t' = mu +/- sigma/tau, evaluated directly
  for (double tau : {0.8, 1.0, 2.0, 2.8}) {
    MaskParams q{0.4, 0.25, tau, MaskFamily::gaussian};
    CHECK(mask_value(q, q.mu + q.sigma / tau) == Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(mask_value(q, q.mu - q.sigma / tau) == Approx(std::exp(-0.5)).epsilon(1e-12));
  }

  // d mask / d mu vanishes at the peak
  Parameter mu{"mu", {1}, {0.5}, {}};
  const auto loss_fn = [&]() {
    Tape t;
    MaskParams q{0.0, 0.3, 1.0, MaskFamily::gaussian};
    Mask m = build_mask(t, t.leaf(mu), t.scalar(0.3), 1.0, MaskFamily::gaussian, 2);
    return t.slice_rows(m.values, 0, 1).item();  // frame t=1, t' = 0.5
  };
  Tape tape;
  Mask m = build_mask(tape, tape.leaf(mu), tape.scalar(0.3), 1.0, MaskFamily::gaussian, 2);
  tape.backward(tape.slice_rows(m.values, 0, 1));
  CHECK(mu.grad[0] == Approx(0.0).margin(1e-12));
}

TEST_CASE("gaussian sigma floor clamps and flags") {
  Tape tape;
  MaskWarnings warn;
  Mask m = tape_mask(tape, 0.5, 1e-6, 2.0, MaskFamily::gaussian, 8, &warn);
  CHECK(warn.sigma_clamped == 1);
  for (double v : m.values.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("hard binary mask support enumeration") {
  // mu = 0.5, sigma = 0.3, N_v = 10: support is exactly t in {4, 5, 6}
  MaskParams p{0.5, 0.3, 2.0, MaskFamily::hard_binary};
  const auto v = mask_vector(p, 10);
  // oracle: enumerate t / N_v against [0.35, 0.65]
  for (int t = 1; t <= 10; ++t) {
    const double tp = t / 10.0;
    const double expect = (tp >= 0.35 && tp <= 0.65) ? 1.0 : 0.0;
    CHECK(v[static_cast<std::size_t>(t - 1)] == expect);
  }
  CHECK(v == std::vector<double>{0, 0, 0, 1, 1, 1, 0, 0, 0, 0});

  // full width covers everything
  MaskParams full{0.5, 1.0, 2.0, MaskFamily::hard_binary};
  for (double x : mask_vector(full, 7)) CHECK(x == 1.0);

  // entries are only 0 or 1
  MaskParams r{0.37, 0.21, 2.0, MaskFamily::hard_binary};
  for (double x : mask_vector(r, 13)) CHECK((x == 0.0 || x == 1.0));
}

TEST_CASE("hard binary mask contributes no gradient") {
  Parameter mu{"mu", {1}, {0.5}, {}};
  Parameter sigma{"sigma", {1}, {0.3}, {}};
  Tape tape;
  Mask m = build_mask(tape, tape.leaf(mu), tape.leaf(sigma), 2.0, MaskFamily::hard_binary, 10);
  tape.backward(tape.sum(m.values));
  CHECK(mu.grad[0] == 0.0);
  CHECK(sigma.grad[0] == 0.0);
}

TEST_CASE("sigmoid mask values") {
  // at t' = mu both factors equal Sigmoid(tau sigma / 2) = Sigmoid(1.5)
  MaskParams p{0.5, 0.3, 10.0, MaskFamily::sigmoid};
  const double s = 1.0 / (1.0 + std::exp(-10.0 * 0.15));
  CHECK(mask_value(p, 0.5) == Approx(s * s).epsilon(1e-12));
  CHECK(mask_value(p, 0.5) == Approx(0.66843).epsilon(1e-4));

  // tau -> inf converges pointwise to the hard mask away from the edges
  MaskParams soft{0.5, 0.3, 1e4, MaskFamily::sigmoid};
  MaskParams hard{0.5, 0.3, 1e4, MaskFamily::hard_binary};
  const int n = 100;
  for (int t = 1; t <= n; ++t) {
    const double tp = static_cast<double>(t) / n;
    if (std::abs(tp - 0.35) < 1e-3 || std::abs(tp - 0.65) < 1e-3) continue;
    CHECK(mask_value(soft, tp) == Approx(mask_value(hard, tp)).margin(1e-3));
  }
}

TEST_CASE("cauchy mask values") {
  // density-ratio form: half max at t' = mu +/- sigma/tau
  MaskParams p{0.45, 0.2, 2.0, MaskFamily::cauchy};
  CHECK(mask_value(p, p.mu + p.sigma / p.tau) == Approx(0.5).epsilon(1e-12));
  CHECK(mask_value(p, p.mu - p.sigma / p.tau) == Approx(0.5).epsilon(1e-12));

  // grid vector self-normalizes: max entry is exactly 1
  const auto v = mask_vector(p, 16);
  double mx = 0.0;
  for (double x : v) {
    CHECK(x > 0.0);
    CHECK(x <= 1.0);
    mx = std::max(mx, x);
  }
  CHECK(mx == 1.0);
}

TEST_CASE("mask families stay in range over random parameters") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    MaskParams p;
    p.mu = rng.uniform(0.01, 0.99);
    p.sigma = rng.uniform(1e-6, 0.999);
    p.tau = rng.uniform(0.1, 5.0);
    for (MaskFamily f :
         {MaskFamily::gaussian, MaskFamily::hard_binary, MaskFamily::sigmoid, MaskFamily::cauchy}) {
      p.family = f;
      for (double x : mask_vector(p, 17)) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
      }
    }
  }
}

TEST_CASE("gaussian and cauchy masks are symmetric about mu") {
  for (MaskFamily f : {MaskFamily::gaussian, MaskFamily::cauchy, MaskFamily::sigmoid}) {
    MaskParams p{0.5, 0.22, 1.7, f};
    for (double delta : {0.05, 0.11, 0.3}) {
      CHECK(mask_value(p, 0.5 + delta) == Approx(mask_value(p, 0.5 - delta)).epsilon(1e-12));
    }
  }
}

TEST_CASE("negative mask complement identity") {
  Tape tape;
  for (MaskFamily f :
       {MaskFamily::gaussian, MaskFamily::hard_binary, MaskFamily::sigmoid, MaskFamily::cauchy}) {
    Mask m = tape_mask(tape, 0.4, 0.25, 2.0, f, 12);
    Mask neg = negative_mask(tape, m);
    CHECK_FALSE(neg.positive);
    const auto& mv = m.values.values();
    const auto& nv = neg.values.values();
    for (std::size_t i = 0; i < mv.size(); ++i) CHECK(mv[i] + nv[i] == 1.0);  // exact
    CHECK_THROWS_AS(negative_mask(tape, neg), ContractViolation);
  }
  // negative of the all-ones hard mask is all zeros
  Mask ones = tape_mask(tape, 0.5, 1.0, 2.0, MaskFamily::hard_binary, 6);
  for (double v : negative_mask(tape, ones).values.values()) CHECK(v == 0.0);
}

TEST_CASE("negative mask gradient is the negated positive gradient") {
  Parameter mu{"mu", {1}, {0.45}, {}};
  // d(neg)/dmu at one frame
  Tape t1;
  Mask m1 = build_mask(t1, t1.leaf(mu), t1.scalar(0.3), 2.0, MaskFamily::gaussian, 8);
  t1.backward(t1.slice_rows(m1.values, 2, 3));
  const double dpos = mu.grad[0];

  mu.zero_grad();
  Tape t2;
  Mask m2 = build_mask(t2, t2.leaf(mu), t2.scalar(0.3), 2.0, MaskFamily::gaussian, 8);
  t2.backward(t2.slice_rows(negative_mask(t2, m2).values, 2, 3));
  CHECK(mu.grad[0] == Approx(-dpos).epsilon(1e-12));
}

TEST_CASE("mask gradients match finite differences") {
  for (MaskFamily f : {MaskFamily::gaussian, MaskFamily::sigmoid, MaskFamily::cauchy}) {
    INFO("family " << family_name(f));
    Parameter mu{"mu", {1}, {0.43}, {}};
    Parameter sigma{"sigma", {1}, {0.27}, {}};
    const auto build = [&](Tape& t) {
      Mask m = build_mask(t, t.leaf(mu), t.leaf(sigma), 2.0, f, 16);
      // weighted sum so every frame contributes
      std::vector<double> w(16);
      for (int i = 0; i < 16; ++i) w[static_cast<std::size_t>(i)] = 0.2 + 0.1 * i;
      return t.sum(t.mul(m.values, t.constant({16}, w)));
    };
    Tape tape;
    tape.backward(build(tape));
    const auto loss_fn = [&]() {
      Tape t2;
      return build(t2).item();
    };
    CHECK(testutil::max_grad_rel_err(mu, mu.grad, loss_fn) < 1e-4);
    CHECK(testutil::max_grad_rel_err(sigma, sigma.grad, loss_fn) < 1e-4);
  }
}

TEST_CASE("diversity loss on identical and disjoint masks") {
  Tape tape;
  // two identical masks: cosine is exactly 1, loss = 1 - gamma exactly
  Mask a = tape_mask(tape, 0.5, 0.3, 2.0, MaskFamily::gaussian, 10);
  Mask b = tape_mask(tape, 0.5, 0.3, 2.0, MaskFamily::gaussian, 10);
  const double gamma = 0.8;
  CHECK(diversity_loss(tape, {a, b}, gamma).item() == 1.0 - gamma);  // exact

  // disjoint hard masks: orthogonal, so zero for any gamma
  Mask h1 = tape_mask(tape, 0.2, 0.2, 2.0, MaskFamily::hard_binary, 10);
  Mask h2 = tape_mask(tape, 0.8, 0.2, 2.0, MaskFamily::hard_binary, 10);
  CHECK(diversity_loss(tape, {h1, h2}, 0.0).item() == 0.0);

  // single mask: defined as exactly zero
  CHECK(diversity_loss(tape, {a}, gamma).item() == 0.0);
}

TEST_CASE("diversity aggregation matches the hand-evaluated ordered-pair mean") {
  // three masks with pairwise cosines {0.9, 0.5, 0.85}: (0.1 + 0 + 0.05) * 2 / 6
  const double v = diversity_aggregate({0.9, 0.5, 0.85}, 0.8, 3);
  CHECK(v == Approx(0.05).margin(1e-12));
  CHECK(diversity_aggregate({}, 0.8, 1) == 0.0);
}

TEST_CASE("diversity loss equals independent cosine aggregation on random masks") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    const int n = 2 + static_cast<int>(rng.below(3));
    std::vector<Mask> masks;
    std::vector<std::vector<double>> raw;
    for (int i = 0; i < n; ++i) {
      MaskFamily f = static_cast<MaskFamily>(rng.below(4));
      Mask m = tape_mask(tape, rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.9),
                         rng.uniform(0.5, 3.0), f, 14);
      raw.push_back(m.values.values());
      masks.push_back(std::move(m));
    }
    const double gamma = rng.uniform(0.0, 1.0);
    std::vector<double> cosines;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        cosines.push_back(cosine(raw[static_cast<std::size_t>(i)], raw[static_cast<std::size_t>(j)]));
    const double expect = diversity_aggregate(cosines, gamma, n);
    CHECK(diversity_loss(tape, masks, gamma).item() == Approx(expect).margin(1e-12));
  }
}

TEST_CASE("diversity loss is permutation and scale invariant") {
  Rng rng(88);
  Tape tape;
  std::vector<Mask> masks;
  for (int i = 0; i < 3; ++i)
    masks.push_back(tape_mask(tape, rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.8), 2.0,
                              MaskFamily::gaussian, 12));
  const double base = diversity_loss(tape, masks, 0.6).item();

  std::vector<Mask> permuted{masks[2], masks[0], masks[1]};
  CHECK(diversity_loss(tape, permuted, 0.6).item() == Approx(base).margin(1e-12));

  // scale-free: doubling every vector leaves the cosine, hence the loss
  std::vector<Mask> scaled = masks;
  for (Mask& m : scaled) m.values = tape.mul_scalar(m.values, 2.0);
  CHECK(diversity_loss(tape, scaled, 0.6).item() == Approx(base).margin(1e-12));
}

TEST_CASE("diversity loss flags zero-norm masks") {
  Tape tape;
  // a hard mask so narrow no grid point lands inside
  Mask z = tape_mask(tape, 0.5 + 0.013, 0.001, 2.0, MaskFamily::hard_binary, 7);
  double sum = 0.0;
  for (double v : z.values.values()) sum += v;
  REQUIRE(sum == 0.0);
  Mask g = tape_mask(tape, 0.5, 0.3, 2.0, MaskFamily::gaussian, 7);
  MaskWarnings warn;
  CHECK(diversity_loss(tape, {z, g}, 0.5, &warn).item() == 0.0);
  CHECK(warn.zero_norm_pairs == 1);
}

TEST_CASE("mask to segment") {
  CHECK(mask_to_segment({0.5, 0.3, 2.0, MaskFamily::gaussian}) ==
        std::pair<double, double>{0.35, 0.65});
  CHECK(mask_to_segment({0.05, 0.3, 2.0, MaskFamily::gaussian}) ==
        std::pair<double, double>{0.0, 0.2});
  // round-trip with the hard-binary support for interior mu
  MaskParams p{0.5, 0.3, 2.0, MaskFamily::hard_binary};
  const auto [s, e] = mask_to_segment(p);
  const auto v = mask_vector(p, 10);
  for (int t = 1; t <= 10; ++t) {
    const double tp = t / 10.0;
    CHECK(v[static_cast<std::size_t>(t - 1)] == ((tp >= s && tp <= e) ? 1.0 : 0.0));
  }
}

TEST_CASE("mask csv dump") {
  std::ostringstream os;
  write_mask_csv(os, {0.5, 0.3, 2.0, MaskFamily::gaussian}, 4);
  const std::string text = os.str();
  CHECK(text.find("frame_index,normalized_time,value,family,mu,sigma,tau") == 0);
  CHECK(text.find("gaussian") != std::string::npos);
  // one header + four rows
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
}

TEST_CASE("mask parameter validation") {
  CHECK_THROWS_AS((MaskParams{0.0, 0.3, 2.0, MaskFamily::gaussian}).validate(), DomainError);
  CHECK_THROWS_AS((MaskParams{0.5, 0.3, 0.0, MaskFamily::gaussian}).validate(), DomainError);
  CHECK_THROWS_AS(mask_vector({0.5, 0.3, 2.0, MaskFamily::gaussian}, 0), DomainError);
  CHECK_NOTHROW((MaskParams{0.5, 0.3, 2.0, MaskFamily::gaussian}).validate());
}
