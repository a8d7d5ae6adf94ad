#pragma once

// Differentiable temporal masks over N_v frames. A mask is generated from a
// normalized center mu and width sigma; tau controls steepness. Frames are
// indexed t = 1..N_v with normalized time t' = t / N_v.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/tensor.hpp"

namespace maskcap {

enum class MaskFamily { gaussian, hard_binary, sigmoid, cauchy };

inline const char* family_name(MaskFamily f) {
  switch (f) {
    case MaskFamily::gaussian: return "gaussian";
    case MaskFamily::hard_binary: return "hard-binary";
    case MaskFamily::sigmoid: return "sigmoid";
    case MaskFamily::cauchy: return "cauchy";
  }
  return "?";
}

inline MaskFamily family_from_string(const std::string& s) {
  if (s == "gaussian") return MaskFamily::gaussian;
  if (s == "hard-binary" || s == "hard") return MaskFamily::hard_binary;
  if (s == "sigmoid") return MaskFamily::sigmoid;
  if (s == "cauchy") return MaskFamily::cauchy;
  throw UsageError("unknown mask family '" + s + "'");
}

constexpr double kSigmaFloor = 1e-4;

struct MaskParams {
  double mu = 0.5;
  double sigma = 0.5;
  double tau = 2.0;
  MaskFamily family = MaskFamily::gaussian;

  void validate() const {
    if (!(mu > 0.0 && mu < 1.0)) throw DomainError("mask: mu must lie in (0,1)");
    if (!(sigma > 0.0 && sigma < 1.0 + 1e-12)) throw DomainError("mask: sigma must lie in (0,1)");
    if (!(tau > 0.0)) throw DomainError("mask: tau must be positive");
  }
};

struct MaskWarnings {
  int sigma_clamped = 0;
  int zero_norm_pairs = 0;
};

// Pointwise mask value at continuous normalized time t'. For the Cauchy
// family this is the density ratio against the analytic peak at mu, i.e. the
// half-width-at-half-max form; the sampled grid vector below instead
// normalizes by its own maximum.
inline double mask_value(const MaskParams& p, double t_prime) {
  const double sc = std::max(p.sigma, kSigmaFloor);
  switch (p.family) {
    case MaskFamily::gaussian: {
      const double s = sc / p.tau;
      const double d = t_prime - p.mu;
      return std::exp(-(d * d) / (2.0 * s * s));
    }
    case MaskFamily::hard_binary:
      return (t_prime >= p.mu - p.sigma / 2.0 && t_prime <= p.mu + p.sigma / 2.0) ? 1.0 : 0.0;
    case MaskFamily::sigmoid: {
      const double lo = p.mu - p.sigma / 2.0;
      const double hi = p.mu + p.sigma / 2.0;
      const auto sg = [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      };
      return sg(p.tau * (t_prime - lo)) * sg(p.tau * (hi - t_prime));
    }
    case MaskFamily::cauchy: {
      const double s = sc / p.tau;
      const double d = t_prime - p.mu;
      return (s * s) / (d * d + s * s);
    }
  }
  return 0.0;
}

// Sampled mask on the frame grid. Cauchy masks divide by their own grid
// maximum so the peak entry equals 1.
inline std::vector<double> mask_vector(const MaskParams& p, int n_frames,
                                       MaskWarnings* warnings = nullptr) {
  if (n_frames < 1) throw DomainError("mask: n_frames must be >= 1");
  if (p.sigma < kSigmaFloor && warnings &&
      (p.family == MaskFamily::gaussian || p.family == MaskFamily::cauchy))
    warnings->sigma_clamped += 1;
  std::vector<double> out(static_cast<std::size_t>(n_frames));
  if (p.family == MaskFamily::cauchy) {
    const double s = std::max(p.sigma, kSigmaFloor) / p.tau;
    double mx = 0.0;
    for (int t = 1; t <= n_frames; ++t) {
      const double d = static_cast<double>(t) / n_frames - p.mu;
      out[static_cast<std::size_t>(t - 1)] = s / (d * d + s * s);
      mx = std::max(mx, out[static_cast<std::size_t>(t - 1)]);
    }
    for (double& v : out) v /= mx;
    return out;
  }
  for (int t = 1; t <= n_frames; ++t)
    out[static_cast<std::size_t>(t - 1)] = mask_value(p, static_cast<double>(t) / n_frames);
  return out;
}

// Tape-level mask: values plus the generating parameters. mu/sigma stay
// connected to the tape for the differentiable families.
struct Mask {
  Tensor values;
  Tensor mu;
  Tensor sigma;
  double tau = 2.0;
  MaskFamily family = MaskFamily::gaussian;
  bool positive = true;
};

inline Tensor time_grid(Tape& tape, int n_frames) {
  std::vector<double> g(static_cast<std::size_t>(n_frames));
  for (int t = 1; t <= n_frames; ++t)
    g[static_cast<std::size_t>(t - 1)] = static_cast<double>(t) / n_frames;
  return tape.constant({n_frames}, std::move(g));
}

// Differentiable mask construction on the tape. The hard-binary family is
// defined non-differentiable: its values enter as constants and contribute
// zero gradient to mu and sigma.
inline Mask build_mask(Tape& tape, Tensor mu, Tensor sigma, double tau, MaskFamily family,
                       int n_frames, MaskWarnings* warnings = nullptr) {
  if (n_frames < 1) throw DomainError("build_mask: n_frames must be >= 1");
  if (tau <= 0.0) throw DomainError("build_mask: tau must be positive");
  Mask m;
  m.mu = mu;
  m.sigma = sigma;
  m.tau = tau;
  m.family = family;
  m.positive = true;

  const double mu_v = mu.item();
  const double sigma_v = sigma.item();
  if ((family == MaskFamily::gaussian || family == MaskFamily::cauchy) && sigma_v < kSigmaFloor &&
      warnings)
    warnings->sigma_clamped += 1;

  Tensor grid = time_grid(tape, n_frames);
  switch (family) {
    case MaskFamily::gaussian: {
      Tensor sc = tape.clamp(sigma, kSigmaFloor, 1.0);
      Tensor s = tape.mul_scalar(sc, 1.0 / tau);
      Tensor diff = tape.sub(grid, mu);
      Tensor den = tape.mul_scalar(tape.mul(s, s), 2.0);
      m.values = tape.exp(tape.neg(tape.div(tape.mul(diff, diff), den)));
      break;
    }
    case MaskFamily::hard_binary: {
      MaskParams p{mu_v, sigma_v, tau, MaskFamily::hard_binary};
      m.values = tape.constant({n_frames}, mask_vector(p, n_frames));
      break;
    }
    case MaskFamily::sigmoid: {
      Tensor half = tape.mul_scalar(sigma, 0.5);
      Tensor lo = tape.sub(mu, half);
      Tensor hi = tape.add(mu, half);
      Tensor left = tape.sigmoid(tape.mul_scalar(tape.sub(grid, lo), tau));
      Tensor right = tape.sigmoid(tape.mul_scalar(tape.sub(hi, grid), tau));
      m.values = tape.mul(left, right);
      break;
    }
    case MaskFamily::cauchy: {
      Tensor sc = tape.clamp(sigma, kSigmaFloor, 1.0);
      Tensor s = tape.mul_scalar(sc, 1.0 / tau);
      Tensor diff = tape.sub(grid, mu);
      Tensor dens = tape.div(s, tape.add(tape.mul(diff, diff), tape.mul(s, s)));
      m.values = tape.div(dens, tape.reduce_max(dens));
      break;
    }
  }
  return m;
}

// Elementwise complement 1 - M(t). Exact: M + negative(M) is the all-ones
// vector to machine precision.
inline Mask negative_mask(Tape& tape, const Mask& m) {
  if (!m.positive) throw ContractViolation("negative_mask: mask already has negative polarity");
  Mask out = m;
  out.values = tape.sub(tape.scalar(1.0), m.values);
  out.positive = false;
  return out;
}

// Hinge aggregation over ordered-pair cosines: 2 * sum(max(c - gamma, 0)) /
// (n (n - 1)) for the upper-triangle list. Defined 0 for a single mask.
inline double diversity_aggregate(const std::vector<double>& upper_triangle_cos, double gamma,
                                  int n_masks) {
  if (n_masks <= 1) return 0.0;
  double acc = 0.0;
  for (double c : upper_triangle_cos) acc += std::max(c - gamma, 0.0);
  return acc * 2.0 / (static_cast<double>(n_masks) * (n_masks - 1));
}

// Mean over ordered pairs (i != j) of max(cos(M_i, M_j) - gamma, 0). Cosine
// uses a single-sqrt denominator so bit-identical masks give cosine 1
// exactly. Zero-norm masks make the pair cosine 0 (flagged), with no
// gradient through that pair.
inline Tensor diversity_loss(Tape& tape, const std::vector<Mask>& masks, double gamma,
                             MaskWarnings* warnings = nullptr) {
  if (masks.empty()) throw ContractViolation("diversity_loss: needs at least one mask");
  const int n = static_cast<int>(masks.size());
  if (n == 1) return tape.scalar(0.0);
  const std::int64_t len = masks[0].values.numel();
  for (const Mask& m : masks)
    if (m.values.numel() != len) throw ShapeError("diversity_loss: masks differ in length");

  std::vector<Tensor> norms_sq(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i)
    norms_sq[i] = tape.sum(tape.mul(masks[i].values, masks[i].values));

  Tensor acc = tape.scalar(0.0);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = i + 1; j < masks.size(); ++j) {
      if (norms_sq[i].item() == 0.0 || norms_sq[j].item() == 0.0) {
        if (warnings) warnings->zero_norm_pairs += 1;
        continue;  // cosine defined 0; hinge contributes max(-gamma, 0) = 0
      }
      Tensor dot = tape.sum(tape.mul(masks[i].values, masks[j].values));
      Tensor denom = tape.sqrt(tape.mul(norms_sq[i], norms_sq[j]));
      Tensor cos = tape.div(dot, denom);
      acc = tape.add(acc, tape.relu(tape.add_scalar(cos, -gamma)));
    }
  }
  return tape.mul_scalar(acc, 2.0 / (static_cast<double>(n) * (n - 1)));
}

// Interval form used for evaluation, mirroring the hard-binary support:
// [mu - sigma/2, mu + sigma/2] clamped to [0, 1].
inline std::pair<double, double> mask_to_segment(const MaskParams& p) {
  const auto cl = [](double x) { return std::min(std::max(x, 0.0), 1.0); };
  return {cl(p.mu - p.sigma / 2.0), cl(p.mu + p.sigma / 2.0)};
}

// Plot/dump format: frame-index, normalized-time, value, family, mu, sigma, tau.
inline void write_mask_csv(std::ostream& os, const MaskParams& p, int n_frames) {
  os << "frame_index,normalized_time,value,family,mu,sigma,tau\n";
  const std::vector<double> v = mask_vector(p, n_frames);
  for (int t = 1; t <= n_frames; ++t) {
    os << t << ',' << static_cast<double>(t) / n_frames << ',' << v[static_cast<std::size_t>(t - 1)]
       << ',' << family_name(p.family) << ',' << p.mu << ',' << p.sigma << ',' << p.tau << '\n';
  }
}

}  // namespace maskcap
