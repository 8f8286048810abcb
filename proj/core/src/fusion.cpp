#include "towl/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

#include "towl/error.hpp"

namespace towl {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void hash_u64(std::uint64_t& h, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) {
    h ^= (v >> (8 * b)) & 0xffU;
    h *= kFnvPrime;
  }
}

void hash_values(std::uint64_t& h, const std::vector<double>& values) {
  hash_u64(h, values.size());
  for (double v : values) hash_u64(h, std::bit_cast<std::uint64_t>(v));
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> w(logits.begin(), logits.end());
  if (w.empty()) return w;
  const double m = *std::max_element(w.begin(), w.end());
  double s = 0.0;
  for (double& v : w) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : w) v /= s;
  return w;
}

void check_inputs(std::span<const Mat> z_list) {
  if (z_list.empty()) throw DomainError("fuse: empty modality list");
  for (const Mat& z : z_list) {
    if (!z.same_shape(z_list.front())) {
      throw ShapeError("fuse: modality shapes differ, " + z.shape_string() + " vs " +
                       z_list.front().shape_string());
    }
  }
}

void fuse_trusted(std::span<const Mat> z_list, FusedOutput& out) {
  const std::size_t n = z_list.front().rows();
  const std::size_t k = z_list.front().cols();
  const auto kd = static_cast<double>(k);
  auto& c = out.cache;
  for (const Mat& z : z_list) {
    Mat b(n, k);
    Mat u(n, 1);
    Mat s(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double strength = kd;
      for (std::size_t j = 0; j < k; ++j) {
        b(i, j) = softplus(z(i, j));
        strength += b(i, j);
      }
      for (std::size_t j = 0; j < k; ++j) b(i, j) /= strength;
      u(i, 0) = kd / strength;
      s(i, 0) = strength;
    }
    c.beliefs.push_back(std::move(b));
    c.uncertainty.push_back(std::move(u));
    c.evidence_mass.push_back(std::move(s));
  }

  c.combined_beliefs.push_back(c.beliefs.front());
  c.combined_uncertainty.push_back(c.uncertainty.front());
  for (std::size_t m = 1; m < z_list.size(); ++m) {
    const Mat& b1 = c.combined_beliefs.back();
    const Mat& u1 = c.combined_uncertainty.back();
    const Mat& b2 = c.beliefs[m];
    const Mat& u2 = c.uncertainty[m];
    Mat b(n, k);
    Mat u(n, 1);
    Mat norm(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double sum1 = 0.0;
      double sum2 = 0.0;
      double agree = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        sum1 += b1(i, j);
        sum2 += b2(i, j);
        agree += b1(i, j) * b2(i, j);
      }
      const double conflict = sum1 * sum2 - agree;
      const double den = 1.0 - conflict;
      for (std::size_t j = 0; j < k; ++j) {
        b(i, j) = (b1(i, j) * b2(i, j) + b1(i, j) * u2(i, 0) + b2(i, j) * u1(i, 0)) / den;
      }
      u(i, 0) = u1(i, 0) * u2(i, 0) / den;
      norm(i, 0) = den;
    }
    c.combined_beliefs.push_back(std::move(b));
    c.combined_uncertainty.push_back(std::move(u));
    c.normalizers.push_back(std::move(norm));
  }

  // expected probability of the combined Dirichlet: b_k + u/K
  const Mat& b = c.combined_beliefs.back();
  const Mat& u = c.combined_uncertainty.back();
  out.z = Mat(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.z(i, j) = b(i, j) + u(i, 0) / kd;
}

std::vector<Mat> trusted_backward(const FusionCache& c, const Mat& upstream) {
  const std::size_t n = upstream.rows();
  const std::size_t k = upstream.cols();
  const auto kd = static_cast<double>(k);
  const std::size_t modalities = c.inputs.size();

  // gradients w.r.t. the running combination
  Mat gb = upstream;
  Mat gu(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = upstream.row(i);
    gu(i, 0) = std::accumulate(r.begin(), r.end(), 0.0) / kd;
  }

  std::vector<Mat> g_beliefs(modalities);
  std::vector<Mat> g_uncert(modalities);
  for (std::size_t m = modalities - 1; m >= 1; --m) {
    const Mat& b1 = c.combined_beliefs[m - 1];
    const Mat& u1 = c.combined_uncertainty[m - 1];
    const Mat& b2 = c.beliefs[m];
    const Mat& u2 = c.uncertainty[m];
    const Mat& bn = c.combined_beliefs[m];
    const Mat& un = c.combined_uncertainty[m];
    const Mat& den = c.normalizers[m - 1];
    Mat gb1(n, k);
    Mat gu1(n, 1);
    Mat gb2(n, k);
    Mat gu2(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = den(i, 0);
      double g_den = gu(i, 0) * un(i, 0);
      double sum1 = 0.0;
      double sum2 = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        g_den += gb(i, j) * bn(i, j);
        sum1 += b1(i, j);
        sum2 += b2(i, j);
      }
      g_den = -g_den / d;
      // den = 1 − (Σb1·Σb2 − b1·b2)
      double acc_u1 = gu(i, 0) * u2(i, 0) / d;
      double acc_u2 = gu(i, 0) * u1(i, 0) / d;
      for (std::size_t j = 0; j < k; ++j) {
        const double g = gb(i, j) / d;
        gb1(i, j) = g * (b2(i, j) + u2(i, 0)) - g_den * (sum2 - b2(i, j));
        gb2(i, j) = g * (b1(i, j) + u1(i, 0)) - g_den * (sum1 - b1(i, j));
        acc_u1 += g * b2(i, j);
        acc_u2 += g * b1(i, j);
      }
      gu1(i, 0) = acc_u1;
      gu2(i, 0) = acc_u2;
    }
    g_beliefs[m] = std::move(gb2);
    g_uncert[m] = std::move(gu2);
    gb = std::move(gb1);
    gu = std::move(gu1);
  }
  g_beliefs[0] = std::move(gb);
  g_uncert[0] = std::move(gu);

  std::vector<Mat> d_inputs;
  d_inputs.reserve(modalities);
  for (std::size_t m = 0; m < modalities; ++m) {
    const Mat& z = c.inputs[m];
    const Mat& b = c.beliefs[m];
    const Mat& u = c.uncertainty[m];
    const Mat& s = c.evidence_mass[m];
    Mat dz(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      // b_j = e_j/S, u = K/S, S = Σe + K
      double g_s = -g_uncert[m](i, 0) * u(i, 0) / s(i, 0);
      for (std::size_t j = 0; j < k; ++j) g_s -= g_beliefs[m](i, j) * b(i, j) / s(i, 0);
      for (std::size_t j = 0; j < k; ++j) {
        const double g_e = g_beliefs[m](i, j) / s(i, 0) + g_s;
        dz(i, j) = g_e * sigmoid(z(i, j));
      }
    }
    d_inputs.push_back(std::move(dz));
  }
  return d_inputs;
}

}  // namespace

double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::WeightedAverage: return "weighted-average";
    case FusionKind::AutoWeight: return "auto-weight";
    case FusionKind::Attention: return "attention";
    case FusionKind::Trusted: return "trusted";
  }
  return "weighted-average";
}

FusionKind parse_fusion_kind(std::string_view name) {
  if (name == "weighted-average") return FusionKind::WeightedAverage;
  if (name == "auto-weight") return FusionKind::AutoWeight;
  if (name == "attention") return FusionKind::Attention;
  if (name == "trusted") return FusionKind::Trusted;
  throw ConfigError("fusion", "unknown fusion kind '" + std::string(name) + "'");
}

Fusion Fusion::single() { return weighted_average({1.0}); }

Fusion Fusion::weighted_average(std::vector<double> weights) {
  Fusion f;
  f.kind = FusionKind::WeightedAverage;
  f.weights = std::move(weights);
  return f;
}

Fusion Fusion::equal_weights(std::size_t modalities) {
  return weighted_average(std::vector<double>(modalities, 1.0 / static_cast<double>(modalities)));
}

Fusion Fusion::auto_weight(std::size_t modalities) {
  Fusion f;
  f.kind = FusionKind::AutoWeight;
  f.logits.assign(modalities, 0.0);
  return f;
}

Fusion Fusion::attention(std::size_t columns) {
  Fusion f;
  f.kind = FusionKind::Attention;
  f.score.assign(columns, 0.0);
  return f;
}

Fusion Fusion::trusted() {
  Fusion f;
  f.kind = FusionKind::Trusted;
  return f;
}

Fusion Fusion::make(FusionKind kind, std::size_t modalities, std::size_t columns) {
  switch (kind) {
    case FusionKind::WeightedAverage: return equal_weights(modalities);
    case FusionKind::AutoWeight: return auto_weight(modalities);
    case FusionKind::Attention: return attention(columns);
    case FusionKind::Trusted: return trusted();
  }
  return equal_weights(modalities);
}

std::size_t Fusion::parameter_count() const noexcept {
  switch (kind) {
    case FusionKind::AutoWeight: return logits.size();
    case FusionKind::Attention: return score.size();
    default: return 0;
  }
}

std::vector<double> Fusion::modality_weights() const {
  switch (kind) {
    case FusionKind::WeightedAverage: return weights;
    case FusionKind::AutoWeight: return softmax(logits);
    default: throw DomainError("modality_weights: fusion kind has no global weights");
  }
}

void Fusion::validate(std::size_t modalities, std::size_t columns) const {
  switch (kind) {
    case FusionKind::WeightedAverage: {
      if (weights.size() != modalities) {
        throw ShapeError("fusion: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(modalities) + " modalities");
      }
      double sum = 0.0;
      for (double w : weights) {
        if (w < 0.0) throw DomainError("fusion: weighted-average weights must be non-negative");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        throw DomainError("fusion: weighted-average weights must sum to 1, got " +
                          std::to_string(sum));
      }
      break;
    }
    case FusionKind::AutoWeight:
      if (logits.size() != modalities) {
        throw ShapeError("fusion: " + std::to_string(logits.size()) + " logits for " +
                         std::to_string(modalities) + " modalities");
      }
      break;
    case FusionKind::Attention:
      if (score.size() != columns) {
        throw ShapeError("fusion: attention score has " + std::to_string(score.size()) +
                         " entries for " + std::to_string(columns) + " columns");
      }
      break;
    case FusionKind::Trusted: break;
  }
}

std::uint64_t Fusion::fingerprint() const noexcept {
  std::uint64_t h = kFnvOffset;
  hash_u64(h, static_cast<std::uint64_t>(kind));
  hash_values(h, weights);
  hash_values(h, logits);
  hash_values(h, score);
  return h;
}

FusedOutput fuse(const Fusion& fusion, std::span<const Mat> z_list) {
  check_inputs(z_list);
  const std::size_t modalities = z_list.size();
  const std::size_t n = z_list.front().rows();
  const std::size_t k = z_list.front().cols();
  fusion.validate(modalities, k);

  FusedOutput out;
  out.cache.kind = fusion.kind;
  out.cache.fingerprint = fusion.fingerprint();
  out.cache.inputs.assign(z_list.begin(), z_list.end());

  switch (fusion.kind) {
    case FusionKind::WeightedAverage:
    case FusionKind::AutoWeight: {
      const std::vector<double> w = fusion.modality_weights();
      out.z = Mat(n, k);
      for (std::size_t m = 0; m < modalities; ++m) out.z += z_list[m] * w[m];
      out.cache.weights = Mat::from_data(1, modalities, w);
      break;
    }
    case FusionKind::Attention: {
      out.z = Mat(n, k);
      out.cache.weights = Mat(n, modalities);
      std::vector<double> scores(modalities);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < modalities; ++m) {
          const auto r = z_list[m].row(i);
          scores[m] = std::inner_product(r.begin(), r.end(), fusion.score.begin(), 0.0);
        }
        const std::vector<double> w = softmax(scores);
        for (std::size_t m = 0; m < modalities; ++m) {
          out.cache.weights(i, m) = w[m];
          const auto r = z_list[m].row(i);
          for (std::size_t j = 0; j < k; ++j) out.z(i, j) += w[m] * r[j];
        }
      }
      break;
    }
    case FusionKind::Trusted: fuse_trusted(z_list, out); break;
  }
  return out;
}

FusionGrads fuse_backward(const Fusion& fusion, const FusionCache& cache, const Mat& upstream) {
  if (cache.inputs.empty() || cache.kind != fusion.kind ||
      cache.fingerprint != fusion.fingerprint()) {
    throw StaleCacheError("fuse_backward: cache does not match the fusion parameters");
  }
  if (!upstream.same_shape(cache.inputs.front())) {
    throw ShapeError("fuse_backward: upstream " + upstream.shape_string() + " vs output " +
                     cache.inputs.front().shape_string());
  }
  const std::size_t modalities = cache.inputs.size();
  const std::size_t n = upstream.rows();
  const std::size_t k = upstream.cols();

  FusionGrads g;
  switch (fusion.kind) {
    case FusionKind::WeightedAverage:
    case FusionKind::AutoWeight: {
      const auto w = cache.weights.row(0);
      for (std::size_t m = 0; m < modalities; ++m) g.d_inputs.push_back(upstream * w[m]);
      if (fusion.kind == FusionKind::AutoWeight) {
        std::vector<double> gw(modalities);
        double mean = 0.0;
        for (std::size_t m = 0; m < modalities; ++m) {
          gw[m] = inner(upstream, cache.inputs[m]);
          mean += w[m] * gw[m];
        }
        g.d_logits.resize(modalities);
        for (std::size_t m = 0; m < modalities; ++m) g.d_logits[m] = w[m] * (gw[m] - mean);
      }
      break;
    }
    case FusionKind::Attention: {
      g.d_inputs.assign(modalities, Mat(n, k));
      g.d_score.assign(k, 0.0);
      std::vector<double> gw(modalities);
      for (std::size_t i = 0; i < n; ++i) {
        const auto up = upstream.row(i);
        double mean = 0.0;
        for (std::size_t m = 0; m < modalities; ++m) {
          const auto r = cache.inputs[m].row(i);
          gw[m] = std::inner_product(up.begin(), up.end(), r.begin(), 0.0);
          mean += cache.weights(i, m) * gw[m];
        }
        for (std::size_t m = 0; m < modalities; ++m) {
          const double w = cache.weights(i, m);
          const double gs = w * (gw[m] - mean);
          const auto r = cache.inputs[m].row(i);
          auto dz = g.d_inputs[m].row(i);
          for (std::size_t j = 0; j < k; ++j) {
            dz[j] = w * up[j] + gs * fusion.score[j];
            g.d_score[j] += gs * r[j];
          }
        }
      }
      break;
    }
    case FusionKind::Trusted: g.d_inputs = trusted_backward(cache, upstream); break;
  }
  return g;
}

}  // namespace towl
