#include "towl/prox.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "towl/error.hpp"

namespace towl {

namespace {

void require_theta(double theta, const char* op) {
  if (!(theta >= 0.0)) {
    throw DomainError(std::string(op) + ": threshold must be non-negative, got " +
                      std::to_string(theta));
  }
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

// 1-D grid minimization of f over {center + i·step : |i·step| <= radius}.
template <typename F>
double grid_argmin(double center, double radius, double step, F&& f) {
  const auto half = static_cast<long long>(std::floor(radius / step));
  double best = center;
  double best_val = f(center);
  for (long long i = -half; i <= half; ++i) {
    const double t = center + static_cast<double>(i) * step;
    const double v = f(t);
    if (v < best_val) {
      best_val = v;
      best = t;
    }
  }
  return best;
}

}  // namespace

std::string_view to_string(ProxKind kind) {
  switch (kind) {
    case ProxKind::SoftThreshold: return "soft-threshold";
    case ProxKind::RowGroupThreshold: return "row-group-threshold";
    case ProxKind::Identity: return "identity";
  }
  return "identity";
}

ProxKind parse_prox_kind(std::string_view name) {
  if (name == "soft-threshold" || name == "l1") return ProxKind::SoftThreshold;
  if (name == "row-group-threshold" || name == "l21") return ProxKind::RowGroupThreshold;
  if (name == "identity") return ProxKind::Identity;
  throw ConfigError("prox", "unknown prox kind '" + std::string(name) + "'");
}

Mat soft_threshold(const Mat& z, double theta) {
  require_theta(theta, "soft_threshold");
  Mat out(z.rows(), z.cols());
  auto o = out.data();
  auto in = z.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double mag = std::abs(in[i]) - theta;
    o[i] = mag > 0.0 ? std::copysign(mag, in[i]) : 0.0;
  }
  return out;
}

Mat row_group_threshold(const Mat& z, double theta) {
  require_theta(theta, "row_group_threshold");
  Mat out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    const double norm = row_norm(r);
    if (norm <= theta) continue;
    const double factor = (norm - theta) / norm;
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = factor * r[j];
  }
  return out;
}

Mat apply_prox(ProxKind kind, const Mat& z, double theta) {
  switch (kind) {
    case ProxKind::SoftThreshold: return soft_threshold(z, theta);
    case ProxKind::RowGroupThreshold: return row_group_threshold(z, theta);
    case ProxKind::Identity: return z;
  }
  return z;
}

double regularizer_value(ProxKind kind, const Mat& z) {
  double s = 0.0;
  switch (kind) {
    case ProxKind::SoftThreshold:
      for (double v : z.data()) s += std::abs(v);
      break;
    case ProxKind::RowGroupThreshold:
      for (std::size_t i = 0; i < z.rows(); ++i) s += row_norm(z.row(i));
      break;
    case ProxKind::Identity: break;
  }
  return s;
}

Mat prox_oracle(const Mat& x_point, double theta, ProxKind kind, double grid_radius,
                double grid_step) {
  if (!(grid_step > 0.0)) throw DomainError("prox_oracle: grid_step must be positive");
  require_theta(theta, "prox_oracle");
  if (theta == 0.0 || kind == ProxKind::Identity) return x_point;

  Mat out(x_point.rows(), x_point.cols());
  if (kind == ProxKind::SoftThreshold) {
    auto o = out.data();
    auto x = x_point.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = x[i];
      o[i] = grid_argmin(xi, grid_radius, grid_step, [&](double t) {
        return 0.5 * (t - xi) * (t - xi) + theta * std::abs(t);
      });
    }
    return out;
  }

  for (std::size_t i = 0; i < x_point.rows(); ++i) {
    const auto x = x_point.row(i);
    const double norm = row_norm(x);
    if (norm == 0.0) continue;
    // evaluate the full vector objective at z = t·x/‖x‖
    std::vector<double> z(x.size());
    auto objective = [&](double t) {
      double dist = 0.0;
      double zn = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        z[j] = t * x[j] / norm;
        dist += (z[j] - x[j]) * (z[j] - x[j]);
        zn += z[j] * z[j];
      }
      return 0.5 * dist + theta * std::sqrt(zn);
    };
    const double t = grid_argmin(norm, grid_radius, grid_step, objective);
    auto o = out.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) o[j] = t * x[j] / norm;
  }
  return out;
}

double moreau_envelope(const Mat& x_point, double mu, double theta, ProxKind kind) {
  if (!(mu > 0.0)) throw DomainError("moreau_envelope: mu must be positive");
  require_theta(theta, "moreau_envelope");
  const Mat p = apply_prox(kind, x_point, mu * theta);
  const Mat diff = p - x_point;
  const double dist2 = inner(diff, diff);
  return dist2 / (2.0 * mu) + theta * regularizer_value(kind, p);
}

double ista_objective(const IstaProblem& p, const Mat& z) {
  const Mat residual = p.x - matmul(z, p.d);
  double smooth = inner(residual, residual);
  if (p.graph && p.alpha != 0.0) smooth += p.alpha * inner(z, matmul(p.graph->matrix, z));
  const double beta = p.prox_kind == ProxKind::Identity ? 0.0 : p.beta;
  return 0.5 * smooth + beta * regularizer_value(p.prox_kind, z);
}

double ista_lipschitz(const IstaProblem& p) {
  if (p.d.empty() || p.d.max_abs() == 0.0) {
    throw DomainError("ista_lipschitz: dictionary is zero");
  }
  const double dict = spectral_norm(p.d);
  double l = dict * dict;
  if (p.graph && p.alpha != 0.0) l += p.alpha * spectral_norm(p.graph->matrix);
  return l;
}

Mat ista_step(const IstaProblem& p, const Mat& z) { return ista_step(p, z, ista_lipschitz(p)); }

Mat ista_step(const IstaProblem& p, const Mat& z, double lipschitz) {
  if (z.rows() != p.n() || z.cols() != p.k()) {
    throw ShapeError("ista_step: iterate is " + z.shape_string() + ", expected " +
                     std::to_string(p.n()) + "x" + std::to_string(p.k()));
  }
  if (p.d.cols() != p.x.cols()) {
    throw ShapeError("ista_step: dictionary " + p.d.shape_string() + " does not match data " +
                     p.x.shape_string());
  }
  // gradient of the smooth part: (ZD − X)Dᵀ + αGZ
  Mat grad = matmul_nt(matmul(z, p.d) - p.x, p.d);
  if (p.graph && p.alpha != 0.0) {
    if (p.graph->n() != p.n()) {
      throw ShapeError("ista_step: graph is " + p.graph->matrix.shape_string() + " for N=" +
                       std::to_string(p.n()));
    }
    grad += p.alpha * matmul(p.graph->matrix, z);
  }
  Mat forward = z - grad * (1.0 / lipschitz);
  return apply_prox(p.prox_kind, forward, p.beta / lipschitz);
}

IstaResult ista_solve(const IstaProblem& p, std::size_t max_iters, double tol) {
  if (max_iters == 0) throw DomainError("ista_solve: max_iters must be >= 1");
  const double lipschitz = ista_lipschitz(p);
  IstaResult result;
  result.z = Mat(p.n(), p.k());
  result.trace.push_back(ista_objective(p, result.z));
  for (std::size_t it = 0; it < max_iters; ++it) {
    Mat next = ista_step(p, result.z, lipschitz);
    const double change = (next - result.z).frobenius_norm();
    const double scale = std::max(1.0, result.z.frobenius_norm());
    result.z = std::move(next);
    result.trace.push_back(ista_objective(p, result.z));
    result.iterations = it + 1;
    if (change < tol * scale) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace towl
