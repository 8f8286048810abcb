#include "towl/unroll.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
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

void hash_span(std::uint64_t& h, std::span<const double> values) {
  hash_u64(h, values.size());
  for (double v : values) hash_u64(h, std::bit_cast<std::uint64_t>(v));
}

const GraphOperator* graph_for(const UnrolledModel& m, std::size_t modality) {
  if (modality < m.graphs.size() && m.graphs[modality]) return &*m.graphs[modality];
  return nullptr;
}

bool uses_graph_term(const LayerParams& p) {
  return p.graph_kind != GraphKind::None && p.alpha != 0.0;
}

// Z ↦ ZF − α·G·Z·W
Mat linear_part(const LayerParams& p, const Mat& z, const GraphOperator* graph) {
  Mat out = matmul(z, p.f);
  if (uses_graph_term(p) && graph) out -= p.alpha * matmul(matmul(graph->matrix, z), p.w);
  return out;
}

// adjoint: Y ↦ YFᵀ − α·Gᵀ·Y·Wᵀ
Mat linear_part_adjoint(const LayerParams& p, const Mat& y, const GraphOperator* graph) {
  Mat out = matmul_nt(y, p.f);
  if (uses_graph_term(p) && graph) {
    out -= p.alpha * matmul_nt(matmul_tn(graph->matrix, y), p.w);
  }
  return out;
}

}  // namespace

void LayerParams::validate() const {
  const std::size_t kk = f.rows();
  if (f.cols() != kk || w.rows() != kk || w.cols() != kk || u.cols() != kk) {
    throw ShapeError("LayerParams: inconsistent shapes F " + f.shape_string() + ", W " +
                     w.shape_string() + ", U " + u.shape_string());
  }
  if (theta.empty()) throw DomainError("LayerParams: need at least one layer threshold");
  for (double t : theta) {
    if (!(t >= 0.0)) throw DomainError("LayerParams: thresholds must be non-negative");
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw DomainError("LayerParams: alpha must lie in [0, 1), got " + std::to_string(alpha));
  }
}

void UnrolledModel::validate() const {
  if (t_layers < 1) throw DomainError("UnrolledModel: t_layers must be >= 1");
  if (params.empty()) throw DomainError("UnrolledModel: no modalities");
  for (const LayerParams& p : params) {
    p.validate();
    if (p.layers() != t_layers) {
      throw ShapeError("UnrolledModel: " + std::to_string(p.layers()) + " thresholds for " +
                       std::to_string(t_layers) + " layers");
    }
    if (p.k() != params.front().k()) throw ShapeError("UnrolledModel: modalities disagree on K");
  }
  fusion.validate(params.size(), params.front().k());
}

std::uint64_t UnrolledModel::fingerprint() const noexcept {
  std::uint64_t h = kFnvOffset;
  hash_u64(h, t_layers);
  for (const LayerParams& p : params) {
    hash_span(h, p.f.data());
    hash_span(h, p.w.data());
    hash_span(h, p.u.data());
    hash_span(h, p.theta);
    hash_u64(h, std::bit_cast<std::uint64_t>(p.alpha));
    hash_u64(h, static_cast<std::uint64_t>(p.prox_kind));
    hash_u64(h, static_cast<std::uint64_t>(p.graph_kind));
  }
  hash_u64(h, fusion.fingerprint());
  return h;
}

Mat random_dictionary(std::size_t k, std::size_t d_feat, Rng& rng) {
  if (k == 0 || d_feat == 0) throw DomainError("random_dictionary: empty shape");
  Mat d = rng.normal_matrix(k, d_feat);
  for (std::size_t i = 0; i < k; ++i) {
    auto r = d.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    s = std::sqrt(s);
    for (double& v : r) v /= s;
  }
  return d;
}

LayerParams ista_layer_params(const IstaProblem& p, std::size_t t_layers, Rng& rng,
                              std::size_t k) {
  if (t_layers < 1) throw DomainError("init_from_ista: t_layers must be >= 1");
  IstaProblem problem = p;
  if (problem.d.empty()) {
    if (k == 0) throw DomainError("init_from_ista: no dictionary and no K given");
    problem.d = random_dictionary(k, problem.x.cols(), rng);
  }
  const double lip = ista_lipschitz(problem);
  const std::size_t kk = problem.d.rows();

  LayerParams lp;
  lp.prox_kind = problem.prox_kind;
  lp.f = Mat::identity(kk) - matmul_nt(problem.d, problem.d) * (1.0 / lip);
  lp.u = problem.d.transpose() * (1.0 / lip);
  const double beta = problem.prox_kind == ProxKind::Identity ? 0.0 : problem.beta;
  lp.theta.assign(t_layers, beta / lip);
  const bool graph_term = problem.graph.has_value() && problem.alpha != 0.0;
  lp.graph_kind = graph_term ? problem.graph->kind : GraphKind::None;
  if (!graph_term) {
    lp.alpha = 0.0;
    lp.w = Mat::identity(kk) * (1.0 / lip);
    if (problem.alpha > 0.0 && problem.alpha < 1.0) lp.alpha = problem.alpha;
  } else if (problem.alpha < 1.0) {
    lp.alpha = problem.alpha;
    lp.w = Mat::identity(kk) * (1.0 / lip);
  } else {
    lp.alpha = 0.5;
    lp.w = Mat::identity(kk) * (problem.alpha / (0.5 * lip));
  }
  return lp;
}

UnrolledModel init_from_ista(const IstaProblem& p, std::size_t t_layers, Rng& rng,
                             std::size_t k) {
  UnrolledModel m;
  m.t_layers = t_layers;
  m.seed = rng.seed();
  m.params.push_back(ista_layer_params(p, t_layers, rng, k));
  m.graphs.push_back(p.graph);
  m.fusion = Fusion::single();
  return m;
}

Mat layer_preactivation(const LayerParams& params, const Mat& z, const Mat& x,
                        const GraphOperator* graph) {
  if (z.cols() != params.k() || x.cols() != params.d_feat() || z.rows() != x.rows()) {
    throw ShapeError("layer_forward: Z " + z.shape_string() + " and X " + x.shape_string() +
                     " do not match F " + params.f.shape_string() + ", U " +
                     params.u.shape_string());
  }
  Mat a = matmul(x, params.u);
  a += matmul(z, params.f);
  if (uses_graph_term(params)) {
    if (!graph) throw DomainError("layer_forward: graph term requested but no graph attached");
    if (graph->n() != z.rows()) {
      throw ShapeError("layer_forward: graph " + graph->matrix.shape_string() + " for N=" +
                       std::to_string(z.rows()));
    }
    a -= params.alpha * matmul(matmul(graph->matrix, z), params.w);
  }
  return a;
}

Mat layer_forward(const LayerParams& params, std::size_t layer_index, const Mat& z, const Mat& x,
                  const GraphOperator* graph) {
  if (layer_index >= params.layers()) {
    throw DomainError("layer_forward: layer " + std::to_string(layer_index) + " of " +
                      std::to_string(params.layers()));
  }
  return apply_prox(params.prox_kind, layer_preactivation(params, z, x, graph),
                    params.theta[layer_index]);
}

ForwardResult model_forward(const UnrolledModel& m, std::span<const Mat> x_per_modality) {
  m.validate();
  if (x_per_modality.size() != m.modalities()) {
    throw ShapeError("model_forward: " + std::to_string(x_per_modality.size()) +
                     " inputs for " + std::to_string(m.modalities()) + " modalities");
  }
  ForwardResult result;
  result.cache.fingerprint = m.fingerprint();
  const std::size_t n = x_per_modality.front().rows();

  for (std::size_t mod = 0; mod < m.modalities(); ++mod) {
    const LayerParams& p = m.params[mod];
    const Mat& x = x_per_modality[mod];
    if (x.rows() != n) throw ShapeError("model_forward: modalities disagree on N");
    const GraphOperator* graph = graph_for(m, mod);
    if (uses_graph_term(p) && !graph) {
      throw DomainError("model_forward: modality " + std::to_string(mod) +
                        " needs a graph but none is attached");
    }
    ModalityCache mc;
    mc.x = x;
    Mat z(n, p.k());
    const Mat xu = matmul(x, p.u);
    for (std::size_t t = 0; t < m.t_layers; ++t) {
      Mat a = xu;
      a += matmul(z, p.f);
      Mat gz;
      if (uses_graph_term(p)) {
        if (graph->n() != n) throw ShapeError("model_forward: graph size does not match N");
        gz = matmul(graph->matrix, z);
        a -= p.alpha * matmul(gz, p.w);
      }
      Mat next = apply_prox(p.prox_kind, a, p.theta[t]);
      mc.inputs.push_back(std::move(z));
      mc.preactivations.push_back(std::move(a));
      mc.graph_products.push_back(std::move(gz));
      z = std::move(next);
    }
    result.z_per_modality.push_back(std::move(z));
    result.cache.modalities.push_back(std::move(mc));
  }

  FusedOutput fused = fuse(m.fusion, result.z_per_modality);
  result.z_fused = std::move(fused.z);
  result.cache.fusion = std::move(fused.cache);
  return result;
}

double linear_part_norm(const LayerParams& params, const GraphOperator* graph, std::size_t n) {
  const std::size_t k = params.k();
  Rng rng(0x11ea2ULL);
  Mat v = rng.normal_matrix(n, k);
  v *= 1.0 / v.frobenius_norm();
  double sigma = 0.0;
  for (std::size_t it = 0; it < 5000; ++it) {
    Mat next = linear_part_adjoint(params, linear_part(params, v, graph), graph);
    const double lambda = next.frobenius_norm();
    if (lambda == 0.0) return 0.0;
    next *= 1.0 / lambda;
    const double estimate = std::sqrt(lambda);
    v = std::move(next);
    const bool converged = sigma > 0.0 && std::abs(estimate - sigma) < 1e-14 * estimate;
    sigma = estimate;
    if (converged) break;
  }
  return sigma;
}

double rescale_linear_part(UnrolledModel& m, std::size_t modality, double target,
                           std::size_t n) {
  if (modality >= m.modalities()) throw DomainError("rescale_linear_part: no such modality");
  LayerParams& p = m.params[modality];
  const double current = linear_part_norm(p, graph_for(m, modality), n);
  if (current == 0.0) return 1.0;
  const double factor = target / current;
  p.f *= factor;
  p.w *= factor;
  return factor;
}

constexpr double kStepResolution = 1e-8;

ContractionReport verify_contraction(const UnrolledModel& m, std::size_t modality, const Mat& x,
                                     std::size_t trials, Rng& rng, double fixed_point_tol,
                                     std::size_t max_iterations) {
  if (trials < 1) throw DomainError("verify_contraction: trials must be >= 1");
  if (modality >= m.modalities()) throw DomainError("verify_contraction: no such modality");
  const LayerParams& p = m.params[modality];
  const GraphOperator* graph = graph_for(m, modality);
  const std::size_t n = x.rows();
  const std::size_t k = p.k();
  auto phi = [&](const Mat& z) { return layer_forward(p, 0, z, x, graph); };

  ContractionReport report;
  report.trials = trials;
  report.linear_norm = linear_part_norm(p, graph, n);
  report.analytic_bound = spectral_norm(p.f);
  if (uses_graph_term(p) && graph) {
    report.analytic_bound += p.alpha * spectral_norm(p.w) * graph->spectral_norm;
  }

  for (std::size_t t = 0; t < trials; ++t) {
    const Mat z1 = rng.normal_matrix(n, k);
    const Mat z2 = rng.normal_matrix(n, k);
    const double den = (z1 - z2).frobenius_norm();
    if (den == 0.0) continue;
    const double ratio = (phi(z1) - phi(z2)).frobenius_norm() / den;
    report.max_ratio = std::max(report.max_ratio, ratio);
  }
  report.ratio_within_bound = report.max_ratio <= report.linear_norm + 1e-9;
  report.is_contraction = report.linear_norm < 1.0;

  Mat z(n, k);
  Mat next = phi(z);
  double prev_step = (next - z).frobenius_norm();
  report.initial_step = prev_step;
  report.iterations = 1;
  double log_sum = 0.0;
  std::size_t ratio_count = 0;
  z = std::move(next);
  double step = prev_step;
  while (step >= fixed_point_tol && report.iterations < max_iterations) {
    next = phi(z);
    step = (next - z).frobenius_norm();
    ++report.iterations;
    // below this the step is a difference of nearly equal matrices and the
    // ratio is dominated by rounding
    const double floor = kStepResolution * std::max(1.0, z.frobenius_norm());
    if (prev_step > floor) {
      const double r = step / prev_step;
      report.decay_rate = std::max(report.decay_rate, r);
      if (r > 0.0) {
        log_sum += std::log(r);
        ++ratio_count;
      }
    }
    prev_step = step;
    z = std::move(next);
  }
  report.final_step = step;
  report.reached_fixed_point = step < fixed_point_tol;
  report.mean_decay_rate = ratio_count ? std::exp(log_sum / static_cast<double>(ratio_count)) : 0.0;

  if (report.initial_step < fixed_point_tol || report.linear_norm == 0.0) {
    report.iteration_bound = 2;
  } else if (report.linear_norm < 1.0) {
    const double needed =
        std::log(fixed_point_tol / report.initial_step) / std::log(report.linear_norm);
    report.iteration_bound = static_cast<std::size_t>(std::ceil(std::max(needed, 0.0))) + 1;
  } else {
    report.iteration_bound = std::numeric_limits<std::size_t>::max();
  }
  return report;
}

}  // namespace towl
