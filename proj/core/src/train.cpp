#include "towl/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "towl/error.hpp"
#include "towl/format.hpp"

namespace towl {

namespace {

bool uses_graph_term(const LayerParams& p) {
  return p.graph_kind != GraphKind::None && p.alpha != 0.0;
}

const GraphOperator* graph_for(const UnrolledModel& m, std::size_t modality) {
  if (modality < m.graphs.size() && m.graphs[modality]) return &*m.graphs[modality];
  return nullptr;
}

struct ProxGrad {
  Mat d_a;
  double d_theta = 0.0;
};

ProxGrad prox_backward(ProxKind kind, const Mat& a, double theta, const Mat& g) {
  ProxGrad out{Mat(a.rows(), a.cols()), 0.0};
  switch (kind) {
    case ProxKind::Identity:
      out.d_a = g;
      break;
    case ProxKind::SoftThreshold:
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a.data()[i];
        if (std::abs(v) > theta || theta == 0.0) {
          out.d_a.data()[i] = g.data()[i];
          if (v > 0.0) out.d_theta -= g.data()[i];
          if (v < 0.0) out.d_theta += g.data()[i];
        }
      }
      break;
    case ProxKind::RowGroupThreshold:
      for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ar = a.row(i);
        auto gr = g.row(i);
        double r2 = 0.0;
        double ag = 0.0;
        for (std::size_t j = 0; j < ar.size(); ++j) {
          r2 += ar[j] * ar[j];
          ag += ar[j] * gr[j];
        }
        const double r = std::sqrt(r2);
        if (theta == 0.0) {
          std::copy(gr.begin(), gr.end(), out.d_a.row(i).begin());
          continue;
        }
        if (r <= theta) continue;
        const double shrink = 1.0 - theta / r;
        const double radial = theta * ag / (r2 * r);
        auto dr = out.d_a.row(i);
        for (std::size_t j = 0; j < ar.size(); ++j) dr[j] = shrink * gr[j] + radial * ar[j];
        out.d_theta -= ag / r;
      }
      break;
  }
  return out;
}

// One bit per prox decision (element or row above threshold).
std::vector<bool> active_pattern(const UnrolledModel& m, const ForwardCache& cache) {
  std::vector<bool> bits;
  for (std::size_t mod = 0; mod < m.modalities(); ++mod) {
    const LayerParams& p = m.params[mod];
    for (std::size_t t = 0; t < cache.modalities[mod].preactivations.size(); ++t) {
      const Mat& a = cache.modalities[mod].preactivations[t];
      const double theta = p.theta[t];
      if (p.prox_kind == ProxKind::SoftThreshold) {
        for (double v : a.data()) bits.push_back(std::abs(v) > theta);
      } else if (p.prox_kind == ProxKind::RowGroupThreshold) {
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double r2 = 0.0;
          for (double v : a.row(i)) r2 += v * v;
          bits.push_back(std::sqrt(r2) > theta);
        }
      }
    }
  }
  return bits;
}

Mat upstream_from_probs(const UnrolledModel& m, const Mat& probs, const Mat& grad_probs) {
  if (m.fusion.outputs_probabilities()) return grad_probs;
  return softmax_backward(probs, grad_probs);
}

AccuracyReport accuracy_on(const Mat& probs, const OpenWorldDataset& ds, const Mask& rows,
                           const AgentThreshold& agent, std::vector<int>* raw_predictions) {
  const std::vector<int> cols = predict(select_rows(probs, rows), agent);
  std::vector<int> pred;
  std::vector<int> truth;
  pred.reserve(cols.size());
  std::size_t r = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (!rows[i]) continue;
    const int c = cols[r++];
    pred.push_back(c == kUnknown ? kUnknown : ds.known_classes[static_cast<std::size_t>(c)]);
    truth.push_back(ds.labels[i]);
  }
  if (raw_predictions) *raw_predictions = pred;
  return open_world_accuracy(pred, truth, ds.known_classes);
}

std::size_t count(const Mask& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), true)); }

}  // namespace

bool GradSet::all_finite() const noexcept {
  for (const auto& lg : modalities) {
    if (!lg.d_f.all_finite() || !lg.d_w.all_finite() || !lg.d_u.all_finite()) return false;
    for (double v : lg.d_theta) {
      if (!std::isfinite(v)) return false;
    }
  }
  for (double v : d_logits) {
    if (!std::isfinite(v)) return false;
  }
  for (double v : d_score) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

GradSet backward(const UnrolledModel& model, const ForwardCache& cache, const Mat& upstream) {
  if (cache.fingerprint != model.fingerprint()) {
    throw StaleCacheError("backward: forward cache was recorded for different parameters");
  }
  if (cache.modalities.size() != model.modalities()) {
    throw StaleCacheError("backward: forward cache has " +
                          std::to_string(cache.modalities.size()) + " modalities, model has " +
                          std::to_string(model.modalities()));
  }
  FusionGrads fg = fuse_backward(model.fusion, cache.fusion, upstream);

  GradSet grads;
  grads.d_logits = std::move(fg.d_logits);
  grads.d_score = std::move(fg.d_score);
  for (std::size_t mod = 0; mod < model.modalities(); ++mod) {
    const LayerParams& p = model.params[mod];
    const ModalityCache& mc = cache.modalities[mod];
    const GraphOperator* graph = graph_for(model, mod);
    const bool graph_term = uses_graph_term(p);
    LayerGrads lg{Mat(p.k(), p.k()), Mat(p.k(), p.k()), Mat(p.d_feat(), p.k()),
                  std::vector<double>(p.layers(), 0.0)};

    Mat dz = std::move(fg.d_inputs[mod]);
    Mat d_a_sum(dz.rows(), dz.cols());  // XU is shared by every layer
    for (std::size_t t = mc.preactivations.size(); t-- > 0;) {
      ProxGrad pg = prox_backward(p.prox_kind, mc.preactivations[t], p.theta[t], dz);
      lg.d_theta[t] = pg.d_theta;
      d_a_sum += pg.d_a;
      if (t == 0) break;  // Z⁽⁰⁾ = 0 contributes nothing further
      lg.d_f += matmul_tn(mc.inputs[t], pg.d_a);
      dz = matmul_nt(pg.d_a, p.f);
      if (graph_term) {
        lg.d_w -= p.alpha * matmul_tn(mc.graph_products[t], pg.d_a);
        dz -= p.alpha * matmul_nt(matmul_tn(graph->matrix, pg.d_a), p.w);
      }
    }
    lg.d_u = matmul_tn(mc.x, d_a_sum);
    grads.modalities.push_back(std::move(lg));
  }
  return grads;
}

std::vector<ParamBlock> parameter_blocks(UnrolledModel& model) {
  std::vector<ParamBlock> blocks;
  for (std::size_t mod = 0; mod < model.modalities(); ++mod) {
    LayerParams& p = model.params[mod];
    const std::string prefix = "m" + std::to_string(mod) + ".";
    blocks.push_back({prefix + "F", p.f.data()});
    blocks.push_back({prefix + "W", p.w.data()});
    blocks.push_back({prefix + "U", p.u.data()});
    blocks.push_back({prefix + "theta", p.theta});
  }
  if (!model.fusion.logits.empty()) blocks.push_back({"fusion.logits", model.fusion.logits});
  if (!model.fusion.score.empty()) blocks.push_back({"fusion.score", model.fusion.score});
  return blocks;
}

std::vector<GradBlock> gradient_blocks(const GradSet& grads, const UnrolledModel& model) {
  if (grads.modalities.size() != model.modalities()) {
    throw ShapeError("gradient_blocks: gradients for " +
                     std::to_string(grads.modalities.size()) + " modalities, model has " +
                     std::to_string(model.modalities()));
  }
  std::vector<GradBlock> blocks;
  for (std::size_t mod = 0; mod < grads.modalities.size(); ++mod) {
    const LayerGrads& g = grads.modalities[mod];
    const std::string prefix = "m" + std::to_string(mod) + ".";
    blocks.push_back({prefix + "F", g.d_f.data()});
    blocks.push_back({prefix + "W", g.d_w.data()});
    blocks.push_back({prefix + "U", g.d_u.data()});
    blocks.push_back({prefix + "theta", g.d_theta});
  }
  if (!model.fusion.logits.empty()) blocks.push_back({"fusion.logits", grads.d_logits});
  if (!model.fusion.score.empty()) blocks.push_back({"fusion.score", grads.d_score});
  return blocks;
}

Mat probabilities(const UnrolledModel& model, const Mat& fused) {
  if (model.fusion.outputs_probabilities()) return fused;
  return row_softmax(fused);
}

TrainingBatch make_batch(const OpenWorldDataset& ds) {
  ds.validate();
  return {ds.modalities, ds.label_columns(), ds.masks.labeled_train, ds.unknown_loss_pool()};
}

LossAndGrads loss_and_grads(const UnrolledModel& model, const TrainingBatch& batch,
                            const LossConfig& cfg, const LossTargets* targets) {
  LossAndGrads out;
  out.forward = model_forward(model, batch.xs);
  out.probs = probabilities(model, out.forward.z_fused);
  out.targets = targets ? *targets
                        : make_loss_targets(out.probs, batch.label_columns, batch.labeled,
                                            batch.pool, cfg.discard_frac);
  LossEvaluation ev = evaluate_loss(out.probs, out.targets, cfg.lambda1, cfg.lambda2);
  out.report = ev.report;
  out.grads = backward(model, out.forward.cache, upstream_from_probs(model, out.probs, ev.grad));
  return out;
}

double loss_value(const UnrolledModel& model, const TrainingBatch& batch, const LossConfig& cfg,
                  const LossTargets& targets) {
  ForwardResult fwd = model_forward(model, batch.xs);
  return evaluate_loss(probabilities(model, fwd.z_fused), targets, cfg.lambda1, cfg.lambda2)
      .report.l_total;
}

GradCheckReport grad_check(const UnrolledModel& model, const TrainingBatch& batch,
                           const LossConfig& cfg, double epsilon, double tol, double abs_floor) {
  if (!(epsilon > 0.0)) throw DomainError("grad_check: epsilon must be positive");
  const LossAndGrads base = loss_and_grads(model, batch, cfg);
  const std::vector<bool> base_pattern = active_pattern(model, base.forward.cache);

  UnrolledModel probe = model;
  std::vector<ParamBlock> params = parameter_blocks(probe);
  const std::vector<GradBlock> analytic = gradient_blocks(base.grads, model);

  GradCheckReport report;
  report.tol = tol;
  report.epsilon = epsilon;
  auto evaluate_at = [&](std::vector<bool>& pattern) {
    ForwardResult fwd = model_forward(probe, batch.xs);
    pattern = active_pattern(probe, fwd.cache);
    return evaluate_loss(probabilities(probe, fwd.z_fused), base.targets, cfg.lambda1,
                         cfg.lambda2)
        .report.l_total;
  };

  for (std::size_t b = 0; b < params.size(); ++b) {
    GradCheckEntry entry;
    entry.name = params[b].name;
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      double& slot = params[b].values[i];
      const double saved = slot;
      std::vector<bool> plus_pattern;
      std::vector<bool> minus_pattern;
      slot = saved + epsilon;
      const double plus = evaluate_at(plus_pattern);
      slot = saved - epsilon;
      const double minus = evaluate_at(minus_pattern);
      slot = saved;
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++entry.kinks_excluded;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic[b].values[i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.kinks_excluded += entry.kinks_excluded;
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("optimizer", "unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be positive");
  if (!(lambda1 >= 0.0)) throw ConfigError("lambda1", "must be >= 0");
  if (!(lambda2 >= 0.0)) throw ConfigError("lambda2", "must be >= 0");
  if (!(discard_frac >= 0.0 && discard_frac < 0.5)) {
    throw ConfigError("discard_frac", "must lie in [0, 0.5)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be positive");
}

Optimizer::Optimizer(const TrainConfig& cfg, const UnrolledModel& model) : cfg_(cfg) {
  cfg_.validate();
  UnrolledModel copy = model;
  for (const ParamBlock& b : parameter_blocks(copy)) {
    m_.emplace_back(b.values.size(), 0.0);
    v_.emplace_back(b.values.size(), 0.0);
  }
}

void Optimizer::step(UnrolledModel& model, const GradSet& grads) {
  std::vector<ParamBlock> params = parameter_blocks(model);
  const std::vector<GradBlock> g = gradient_blocks(grads, model);
  if (params.size() != m_.size()) {
    throw ShapeError("Optimizer::step: model layout changed since construction");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != g[b].values.size() || g[b].values.size() != m_[b].size()) {
      throw ShapeError("Optimizer::step: gradient block " + params[b].name + " has " +
                       std::to_string(g[b].values.size()) + " entries, expected " +
                       std::to_string(m_[b].size()));
    }
    for (std::size_t i = 0; i < m_[b].size(); ++i) {
      const double gi = g[b].values[i];
      if (cfg_.optimizer == OptimizerKind::Sgd) {
        params[b].values[i] -= cfg_.lr * gi;
        continue;
      }
      m_[b][i] = cfg_.beta1 * m_[b][i] + (1.0 - cfg_.beta1) * gi;
      v_[b][i] = cfg_.beta2 * v_[b][i] + (1.0 - cfg_.beta2) * gi * gi;
      const double m_hat = m_[b][i] / c1;
      const double v_hat = v_[b][i] / c2;
      params[b].values[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
  for (LayerParams& p : model.params) {
    for (double& th : p.theta) th = std::max(th, 0.0);
  }
}

UnrolledModel build_model(const OpenWorldDataset& ds, const ModelSpec& spec, std::uint64_t seed,
                          bool multi_modal) {
  if (ds.modalities.empty()) throw DomainError("build_model: dataset has no modalities");
  if (ds.k() == 0) throw DomainError("build_model: no known classes");
  if (spec.t_layers < 1) throw ConfigError("layers", "must be >= 1");
  if (!(spec.alpha >= 0.0 && spec.alpha < 1.0)) throw ConfigError("alpha", "must lie in [0, 1)");
  if (!(spec.beta >= 0.0)) throw ConfigError("beta", "must be >= 0");

  UnrolledModel m;
  m.t_layers = spec.t_layers;
  m.seed = seed;
  for (std::size_t mod = 0; mod < ds.modalities.size(); ++mod) {
    const Mat& x = ds.modalities[mod];
    std::optional<GraphOperator> graph;
    if (spec.graph != GraphKind::None) {
      if (mod < ds.graphs.size() && ds.graphs[mod]) {
        graph = ds.graphs[mod];
      } else {
        graph = build_graph(spec.graph, x, spec.knn_k);
      }
    }
    Rng rng(seed);
    IstaProblem p{x, Mat{}, spec.alpha, spec.beta, graph, spec.prox};
    m.params.push_back(ista_layer_params(p, spec.t_layers, rng, ds.k()));
    m.graphs.push_back(std::move(graph));
  }
  if (!multi_modal) {
    m.fusion = Fusion::single();
  } else if (spec.fusion == FusionKind::WeightedAverage && !spec.fusion_weights.empty()) {
    m.fusion = Fusion::weighted_average(spec.fusion_weights);
  } else {
    m.fusion = Fusion::make(spec.fusion, m.modalities(), m.k());
  }
  m.validate();
  return m;
}

EpochRecord train_epoch(UnrolledModel& model, Optimizer& opt, const OpenWorldDataset& ds,
                        const TrainingBatch& batch, const TrainConfig& cfg, std::size_t epoch) {
  LossAndGrads lg = loss_and_grads(model, batch, cfg.loss());
  if (!std::isfinite(lg.report.l_total) || !lg.grads.all_finite()) {
    throw NumericError("train: non-finite loss or gradient at epoch " + std::to_string(epoch));
  }
  EpochRecord rec{epoch, lg.report.l_k, lg.report.l_u, lg.report.l_total, 0.0};
  const AgentThreshold agent = select_agent(select_rows(lg.probs, ds.masks.validation));
  rec.acc_val = accuracy_on(lg.probs, ds, ds.masks.validation, agent, nullptr).accuracy;
  opt.step(model, lg.grads);
  return rec;
}

AgentThreshold agent_from_validation(const UnrolledModel& model, const OpenWorldDataset& ds) {
  const ForwardResult fwd = model_forward(model, ds.modalities);
  return select_agent(select_rows(probabilities(model, fwd.z_fused), ds.masks.validation));
}

EvaluationMetrics evaluate(const UnrolledModel& model, const OpenWorldDataset& ds,
                           const AgentThreshold& agent) {
  const ForwardResult fwd = model_forward(model, ds.modalities);
  const Mat probs = probabilities(model, fwd.z_fused);
  EvaluationMetrics metrics;
  metrics.agent = agent;
  metrics.n_test = count(ds.masks.test);
  metrics.accuracy = accuracy_on(probs, ds, ds.masks.test, agent, &metrics.predictions);
  return metrics;
}

namespace {

ProtocolResult run_protocol(const OpenWorldDataset& ds, const TrainConfig& cfg,
                            const ModelSpec& spec, bool multi_modal) {
  cfg.validate();
  ds.validate();
  if (count(ds.masks.labeled_train) == 0) {
    throw DomainError("train: the labeled training set is empty");
  }
  if (count(ds.masks.validation) == 0) throw DomainError("train: the validation set is empty");
  ProtocolResult result;
  result.model = build_model(ds, spec, cfg.seed, multi_modal);
  const TrainingBatch batch = make_batch(ds);
  Optimizer opt(cfg, result.model);
  result.trace.reserve(cfg.epochs);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    result.trace.push_back(train_epoch(result.model, opt, ds, batch, cfg, e));
  }
  result.agent = agent_from_validation(result.model, ds);
  result.metrics = evaluate(result.model, ds, result.agent);
  return result;
}

}  // namespace

ProtocolResult run_protocol1(const OpenWorldDataset& ds, const TrainConfig& cfg,
                             const ModelSpec& spec) {
  if (ds.modalities.size() != 1) {
    throw DomainError("protocol 1 expects one modality, got " +
                      std::to_string(ds.modalities.size()));
  }
  return run_protocol(ds, cfg, spec, false);
}

ProtocolResult run_protocol2(const OpenWorldDataset& ds, const TrainConfig& cfg,
                             const ModelSpec& spec) {
  return run_protocol(ds, cfg, spec, true);
}

void write_trace_csv(std::ostream& out, std::span<const EpochRecord> trace) {
  out << "epoch,l_k,l_u,l_total,acc_val\n";
  for (const EpochRecord& r : trace) {
    out << r.epoch << ',' << format_double(r.l_k) << ',' << format_double(r.l_u) << ','
        << format_double(r.l_total) << ',' << format_double(r.acc_val) << '\n';
  }
}

}  // namespace towl
