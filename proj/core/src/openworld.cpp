#include "towl/openworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "towl/error.hpp"

namespace towl {

namespace {

constexpr double kLogClamp = 1e-12;

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

void require_mask(const Mat& z, const Mask& mask, const char* op) {
  if (mask.size() != z.rows()) {
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                     " for " + std::to_string(z.rows()) + " rows");
  }
}

std::size_t checked_label(int label, std::size_t k, std::size_t row) {
  if (label < 0 || static_cast<std::size_t>(label) >= k) {
    throw DomainError("known_loss: labeled row " + std::to_string(row) + " has class " +
                      std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
  }
  return static_cast<std::size_t>(label);
}

}  // namespace

double known_loss(const Mat& z_hat, std::span<const int> labels, const Mask& labeled_mask) {
  require_mask(z_hat, labeled_mask, "known_loss");
  if (labels.size() != z_hat.rows()) throw ShapeError("known_loss: label count mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z_hat.rows(); ++i) {
    if (!labeled_mask[i]) continue;
    sum -= clamped_log(z_hat(i, checked_label(labels[i], z_hat.cols(), i)));
    ++count;
  }
  if (count == 0) throw DomainError("known_loss: no labeled samples");
  return sum / static_cast<double>(count);
}

Selection rank_and_discard(const Mat& z_hat, const Mask& unlabeled_mask, double frac) {
  require_mask(z_hat, unlabeled_mask, "rank_and_discard");
  if (!(frac >= 0.0 && frac < 0.5)) {
    throw DomainError("rank_and_discard: frac must lie in [0, 0.5)");
  }
  const std::vector<double> keys = row_max(z_hat);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < z_hat.rows(); ++i)
    if (unlabeled_mask[i]) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  const auto drop = static_cast<std::size_t>(std::floor(frac * static_cast<double>(order.size())));
  Selection s;
  s.selected.assign(z_hat.rows(), false);
  for (std::size_t r = drop; r + drop < order.size(); ++r) s.selected[order[r]] = true;
  s.discarded_low = drop;
  s.discarded_high = drop;
  return s;
}

double unknown_loss(const Mat& z_hat, const Mask& selected_mask) {
  require_mask(z_hat, selected_mask, "unknown_loss");
  const std::vector<double> peaks = row_max(z_hat);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z_hat.rows(); ++i) {
    if (!selected_mask[i]) continue;
    sum += clamped_log(peaks[i]);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double total_loss(double l_k, double l_u, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw DomainError("total_loss: negative trade-off weight");
  return lambda1 * l_k + lambda2 * l_u;
}

double row_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double mean_entropy(const Mat& z_hat, const Mask& rows) {
  require_mask(z_hat, rows, "mean_entropy");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z_hat.rows(); ++i) {
    if (!rows[i]) continue;
    sum += row_entropy(z_hat.row(i));
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

AgentThreshold select_agent(const Mat& z_hat_val) {
  const std::size_t n = z_hat_val.rows();
  if (n == 0) throw DomainError("select_agent: empty validation set");
  const std::vector<double> peaks = row_max(z_hat_val);
  std::vector<double> entropy(n);
  for (std::size_t i = 0; i < n; ++i) entropy[i] = row_entropy(z_hat_val.row(i));

  AgentThreshold agent;
  agent.n_validation = n;
  agent.a_k = std::accumulate(peaks.begin(), peaks.end(), 0.0) / static_cast<double>(n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return entropy[a] > entropy[b]; });
  const auto top = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n)));
  double sum = 0.0;
  for (std::size_t r = 0; r < top; ++r) sum += peaks[order[r]];
  agent.n_high_entropy = top;
  agent.a_u = sum / static_cast<double>(top);
  agent.entropy_cutoff = entropy[order[top - 1]];
  agent.a = (agent.a_k + agent.a_u) / 2.0;
  return agent;
}

std::vector<int> predict(const Mat& z_hat, const AgentThreshold& agent) {
  const std::vector<std::size_t> arg = row_argmax(z_hat);
  std::vector<int> out(z_hat.rows());
  for (std::size_t i = 0; i < z_hat.rows(); ++i) {
    const double peak = z_hat.cols() ? z_hat(i, arg[i]) : 0.0;
    out[i] = peak <= agent.a ? kUnknown : static_cast<int>(arg[i]);
  }
  return out;
}

AccuracyReport open_world_accuracy(std::span<const int> pred, std::span<const int> truth,
                                   std::span<const int> known_classes) {
  if (pred.size() != truth.size()) {
    throw ShapeError("open_world_accuracy: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  auto is_known = [&](int c) {
    return std::find(known_classes.begin(), known_classes.end(), c) != known_classes.end();
  };
  AccuracyReport r;
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
  for (int c : known_classes) per_class[c] = {0, 0};
  std::size_t unknown_hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = is_known(truth[i]) ? truth[i] : kUnknown;
    const bool hit = pred[i] == t;
    r.correct += hit ? 1 : 0;
    if (t == kUnknown) {
      ++r.unknown_total;
      unknown_hits += hit ? 1 : 0;
    } else {
      auto& [hits, total] = per_class[t];
      ++total;
      hits += hit ? 1 : 0;
    }
  }
  r.total = truth.size();
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  for (const auto& [c, counts] : per_class) {
    r.per_class_recall[c] =
        counts.second ? static_cast<double>(counts.first) / static_cast<double>(counts.second)
                      : 0.0;
  }
  r.unknown_recall =
      r.unknown_total ? static_cast<double>(unknown_hits) / static_cast<double>(r.unknown_total)
                      : 0.0;
  return r;
}

LossTargets make_loss_targets(const Mat& z_hat, std::span<const int> label_columns,
                              const Mask& labeled, const Mask& pool, double discard_frac) {
  require_mask(z_hat, labeled, "make_loss_targets");
  if (label_columns.size() != z_hat.rows()) {
    throw ShapeError("make_loss_targets: label count mismatch");
  }
  LossTargets t;
  t.labeled = labeled;
  t.labels.assign(label_columns.begin(), label_columns.end());
  t.selection = rank_and_discard(z_hat, pool, discard_frac);
  t.pseudo_labels = row_argmax(z_hat);
  return t;
}

LossEvaluation evaluate_loss(const Mat& z_hat, const LossTargets& targets, double lambda1,
                             double lambda2) {
  const std::size_t n = z_hat.rows();
  require_mask(z_hat, targets.labeled, "evaluate_loss");
  LossEvaluation e;
  e.grad = Mat(n, z_hat.cols());
  LossReport& r = e.report;

  r.n_labeled = static_cast<std::size_t>(
      std::count(targets.labeled.begin(), targets.labeled.end(), true));
  if (r.n_labeled == 0) throw DomainError("evaluate_loss: no labeled samples");
  const double inv_k = 1.0 / static_cast<double>(r.n_labeled);
  for (std::size_t i = 0; i < n; ++i) {
    if (!targets.labeled[i]) continue;
    const std::size_t c = checked_label(targets.labels[i], z_hat.cols(), i);
    const double p = z_hat(i, c);
    r.l_k -= clamped_log(p) * inv_k;
    if (p > kLogClamp) e.grad(i, c) -= lambda1 * inv_k / p;
  }

  const Mask& sel = targets.selection.selected;
  r.n_unlabeled_used = static_cast<std::size_t>(std::count(sel.begin(), sel.end(), true));
  r.discarded_low = targets.selection.discarded_low;
  r.discarded_high = targets.selection.discarded_high;
  if (r.n_unlabeled_used > 0) {
    const double inv_u = 1.0 / static_cast<double>(r.n_unlabeled_used);
    for (std::size_t i = 0; i < n; ++i) {
      if (!sel[i]) continue;
      const std::size_t c = targets.pseudo_labels[i];
      const double p = z_hat(i, c);
      r.l_u += clamped_log(p) * inv_u;
      if (p > kLogClamp) e.grad(i, c) += lambda2 * inv_u / p;
    }
  } else {
    r.empty_selection = lambda2 > 0.0;
  }
  r.l_total = total_loss(r.l_k, r.l_u, lambda1, lambda2);
  return e;
}

Mat softmax_backward(const Mat& probs, const Mat& grad_probs) {
  if (!probs.same_shape(grad_probs)) throw ShapeError("softmax_backward: shape mismatch");
  Mat out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i);
    const auto g = grad_probs.row(i);
    const double dot = std::inner_product(p.begin(), p.end(), g.begin(), 0.0);
    auto o = out.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) o[j] = p[j] * (g[j] - dot);
  }
  return out;
}

}  // namespace towl
