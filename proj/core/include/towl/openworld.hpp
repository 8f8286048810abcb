#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "towl/numerics.hpp"

namespace towl {

using Mask = std::vector<bool>;

/// Label assigned to a rejected sample.
inline constexpr int kUnknown = -1;

/// Rejection threshold a = (a_k + a_u) / 2 from validation outputs.
struct AgentThreshold {
  double a = 0.0;
  double a_k = 0.0;  // mean max-probability over all validation rows
  double a_u = 0.0;  // mean max-probability over the highest-entropy rows
  double entropy_cutoff = 0.0;  // smallest entropy inside the high-entropy set
  std::size_t n_validation = 0;
  std::size_t n_high_entropy = 0;
};

struct LossReport {
  double l_k = 0.0;
  double l_u = 0.0;
  double l_total = 0.0;
  std::size_t n_labeled = 0;
  std::size_t n_unlabeled_used = 0;
  std::size_t discarded_low = 0;
  std::size_t discarded_high = 0;
  /// Set when λ2 > 0 but no unlabeled row survived selection.
  bool empty_selection = false;
};

/// −(1/N_k) Σ log Ẑ[i, yᵢ] over labeled rows, log clamped at 1e-12.
/// `labels` holds class columns for labeled rows (other entries ignored).
double known_loss(const Mat& z_hat, std::span<const int> labels, const Mask& labeled_mask);

struct Selection {
  Mask selected;
  std::size_t discarded_low = 0;
  std::size_t discarded_high = 0;
};

/// Ranks unlabeled rows by their maximum probability (ties by index) and
/// drops ⌊frac·N_u⌋ rows from each end.
Selection rank_and_discard(const Mat& z_hat, const Mask& unlabeled_mask, double frac = 0.1);

/// +(1/N_u) Σ log Ẑ[i, argmax Ẑ[i]] over selected rows. Minimizing it drives
/// rows toward uniform. Returns 0 for an empty selection.
double unknown_loss(const Mat& z_hat, const Mask& selected_mask);

double total_loss(double l_k, double l_u, double lambda1, double lambda2);

/// Validation rows only (already restricted by the caller).
AgentThreshold select_agent(const Mat& z_hat_val);

/// Argmax column per row, or kUnknown when the row maximum is <= a.
std::vector<int> predict(const Mat& z_hat, const AgentThreshold& agent);

struct AccuracyReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  /// Recall per known class label.
  std::map<int, double> per_class_recall;
  double unknown_recall = 0.0;
  std::size_t unknown_total = 0;
};

/// Truth labels outside `known_classes` count as kUnknown.
AccuracyReport open_world_accuracy(std::span<const int> pred, std::span<const int> truth,
                                   std::span<const int> known_classes);

/// Everything the loss needs besides Ẑ. Pseudo-labels and the selection are
/// fixed at construction so the loss is a smooth function of Ẑ.
struct LossTargets {
  Mask labeled;
  std::vector<int> labels;  // class column per row; only read where `labeled`
  Selection selection;
  std::vector<std::size_t> pseudo_labels;  // argmax per row
};

LossTargets make_loss_targets(const Mat& z_hat, std::span<const int> label_columns,
                              const Mask& labeled, const Mask& pool, double discard_frac);

struct LossEvaluation {
  LossReport report;
  /// ∂L_total/∂Ẑ
  Mat grad;
};

LossEvaluation evaluate_loss(const Mat& z_hat, const LossTargets& targets, double lambda1,
                             double lambda2);

/// Pulls ∂L/∂P back through P = row_softmax(Z): ∂L/∂Z = P ⊙ (g − ⟨g, P⟩_row).
Mat softmax_backward(const Mat& probs, const Mat& grad_probs);

double row_entropy(std::span<const double> p);
double mean_entropy(const Mat& z_hat, const Mask& rows);

}  // namespace towl
