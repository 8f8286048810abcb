#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "towl/data.hpp"
#include "towl/fusion.hpp"
#include "towl/openworld.hpp"
#include "towl/unroll.hpp"

namespace towl {

struct LayerGrads {
  Mat d_f;
  Mat d_w;
  Mat d_u;
  std::vector<double> d_theta;
};

/// Gradients mirroring the learnable parameters of an UnrolledModel.
struct GradSet {
  std::vector<LayerGrads> modalities;
  std::vector<double> d_logits;  // AutoWeight
  std::vector<double> d_score;   // Attention

  bool all_finite() const noexcept;
};

/// Reverse mode through fusion and every unrolled layer. `upstream` is
/// ∂L/∂(fused Z). Prox kinks take subgradient 0. Throws StaleCacheError when
/// `cache` was recorded for different parameters.
GradSet backward(const UnrolledModel& model, const ForwardCache& cache, const Mat& upstream);

/// Named view of one learnable parameter block.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};
struct GradBlock {
  std::string name;
  std::span<const double> values;
};

/// Learnable blocks in a fixed order (per modality F, W, U, θ; then fusion
/// logits or score). `gradient_blocks` yields the matching order.
std::vector<ParamBlock> parameter_blocks(UnrolledModel& model);
std::vector<GradBlock> gradient_blocks(const GradSet& grads, const UnrolledModel& model);

/// Ẑ: row_softmax of the fused representation, except for trusted fusion
/// whose output is already a probability matrix.
Mat probabilities(const UnrolledModel& model, const Mat& fused);

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double discard_frac = 0.1;
};

/// Inputs of the open-world loss for one full batch.
struct TrainingBatch {
  std::vector<Mat> xs;
  std::vector<int> label_columns;  // kUnknown where the class is not known
  Mask labeled;
  Mask pool;  // rows eligible for the unknown loss
};

TrainingBatch make_batch(const OpenWorldDataset& ds);

struct LossAndGrads {
  ForwardResult forward;
  Mat probs;
  LossTargets targets;
  LossReport report;
  GradSet grads;
};

/// Forward, loss, and backward at the current parameters. Pseudo-labels and
/// the rank-and-discard selection come from the current Ẑ unless `targets`
/// is supplied.
LossAndGrads loss_and_grads(const UnrolledModel& model, const TrainingBatch& batch,
                            const LossConfig& cfg, const LossTargets* targets = nullptr);

/// Total loss with fixed targets (used for finite differences).
double loss_value(const UnrolledModel& model, const TrainingBatch& batch, const LossConfig& cfg,
                  const LossTargets& targets);

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t kinks_excluded = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  double epsilon = 0.0;
  double max_rel_error = 0.0;
  std::size_t kinks_excluded = 0;
  bool passed = false;
};

/// Compares backward() against central differences for every learnable
/// scalar. A scalar whose ±ε perturbation changes any prox active set is
/// kink-adjacent: reported, not scored. The relative error is
/// |a − n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const UnrolledModel& model, const TrainingBatch& batch,
                           const LossConfig& cfg, double epsilon, double tol,
                           double abs_floor = 1e-6);

enum class OptimizerKind { Adam, Sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 0.001;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double discard_frac = 0.1;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  LossConfig loss() const { return {lambda1, lambda2, discard_frac}; }
  void validate() const;
};

/// Adam or plain gradient descent over parameter_blocks(). Thresholds are
/// projected back onto θ >= 0 after every step.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const UnrolledModel& model);

  void step(UnrolledModel& model, const GradSet& grads);
  std::size_t steps() const noexcept { return steps_; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

/// Network instantiation: number of layers, damping α, sparsity weight β
/// for the ISTA initialization, prox, graph, and fusion choice.
struct ModelSpec {
  std::size_t t_layers = 3;
  double alpha = 0.5;
  double beta = 0.02;
  ProxKind prox = ProxKind::SoftThreshold;
  GraphKind graph = GraphKind::Laplacian;
  std::size_t knn_k = 10;
  FusionKind fusion = FusionKind::WeightedAverage;
  /// WeightedAverage weights; empty means equal weights.
  std::vector<double> fusion_weights;
};

/// Builds an ISTA-initialized model for `ds`. Every modality draws its
/// dictionary from a generator seeded with `seed`, so identical modalities
/// get identical parameters regardless of their position.
UnrolledModel build_model(const OpenWorldDataset& ds, const ModelSpec& spec, std::uint64_t seed,
                          bool multi_modal);

struct EpochRecord {
  std::size_t epoch = 0;
  double l_k = 0.0;
  double l_u = 0.0;
  double l_total = 0.0;
  double acc_val = 0.0;
};

struct EvaluationMetrics {
  AccuracyReport accuracy;
  AgentThreshold agent;
  std::vector<int> predictions;  // raw labels (kUnknown for rejected), test rows only
  std::size_t n_test = 0;
};

struct ProtocolResult {
  UnrolledModel model;
  AgentThreshold agent;
  std::vector<EpochRecord> trace;
  EvaluationMetrics metrics;
};

/// One full-batch epoch: forward, loss, backward, optimizer step. Returns
/// the loss measured before the step.
EpochRecord train_epoch(UnrolledModel& model, Optimizer& opt, const OpenWorldDataset& ds,
                        const TrainingBatch& batch, const TrainConfig& cfg, std::size_t epoch);

/// Agent from the validation rows of the current model output.
AgentThreshold agent_from_validation(const UnrolledModel& model, const OpenWorldDataset& ds);

/// Test-partition metrics using `agent`.
EvaluationMetrics evaluate(const UnrolledModel& model, const OpenWorldDataset& ds,
                           const AgentThreshold& agent);

/// Single-modal protocol: train for cfg.epochs, select the agent on the
/// validation rows, evaluate on the test rows.
ProtocolResult run_protocol1(const OpenWorldDataset& ds, const TrainConfig& cfg,
                             const ModelSpec& spec);
/// Multi-modal protocol: per-modality branches, generalized fusion, fusion
/// parameters trained with the same loss.
ProtocolResult run_protocol2(const OpenWorldDataset& ds, const TrainConfig& cfg,
                             const ModelSpec& spec);

/// "epoch,l_k,l_u,l_total,acc_val" header plus one row per epoch.
void write_trace_csv(std::ostream& out, std::span<const EpochRecord> trace);

}  // namespace towl
