#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "towl/fusion.hpp"
#include "towl/graph.hpp"
#include "towl/numerics.hpp"
#include "towl/prox.hpp"
#include "towl/rng.hpp"

namespace towl {

/// Learnable parameters of one modality's unrolled branch. F, W and U are
/// shared by every layer; θ has one entry per layer.
///
///   Z⁽ᵗ⁺¹⁾ = P_θₜ(Z⁽ᵗ⁾F − α·G·Z⁽ᵗ⁾W + XU)
///
/// With `graph_kind == None` the graph term is dropped.
struct LayerParams {
  Mat f;  // K×K
  Mat w;  // K×K
  Mat u;  // D_feat×K
  std::vector<double> theta;
  double alpha = 0.0;  // in [0, 1)
  ProxKind prox_kind = ProxKind::SoftThreshold;
  GraphKind graph_kind = GraphKind::None;

  std::size_t k() const noexcept { return f.rows(); }
  std::size_t d_feat() const noexcept { return u.rows(); }
  std::size_t layers() const noexcept { return theta.size(); }
  /// Throws on a shape or range violation.
  void validate() const;
};

struct UnrolledModel {
  std::size_t t_layers = 0;
  std::vector<LayerParams> params;  // one entry per modality
  /// Runtime-attached graph per modality (transductive; not serialized).
  std::vector<std::optional<GraphOperator>> graphs;
  Fusion fusion = Fusion::single();
  std::uint64_t seed = 0;

  std::size_t modalities() const noexcept { return params.size(); }
  std::size_t k() const noexcept { return params.empty() ? 0 : params.front().k(); }
  void validate() const;
  /// Hash of every learnable value; forward caches record it.
  std::uint64_t fingerprint() const noexcept;
};

/// Row-normalized K×D_feat dictionary with i.i.d. standard-normal entries.
Mat random_dictionary(std::size_t k, std::size_t d_feat, Rng& rng);

/// Parameters that reproduce ISTA on `p` exactly:
///   F = I − DDᵀ/L,  W = I/L,  U = Dᵀ/L,  θₜ = β/L.
/// When p.alpha >= 1 the graph weight is moved into W (α_layer = 0.5,
/// W = (α/0.5)·I/L) so the layer damping stays in [0, 1).
/// An empty p.d is replaced by random_dictionary(k, D_feat, rng).
LayerParams ista_layer_params(const IstaProblem& p, std::size_t t_layers, Rng& rng,
                              std::size_t k = 0);

/// Single-modality model initialized from `p` (graph attached from p.graph).
UnrolledModel init_from_ista(const IstaProblem& p, std::size_t t_layers, Rng& rng,
                             std::size_t k = 0);

/// Pre-activation A = ZF − α·G·Z·W + XU.
Mat layer_preactivation(const LayerParams& params, const Mat& z, const Mat& x,
                        const GraphOperator* graph);

/// One unrolled layer: prox(A, θ[layer_index]).
Mat layer_forward(const LayerParams& params, std::size_t layer_index, const Mat& z, const Mat& x,
                  const GraphOperator* graph);

struct ModalityCache {
  std::vector<Mat> inputs;          // Z⁽ᵗ⁾ entering layer t (Z⁽⁰⁾ = 0)
  std::vector<Mat> preactivations;  // A⁽ᵗ⁾
  std::vector<Mat> graph_products;  // G·Z⁽ᵗ⁾ (empty when no graph term)
  Mat x;
};

struct ForwardCache {
  std::uint64_t fingerprint = 0;
  std::vector<ModalityCache> modalities;
  FusionCache fusion;
};

struct ForwardResult {
  Mat z_fused;
  std::vector<Mat> z_per_modality;
  ForwardCache cache;
};

/// Runs t_layers layers per modality from Z⁽⁰⁾ = 0, then fuses the final
/// per-modality representations once.
ForwardResult model_forward(const UnrolledModel& m, std::span<const Mat> x_per_modality);

/// Operator norm of the linear part Z ↦ ZF − α·G·Z·W (power iteration on
/// its normal operator).
double linear_part_norm(const LayerParams& params, const GraphOperator* graph, std::size_t n);

/// Scales F and W of `modality` so the linear part has operator norm
/// `target`. Returns the applied factor.
double rescale_linear_part(UnrolledModel& m, std::size_t modality, double target,
                           std::size_t n);

struct ContractionReport {
  std::size_t trials = 0;
  /// max over trials of ‖φ(Z) − φ(Z′)‖_F / ‖Z − Z′‖_F
  double max_ratio = 0.0;
  /// Exact Lipschitz bound of the pre-activation map (prox is non-expansive).
  double linear_norm = 0.0;
  /// Looser analytic bound ‖F‖₂ + α‖W‖₂‖G‖₂.
  double analytic_bound = 0.0;
  bool ratio_within_bound = false;
  bool is_contraction = false;

  /// Fixed-point iteration Z ← φ(Z) from Z = 0. Decay ratios are taken
  /// while ‖Δₜ‖ exceeds 1e-8·max(1, ‖Z‖_F).
  double decay_rate = 0.0;      // max ‖Δₜ₊₁‖/‖Δₜ‖ observed
  double mean_decay_rate = 0.0;  // geometric mean over the run
  double initial_step = 0.0;    // ‖φ(0) − 0‖_F
  double final_step = 0.0;
  std::size_t iterations = 0;
  /// ⌈log(tol/‖Δ₀‖)/log(linear_norm)⌉, the geometric-series budget.
  std::size_t iteration_bound = 0;
  bool reached_fixed_point = false;

  bool passed() const noexcept {
    return ratio_within_bound && is_contraction && reached_fixed_point &&
           iterations <= iteration_bound;
  }
};

/// Audits the layer map φ(Z) = P_θ(ZF − α·G·Z·W + XU) of one modality (θ of
/// the first layer) for the contraction property.
ContractionReport verify_contraction(const UnrolledModel& m, std::size_t modality, const Mat& x,
                                     std::size_t trials, Rng& rng, double fixed_point_tol = 1e-10,
                                     std::size_t max_iterations = 100000);

}  // namespace towl
