#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "towl/numerics.hpp"

namespace towl {

enum class FusionKind { WeightedAverage, AutoWeight, Attention, Trusted };

std::string_view to_string(FusionKind kind);
FusionKind parse_fusion_kind(std::string_view name);

/// Combines per-modality representations into the co-latent representation.
///
///   WeightedAverage  Σ v_m Z_m with fixed non-negative weights summing to 1.
///   AutoWeight       softmax(logits) as modality weights; logits learnable.
///   Attention        per-sample weights softmax_m(⟨Z_m[i], q⟩); q learnable.
///   Trusted          softplus evidence per modality, Dirichlet opinions
///                    combined with the reduced Dempster rule; the output is
///                    the expected class probability (rows sum to one).
struct Fusion {
  FusionKind kind = FusionKind::WeightedAverage;
  std::vector<double> weights;  // WeightedAverage
  std::vector<double> logits;   // AutoWeight, one per modality
  std::vector<double> score;    // Attention, one per representation column

  static Fusion single();
  static Fusion weighted_average(std::vector<double> weights);
  static Fusion equal_weights(std::size_t modalities);
  static Fusion auto_weight(std::size_t modalities);
  static Fusion attention(std::size_t columns);
  static Fusion trusted();
  /// Default-initialized fusion of `kind` for the given dimensions.
  static Fusion make(FusionKind kind, std::size_t modalities, std::size_t columns);

  /// Whether the fused output is already a probability matrix.
  bool outputs_probabilities() const noexcept { return kind == FusionKind::Trusted; }
  /// Number of learnable scalars.
  std::size_t parameter_count() const noexcept;
  /// Current modality weights (WeightedAverage / AutoWeight only).
  std::vector<double> modality_weights() const;
  /// Validates the parameters against `modalities` and `columns`.
  void validate(std::size_t modalities, std::size_t columns) const;
  std::uint64_t fingerprint() const noexcept;
};

struct FusionCache {
  FusionKind kind = FusionKind::WeightedAverage;
  std::uint64_t fingerprint = 0;
  std::vector<Mat> inputs;
  /// AutoWeight: 1×M softmax weights. Attention: N×M per-row weights.
  Mat weights;
  /// Trusted: per modality N×K belief masses and N×1 uncertainty, and the
  /// running combination after each merge step (index 0 = modality 0).
  std::vector<Mat> beliefs;
  std::vector<Mat> uncertainty;
  std::vector<Mat> evidence_mass;  // per modality N×1 Dirichlet strength S_m
  std::vector<Mat> combined_beliefs;
  std::vector<Mat> combined_uncertainty;
  std::vector<Mat> normalizers;  // 1 − conflict per merge step, N×1
};

struct FusedOutput {
  Mat z;
  FusionCache cache;
};

struct FusionGrads {
  std::vector<Mat> d_inputs;
  std::vector<double> d_logits;
  std::vector<double> d_score;
};

FusedOutput fuse(const Fusion& fusion, std::span<const Mat> z_list);
/// Reverse mode of `fuse`. Throws StaleCacheError when `cache` was produced
/// with different fusion parameters.
FusionGrads fuse_backward(const Fusion& fusion, const FusionCache& cache, const Mat& upstream);

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

}  // namespace towl
