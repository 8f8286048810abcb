#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "towl/graph.hpp"
#include "towl/numerics.hpp"

namespace towl {

/// Which proximal map realizes the learnable activation.
///   SoftThreshold      prox of θ‖·‖₁, elementwise shrinkage
///   RowGroupThreshold  prox of θ‖·‖₂,₁, shrinks each row (sample) radially
///   Identity           no regularizer
enum class ProxKind { SoftThreshold, RowGroupThreshold, Identity };

std::string_view to_string(ProxKind kind);
ProxKind parse_prox_kind(std::string_view name);

Mat soft_threshold(const Mat& z, double theta);
Mat row_group_threshold(const Mat& z, double theta);
Mat apply_prox(ProxKind kind, const Mat& z, double theta);

/// g(z): ‖z‖₁, Σ‖row‖₂, or 0.
double regularizer_value(ProxKind kind, const Mat& z);

/// Brute-force minimizer of ½‖z−x‖² + θ·g(z) by grid search, independent of
/// the closed forms above. Elementwise 1-D search over [x−r, x+r] for ℓ1;
/// per-row search over the radius along the row direction for ℓ2,1.
Mat prox_oracle(const Mat& x_point, double theta, ProxKind kind, double grid_radius,
                double grid_step);

/// min_z (1/2μ)‖z−x‖² + θ·g(z), evaluated at the closed-form prox point.
double moreau_envelope(const Mat& x_point, double mu, double theta, ProxKind kind);

/// min_Z ½(‖X − ZD‖² + α·Tr(ZᵀGZ)) + β·g(Z), with Z of shape N×K and the
/// dictionary D of shape K×D_feat.
struct IstaProblem {
  Mat x;
  Mat d;
  double alpha = 0.0;
  double beta = 0.0;
  std::optional<GraphOperator> graph;
  ProxKind prox_kind = ProxKind::SoftThreshold;

  std::size_t n() const noexcept { return x.rows(); }
  std::size_t k() const noexcept { return d.rows(); }
};

double ista_objective(const IstaProblem& p, const Mat& z);

/// σ_max(DᵀD) + α·σ_max(G). Throws DomainError for a zero dictionary.
double ista_lipschitz(const IstaProblem& p);

/// One proximal-gradient step with step 1/L and threshold β/L:
///   Prox(Z(I − DDᵀ/L) − (α/L)GZ + XDᵀ/L).
Mat ista_step(const IstaProblem& p, const Mat& z);
/// As above with a precomputed Lipschitz constant.
Mat ista_step(const IstaProblem& p, const Mat& z, double lipschitz);

struct IstaResult {
  Mat z;
  /// Objective at Z⁰ = 0 followed by the objective after every step.
  std::vector<double> trace;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Iterates from Z = 0 until ‖Z⁺ − Z‖_F < tol·max(1, ‖Z‖_F) or the budget
/// runs out.
IstaResult ista_solve(const IstaProblem& p, std::size_t max_iters, double tol);

}  // namespace towl
