#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>

#include "towl/numerics.hpp"

namespace towl {

enum class GraphKind { None, Laplacian, HypergraphLaplacian };

std::string_view to_string(GraphKind kind);
GraphKind parse_graph_kind(std::string_view name);

/// Symmetric PSD propagation operator G(L), pre-scaled so that its spectral
/// norm is at most one.
struct GraphOperator {
  Mat matrix;
  GraphKind kind = GraphKind::None;
  /// σ_max of `matrix` as stored (after scaling).
  double spectral_norm = 0.0;
  /// Factor applied to the unscaled operator: matrix = scale * unscaled.
  double scale = 1.0;
  /// Neighbourhood size used for construction; 0 when built from an edge list.
  std::size_t k_neighbors = 0;

  std::size_t n() const noexcept { return matrix.rows(); }
};

/// Binary symmetric k-NN adjacency under Euclidean distance. Equal distances
/// are ordered by sample index. Requires 1 <= k < N.
Mat knn_similarity(const Mat& x, std::size_t k);

/// Indices of the k nearest other samples of row i, nearest first.
std::vector<std::size_t> nearest_neighbors(const Mat& x, std::size_t i, std::size_t k);

/// L = E - S, scaled by 1/σ_max(L). `s` must be symmetric, non-negative,
/// with a zero diagonal.
GraphOperator laplacian(const Mat& s);

/// Unscaled E - S, exposed for tests and diagnostics.
Mat unscaled_laplacian(const Mat& s);

/// Normalized hypergraph Laplacian I - Dv^-1/2 H De^-1 Hᵀ Dv^-1/2 with one
/// unit-weight hyperedge per vertex (the vertex plus its k nearest
/// neighbours), scaled like `laplacian`.
GraphOperator hypergraph_laplacian(const Mat& x, std::size_t k);

/// Builds the operator of the requested kind from features.
GraphOperator build_graph(GraphKind kind, const Mat& x, std::size_t k);

/// Reads an undirected edge list ("i j" per line, 0-based, '#' comments) into
/// an n x n binary similarity matrix. Self loops are rejected.
Mat read_edge_list(std::istream& in, std::size_t n, const std::string& source = "<edge-list>");
Mat read_edge_list(const std::filesystem::path& path, std::size_t n);

}  // namespace towl
