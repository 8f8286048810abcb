#include "towl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "towl/error.hpp"

namespace towl {

namespace {

// Graph operators are scaled once per build; spend more iterations than the
// general-purpose default so the stored norm is tight.
constexpr PowerIterationOptions kGraphNormOptions{.iters = 5000, .tol = 1e-14};

void require_k(std::size_t k, std::size_t n, const char* op) {
  if (k < 1 || k >= n) {
    throw DomainError(std::string(op) + ": need 1 <= k < N, got k=" + std::to_string(k) +
                      " N=" + std::to_string(n));
  }
}

GraphOperator scaled(Mat unscaled, GraphKind kind, std::size_t k) {
  GraphOperator g;
  g.kind = kind;
  g.k_neighbors = k;
  const double norm = spectral_norm(unscaled, kGraphNormOptions);
  if (norm > 0.0) {
    g.scale = 1.0 / norm;
    unscaled *= g.scale;
    g.spectral_norm = spectral_norm(unscaled, kGraphNormOptions);
  } else {
    g.spectral_norm = 0.0;
  }
  g.matrix = std::move(unscaled);
  return g;
}

}  // namespace

std::string_view to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::None: return "none";
    case GraphKind::Laplacian: return "laplacian";
    case GraphKind::HypergraphLaplacian: return "hypergraph";
  }
  return "none";
}

GraphKind parse_graph_kind(std::string_view name) {
  if (name == "none") return GraphKind::None;
  if (name == "laplacian") return GraphKind::Laplacian;
  if (name == "hypergraph") return GraphKind::HypergraphLaplacian;
  throw ConfigError("graph", "unknown graph kind '" + std::string(name) + "'");
}

std::vector<std::size_t> nearest_neighbors(const Mat& x, std::size_t i, std::size_t k) {
  const std::size_t n = x.rows();
  require_k(k, n, "nearest_neighbors");
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n - 1);
  const auto xi = x.row(i);
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const auto xj = x.row(j);
    double d = 0.0;
    for (std::size_t c = 0; c < xi.size(); ++c) {
      const double diff = xi[c] - xj[c];
      d += diff * diff;
    }
    dist.emplace_back(d, j);
  }
  // pair ordering breaks distance ties by index
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t r = 0; r < k; ++r) out[r] = dist[r].second;
  return out;
}

Mat knn_similarity(const Mat& x, std::size_t k) {
  const std::size_t n = x.rows();
  require_k(k, n, "knn_similarity");
  Mat s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : nearest_neighbors(x, i, k)) {
      s(i, j) = 1.0;
      s(j, i) = 1.0;
    }
  }
  return s;
}

Mat unscaled_laplacian(const Mat& s) {
  if (s.rows() != s.cols()) throw ShapeError("laplacian: similarity must be square, got " + s.shape_string());
  const std::size_t n = s.rows();
  for (std::size_t i = 0; i < n; ++i) {
    if (s(i, i) != 0.0) throw DomainError("laplacian: similarity diagonal must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      if (s(i, j) < 0.0) throw DomainError("laplacian: similarity must be non-negative");
      if (std::abs(s(i, j) - s(j, i)) > 1e-12) {
        throw DomainError("laplacian: similarity is not symmetric at (" + std::to_string(i) +
                          ", " + std::to_string(j) + ")");
      }
    }
  }
  Mat l = s * -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = s.row(i);
    l(i, i) = std::accumulate(r.begin(), r.end(), 0.0);
  }
  return l;
}

GraphOperator laplacian(const Mat& s) {
  return scaled(unscaled_laplacian(s), GraphKind::Laplacian, 0);
}

GraphOperator hypergraph_laplacian(const Mat& x, std::size_t k) {
  const std::size_t n = x.rows();
  require_k(k, n, "hypergraph_laplacian");

  // incidence: column e is hyperedge {e} ∪ kNN(e)
  Mat h(n, n);
  for (std::size_t e = 0; e < n; ++e) {
    h(e, e) = 1.0;
    for (std::size_t v : nearest_neighbors(x, e, k)) h(v, e) = 1.0;
  }
  const double edge_degree = static_cast<double>(k + 1);
  std::vector<double> inv_sqrt_dv(n);
  for (std::size_t v = 0; v < n; ++v) {
    const auto r = h.row(v);
    inv_sqrt_dv[v] = 1.0 / std::sqrt(std::accumulate(r.begin(), r.end(), 0.0));
  }

  Mat theta = matmul_nt(h, h);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      theta(i, j) *= inv_sqrt_dv[i] * inv_sqrt_dv[j] / edge_degree;
    }
  }
  Mat l = Mat::identity(n) - theta;
  // symmetrize away rounding so the operator is exactly symmetric
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (l(i, j) + l(j, i));
      l(i, j) = avg;
      l(j, i) = avg;
    }
  }
  return scaled(std::move(l), GraphKind::HypergraphLaplacian, k);
}

GraphOperator build_graph(GraphKind kind, const Mat& x, std::size_t k) {
  switch (kind) {
    case GraphKind::None: return GraphOperator{};
    case GraphKind::Laplacian: {
      GraphOperator g = laplacian(knn_similarity(x, k));
      g.k_neighbors = k;
      return g;
    }
    case GraphKind::HypergraphLaplacian: return hypergraph_laplacian(x, k);
  }
  return GraphOperator{};
}

Mat read_edge_list(std::istream& in, std::size_t n, const std::string& source) {
  Mat s(n, n);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    long long i = 0;
    long long j = 0;
    if (!(fields >> i)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParseError(source, line_no, "expected two vertex indices");
    }
    if (!(fields >> j)) throw ParseError(source, line_no, "expected two vertex indices");
    std::string rest;
    if (fields >> rest) throw ParseError(source, line_no, "trailing field '" + rest + "'");
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= n || static_cast<std::size_t>(j) >= n) {
      throw ParseError(source, line_no,
                       "vertex index out of range [0, " + std::to_string(n) + ")");
    }
    if (i == j) throw ParseError(source, line_no, "self loop");
    s(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = 1.0;
    s(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = 1.0;
  }
  return s;
}

Mat read_edge_list(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open edge list");
  return read_edge_list(in, n, path.string());
}

}  // namespace towl
