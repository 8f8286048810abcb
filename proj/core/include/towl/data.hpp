#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "towl/graph.hpp"
#include "towl/numerics.hpp"
#include "towl/openworld.hpp"
#include "towl/rng.hpp"

namespace towl {

/// Disjoint partition masks over the N samples.
///   labeled_train  known-class samples whose labels feed the known loss
///   validation     agent selection (labels never read during training)
///   unlabeled      extra unlabeled samples (unknown-class contamination)
///   test           held out for evaluation
struct SplitMasks {
  Mask labeled_train;
  Mask unlabeled;
  Mask validation;
  Mask test;
};

struct OpenWorldDataset {
  std::vector<Mat> modalities;  // each N×D_m, normalized to [0, 1]
  std::vector<int> labels;      // ground truth class per sample
  std::vector<int> known_classes;  // sorted; column c of Ẑ is known_classes[c]
  SplitMasks masks;
  std::vector<std::optional<GraphOperator>> graphs;  // per modality, optional

  std::size_t n() const noexcept { return labels.size(); }
  std::size_t k() const noexcept { return known_classes.size(); }
  /// Column of `label` among known classes, or kUnknown.
  int column_of(int label) const noexcept;
  /// Labels mapped to Ẑ columns (kUnknown for unknown classes).
  std::vector<int> label_columns() const;
  /// Rows used by the unknown loss: every non-labeled, non-test sample.
  Mask unknown_loss_pool() const;
  /// Throws on violated invariants (disjoint masks, equal N, ...).
  void validate() const;
};

struct RawDataset {
  std::vector<Mat> modalities;
  std::vector<int> labels;
};

/// Feature CSV: a header line, then one sample per row of real cells.
Mat read_feature_csv(std::istream& in, const std::string& source = "<csv>");
Mat read_feature_csv(const std::filesystem::path& path);
/// One integer label per line.
std::vector<int> read_labels(std::istream& in, const std::string& source = "<labels>");
std::vector<int> read_labels(const std::filesystem::path& path);

/// Parses every modality file and the label file; row counts must agree.
RawDataset load_csv(std::span<const std::filesystem::path> paths,
                    const std::filesystem::path& label_path);

void write_feature_csv(std::ostream& out, const Mat& x);
void write_labels(std::ostream& out, std::span<const int> labels);

struct BlobsConfig {
  std::size_t n_per_class = 100;
  std::size_t k_known = 4;
  std::size_t k_unknown = 1;
  std::size_t d_feat = 256;
  double sep = 8.0;
  std::size_t m_modalities = 1;
  /// Replace the last modality by label-independent noise.
  bool noise_modality = false;
};

/// Isotropic unit-variance Gaussian blobs in a latent space with one axis per
/// class; centers sit at pairwise distance sep. Each modality is an
/// independent random linear projection of the latent sample to d_feat
/// dimensions, min-max normalized. Classes [0, k_known) are the known set.
/// Masks are left empty.
OpenWorldDataset make_blobs(const BlobsConfig& cfg, Rng& rng);

struct SplitRatios {
  double labeled = 0.1;
  double validation = 0.1;
  double test = 0.8;
};

/// Stratified open-world split. Per known class: `labeled`/`validation`/
/// `test` fractions (at least one labeled and one validation sample).
/// Per unknown class: `unknown_in_train_frac` goes to the non-test pool,
/// alternating between validation and unlabeled, the rest to test.
SplitMasks split_open_world(std::span<const int> labels, std::span<const int> known_classes,
                            const SplitRatios& ratios, double unknown_in_train_frac, Rng& rng);

struct GraphConfig {
  GraphKind kind = GraphKind::Laplacian;
  std::size_t knn_k = 10;
  std::optional<std::filesystem::path> edge_list;
};

/// Experiment manifest (JSON):
///   {"modalities": [path...], "labels": path, "known_classes": [int...],
///    "seed": int, "graph": {"knn_k": int} | {"edge_list_path": path},
///    optional "graph.kind", optional "unknown_in_train_frac"}
/// Relative paths resolve against the manifest's directory.
struct Manifest {
  std::vector<std::filesystem::path> modalities;
  std::filesystem::path labels;
  std::vector<int> known_classes;
  std::uint64_t seed = 0;
  GraphConfig graph;
  double unknown_in_train_frac = 0.2;
};

Manifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const Manifest& m);

/// Normalizes features, splits, and attaches graphs when `graph` asks for
/// them.
OpenWorldDataset assemble_dataset(RawDataset raw, std::vector<int> known_classes,
                                  std::uint64_t seed, const GraphConfig& graph,
                                  double unknown_in_train_frac = 0.2);

OpenWorldDataset load_from_manifest(const Manifest& manifest);

/// Accuracy of a leave-one-out 1-nearest-neighbour classifier, used as a
/// separability oracle.
double one_nn_accuracy(const Mat& x, std::span<const int> labels);

}  // namespace towl
