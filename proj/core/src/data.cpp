#include "towl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "towl/error.hpp"
#include "towl/format.hpp"

namespace towl {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_cell(const std::string& cell, const std::string& source, std::size_t line) {
  const std::string t = trim(cell);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw ParseError(source, line, "non-numeric cell '" + t + "'");
  }
  return v;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return in;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

int OpenWorldDataset::column_of(int label) const noexcept {
  const auto it = std::lower_bound(known_classes.begin(), known_classes.end(), label);
  if (it == known_classes.end() || *it != label) return kUnknown;
  return static_cast<int>(it - known_classes.begin());
}

std::vector<int> OpenWorldDataset::label_columns() const {
  std::vector<int> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) cols[i] = column_of(labels[i]);
  return cols;
}

Mask OpenWorldDataset::unknown_loss_pool() const {
  Mask pool(n(), false);
  for (std::size_t i = 0; i < n(); ++i) {
    pool[i] = !masks.labeled_train[i] && !masks.test[i];
  }
  return pool;
}

void OpenWorldDataset::validate() const {
  const std::size_t count = labels.size();
  if (modalities.empty()) throw DomainError("dataset: no modalities");
  for (const Mat& x : modalities) {
    if (x.rows() != count) {
      throw ShapeError("dataset: modality has " + std::to_string(x.rows()) + " rows for " +
                       std::to_string(count) + " labels");
    }
  }
  if (!std::is_sorted(known_classes.begin(), known_classes.end()) || known_classes.empty()) {
    throw DomainError("dataset: known classes must be a non-empty sorted list");
  }
  const Mask* all[] = {&masks.labeled_train, &masks.unlabeled, &masks.validation, &masks.test};
  for (const Mask* m : all) {
    if (m->size() != count) throw ShapeError("dataset: mask length does not match N");
  }
  for (std::size_t i = 0; i < count; ++i) {
    int members = 0;
    for (const Mask* m : all) members += (*m)[i] ? 1 : 0;
    if (members > 1) throw DomainError("dataset: split masks overlap at sample " + std::to_string(i));
    if (masks.labeled_train[i] && column_of(labels[i]) == kUnknown) {
      throw DomainError("dataset: labeled sample " + std::to_string(i) + " has an unknown class");
    }
  }
}

Mat read_feature_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing header line");
  ++line_no;
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::size_t row_cols = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string cell =
          line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      values.push_back(parse_cell(cell, source, line_no));
      ++row_cols;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = row_cols;
    } else if (row_cols != cols) {
      throw ParseError(source, line_no,
                       "ragged row: " + std::to_string(row_cols) + " cells, expected " +
                           std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(source, line_no, "no data rows");
  return Mat::from_data(rows, cols, std::move(values));
}

Mat read_feature_csv(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return read_feature_csv(in, path.string());
}

std::vector<int> read_labels(std::istream& in, const std::string& source) {
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
      throw ParseError(source, line_no, "expected an integer label, got '" + t + "'");
    }
    labels.push_back(v);
  }
  return labels;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return read_labels(in, path.string());
}

RawDataset load_csv(std::span<const std::filesystem::path> paths,
                    const std::filesystem::path& label_path) {
  if (paths.empty()) throw DomainError("load_csv: no modality files");
  RawDataset raw;
  raw.labels = read_labels(label_path);
  for (const auto& p : paths) {
    Mat x = read_feature_csv(p);
    if (x.rows() != raw.labels.size()) {
      throw ParseError(p.string(), 0,
                       std::to_string(x.rows()) + " samples but " + label_path.string() +
                           " has " + std::to_string(raw.labels.size()) + " labels");
    }
    raw.modalities.push_back(std::move(x));
  }
  return raw;
}

void write_feature_csv(std::ostream& out, const Mat& x) {
  for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? ",f" : "f") << j;
  out << '\n';
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      out << format_double(x(i, j));
    }
    out << '\n';
  }
}

void write_labels(std::ostream& out, std::span<const int> labels) {
  for (int l : labels) out << l << '\n';
}

OpenWorldDataset make_blobs(const BlobsConfig& cfg, Rng& rng) {
  if (cfg.n_per_class < 1 || cfg.k_known < 1 || cfg.d_feat < 1 || cfg.m_modalities < 1) {
    throw DomainError("make_blobs: counts must be >= 1");
  }
  if (!(cfg.sep > 0.0)) throw DomainError("make_blobs: sep must be positive");
  const std::size_t classes = cfg.k_known + cfg.k_unknown;
  const std::size_t n = classes * cfg.n_per_class;

  // centers sep/√2 along distinct axes are pairwise sep apart
  const double offset = cfg.sep / std::sqrt(2.0);
  Mat latent(n, classes);
  OpenWorldDataset ds;
  ds.labels.resize(n);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < cfg.n_per_class; ++s) {
      const std::size_t i = c * cfg.n_per_class + s;
      ds.labels[i] = static_cast<int>(c);
      for (std::size_t j = 0; j < classes; ++j) {
        latent(i, j) = rng.normal() + (j == c ? offset : 0.0);
      }
    }
  }
  for (std::size_t m = 0; m < cfg.m_modalities; ++m) {
    const bool noise = cfg.noise_modality && m + 1 == cfg.m_modalities;
    Mat x = noise ? rng.normal_matrix(n, cfg.d_feat)
                  : matmul(latent, rng.normal_matrix(classes, cfg.d_feat));
    ds.modalities.push_back(minmax_normalize(x));
  }
  ds.known_classes.resize(cfg.k_known);
  std::iota(ds.known_classes.begin(), ds.known_classes.end(), 0);
  return ds;
}

SplitMasks split_open_world(std::span<const int> labels, std::span<const int> known_classes,
                            const SplitRatios& ratios, double unknown_in_train_frac, Rng& rng) {
  const double total = ratios.labeled + ratios.validation + ratios.test;
  if (std::abs(total - 1.0) > 1e-9 || ratios.labeled < 0 || ratios.validation < 0 ||
      ratios.test < 0) {
    throw DomainError("split_open_world: ratios must be non-negative and sum to 1");
  }
  if (!(unknown_in_train_frac >= 0.0 && unknown_in_train_frac <= 1.0)) {
    throw DomainError("split_open_world: unknown_in_train_frac must lie in [0, 1]");
  }
  const std::size_t n = labels.size();
  SplitMasks s{Mask(n, false), Mask(n, false), Mask(n, false), Mask(n, false)};
  const std::set<int> known(known_classes.begin(), known_classes.end());
  const std::set<int> classes(labels.begin(), labels.end());

  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == c) members.push_back(i);
    rng.shuffle(std::span<std::size_t>(members));
    const auto count = static_cast<double>(members.size());

    if (known.count(c)) {
      if (members.size() < 3) {
        throw DomainError("split_open_world: known class " + std::to_string(c) + " has only " +
                          std::to_string(members.size()) + " samples (need >= 3)");
      }
      const auto n_lab = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.labeled * count)));
      const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.validation * count)));
      for (std::size_t r = 0; r < members.size(); ++r) {
        if (r < n_lab) {
          s.labeled_train[members[r]] = true;
        } else if (r < n_lab + n_val) {
          s.validation[members[r]] = true;
        } else {
          s.test[members[r]] = true;
        }
      }
    } else {
      const auto n_pool = static_cast<std::size_t>(std::lround(unknown_in_train_frac * count));
      for (std::size_t r = 0; r < members.size(); ++r) {
        if (r >= n_pool) {
          s.test[members[r]] = true;
        } else if (r % 2 == 0) {
          s.validation[members[r]] = true;
        } else {
          s.unlabeled[members[r]] = true;
        }
      }
    }
  }
  for (int c : known_classes) {
    if (!classes.count(c)) {
      throw DomainError("split_open_world: known class " + std::to_string(c) + " has no samples");
    }
  }
  return s;
}

Manifest read_manifest(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, std::string("invalid JSON: ") + e.what());
  }
  const auto base = path.parent_path();
  Manifest m;
  try {
    if (!j.contains("modalities") || !j["modalities"].is_array() || j["modalities"].empty()) {
      throw ConfigError("modalities", "expected a non-empty array of paths");
    }
    for (const auto& p : j["modalities"]) m.modalities.push_back(resolve(base, p.get<std::string>()));
    if (!j.contains("labels")) throw ConfigError("labels", "missing");
    m.labels = resolve(base, j["labels"].get<std::string>());
    if (!j.contains("known_classes") || !j["known_classes"].is_array()) {
      throw ConfigError("known_classes", "expected an array of integers");
    }
    m.known_classes = j["known_classes"].get<std::vector<int>>();
    std::sort(m.known_classes.begin(), m.known_classes.end());
    m.known_classes.erase(std::unique(m.known_classes.begin(), m.known_classes.end()),
                          m.known_classes.end());
    if (m.known_classes.empty()) throw ConfigError("known_classes", "must not be empty");
    m.seed = j.value("seed", std::uint64_t{0});
    m.unknown_in_train_frac = j.value("unknown_in_train_frac", 0.2);
    if (j.contains("graph")) {
      const auto& g = j["graph"];
      if (g.contains("edge_list_path")) {
        m.graph.edge_list = resolve(base, g["edge_list_path"].get<std::string>());
        m.graph.kind = GraphKind::Laplacian;
        m.graph.knn_k = 0;
      }
      if (g.contains("knn_k")) m.graph.knn_k = g["knn_k"].get<std::size_t>();
      if (g.contains("kind")) m.graph.kind = parse_graph_kind(g["kind"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError("manifest", std::string("bad field type: ") + e.what());
  }
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json j;
  std::vector<std::string> mods;
  for (const auto& p : m.modalities) mods.push_back(p.generic_string());
  j["modalities"] = mods;
  j["labels"] = m.labels.generic_string();
  j["known_classes"] = m.known_classes;
  j["seed"] = m.seed;
  json g;
  if (m.graph.edge_list) {
    g["edge_list_path"] = m.graph.edge_list->generic_string();
  } else {
    g["knn_k"] = m.graph.knn_k;
  }
  g["kind"] = std::string(to_string(m.graph.kind));
  j["graph"] = g;
  j["unknown_in_train_frac"] = m.unknown_in_train_frac;
  return j.dump(2) + "\n";
}

OpenWorldDataset assemble_dataset(RawDataset raw, std::vector<int> known_classes,
                                  std::uint64_t seed, const GraphConfig& graph,
                                  double unknown_in_train_frac) {
  OpenWorldDataset ds;
  for (Mat& x : raw.modalities) ds.modalities.push_back(minmax_normalize(x));
  ds.labels = std::move(raw.labels);
  std::sort(known_classes.begin(), known_classes.end());
  known_classes.erase(std::unique(known_classes.begin(), known_classes.end()), known_classes.end());
  ds.known_classes = std::move(known_classes);
  Rng rng(seed);
  ds.masks = split_open_world(ds.labels, ds.known_classes, SplitRatios{}, unknown_in_train_frac, rng);
  ds.graphs.assign(ds.modalities.size(), std::nullopt);
  if (graph.edge_list) {
    const GraphOperator g = laplacian(read_edge_list(*graph.edge_list, ds.n()));
    for (auto& slot : ds.graphs) slot = g;
  } else if (graph.kind != GraphKind::None) {
    for (std::size_t m = 0; m < ds.modalities.size(); ++m) {
      ds.graphs[m] = build_graph(graph.kind, ds.modalities[m], graph.knn_k);
    }
  }
  ds.validate();
  return ds;
}

OpenWorldDataset load_from_manifest(const Manifest& manifest) {
  RawDataset raw = load_csv(manifest.modalities, manifest.labels);
  return assemble_dataset(std::move(raw), manifest.known_classes, manifest.seed, manifest.graph,
                          manifest.unknown_in_train_frac);
}

double one_nn_accuracy(const Mat& x, std::span<const int> labels) {
  if (x.rows() != labels.size() || x.rows() < 2) {
    throw DomainError("one_nn_accuracy: need matching labels and at least two samples");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const std::size_t j = nearest_neighbors(x, i, 1).front();
    hits += labels[i] == labels[j] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows());
}

}  // namespace towl
