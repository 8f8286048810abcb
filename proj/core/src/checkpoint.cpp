#include "towl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "towl/error.hpp"
#include "towl/format.hpp"

namespace towl {

namespace {

void write_values(std::ostream& out, const std::string& key, std::span<const double> values) {
  out << key << ' ' << values.size();
  for (double v : values) out << ' ' << format_double(v);
  out << '\n';
}

void write_matrix(std::ostream& out, const std::string& key, const Mat& m) {
  out << key << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? " " : "") << format_double(r[j]);
    out << '\n';
  }
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      std::istringstream ss(line);
      std::vector<std::string> tokens;
      for (std::string t; ss >> t;) tokens.push_back(std::move(t));
      if (!tokens.empty()) return tokens;
    }
    fail("unexpected end of file");
  }

  std::vector<std::string> expect(const std::string& key, std::size_t min_tokens) {
    auto tokens = next();
    if (tokens.front() != key) fail("expected '" + key + "', got '" + tokens.front() + "'");
    if (tokens.size() < min_tokens) fail("'" + key + "' line is too short");
    return tokens;
  }

  std::size_t to_count(const std::string& text) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      fail("expected a non-negative integer, got '" + text + "'");
    }
    return v;
  }

  std::uint64_t to_u64(const std::string& text) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      fail("expected an unsigned integer, got '" + text + "'");
    }
    return v;
  }

  double to_double(const std::string& text) {
    try {
      return parse_double(text, source_);
    } catch (const ParseError&) {
      fail("expected a number, got '" + text + "'");
    }
  }

  std::vector<double> values(const std::string& key) {
    auto tokens = expect(key, 2);
    const std::size_t n = to_count(tokens[1]);
    if (tokens.size() != n + 2) fail("'" + key + "' declares " + std::to_string(n) + " values");
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(to_double(tokens[i + 2]));
    return out;
  }

  Mat matrix(const std::string& key, std::size_t rows, std::size_t cols) {
    auto tokens = expect(key, 3);
    const std::size_t r = to_count(tokens[1]);
    const std::size_t c = to_count(tokens[2]);
    if (r != rows || c != cols) {
      fail(key + " is " + std::to_string(r) + "x" + std::to_string(c) + ", expected " +
           std::to_string(rows) + "x" + std::to_string(cols));
    }
    Mat m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      auto row = next();
      if (row.size() != c) {
        fail(key + " row " + std::to_string(i) + " has " + std::to_string(row.size()) +
             " cells, expected " + std::to_string(c));
      }
      for (std::size_t j = 0; j < c; ++j) m(i, j) = to_double(row[j]);
    }
    return m;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_no_, what); }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const UnrolledModel& model, std::optional<AgentThreshold> agent) {
  Checkpoint ckpt{model, {}, agent};
  for (std::size_t m = 0; m < model.modalities(); ++m) {
    const bool has = m < model.graphs.size() && model.graphs[m];
    ckpt.knn_k.push_back(has ? model.graphs[m]->k_neighbors : 0);
  }
  return ckpt;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const UnrolledModel& m = ckpt.model;
  m.validate();
  out << "towl-checkpoint " << kCheckpointVersion << '\n';
  out << "seed " << m.seed << '\n';
  out << "layers " << m.t_layers << '\n';
  out << "modalities " << m.modalities() << '\n';
  out << "k " << m.k() << '\n';
  out << "fusion " << to_string(m.fusion.kind) << '\n';
  write_values(out, "fusion.weights", m.fusion.weights);
  write_values(out, "fusion.logits", m.fusion.logits);
  write_values(out, "fusion.score", m.fusion.score);
  if (ckpt.agent) {
    const AgentThreshold& a = *ckpt.agent;
    out << "agent 1 " << format_double(a.a) << ' ' << format_double(a.a_k) << ' '
        << format_double(a.a_u) << ' ' << format_double(a.entropy_cutoff) << ' '
        << a.n_validation << ' ' << a.n_high_entropy << '\n';
  } else {
    out << "agent 0\n";
  }
  for (std::size_t mod = 0; mod < m.modalities(); ++mod) {
    const LayerParams& p = m.params[mod];
    out << "modality " << mod << '\n';
    out << "d_feat " << p.d_feat() << '\n';
    out << "alpha " << format_double(p.alpha) << '\n';
    out << "prox " << to_string(p.prox_kind) << '\n';
    const std::size_t k = mod < ckpt.knn_k.size() ? ckpt.knn_k[mod] : 0;
    out << "graph " << to_string(p.graph_kind) << ' ' << k << '\n';
    write_values(out, "theta", p.theta);
    write_matrix(out, "F", p.f);
    write_matrix(out, "W", p.w);
    write_matrix(out, "U", p.u);
  }
  out << "end\n";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  write_checkpoint(out, ckpt);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in, const std::string& source) {
  Reader r(in, source);
  auto header = r.expect("towl-checkpoint", 2);
  if (r.to_count(header[1]) != static_cast<std::size_t>(kCheckpointVersion)) {
    r.fail("unsupported checkpoint version " + header[1]);
  }
  Checkpoint ckpt;
  UnrolledModel& m = ckpt.model;
  m.seed = r.to_u64(r.expect("seed", 2)[1]);
  m.t_layers = r.to_count(r.expect("layers", 2)[1]);
  const std::size_t modalities = r.to_count(r.expect("modalities", 2)[1]);
  const std::size_t k = r.to_count(r.expect("k", 2)[1]);
  try {
    m.fusion.kind = parse_fusion_kind(r.expect("fusion", 2)[1]);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    r.fail(e.what());
  }
  m.fusion.weights = r.values("fusion.weights");
  m.fusion.logits = r.values("fusion.logits");
  m.fusion.score = r.values("fusion.score");
  auto agent = r.expect("agent", 2);
  if (agent[1] == "1") {
    if (agent.size() != 8) r.fail("agent line needs 6 values");
    ckpt.agent = AgentThreshold{r.to_double(agent[2]), r.to_double(agent[3]),
                                r.to_double(agent[4]), r.to_double(agent[5]),
                                r.to_count(agent[6]), r.to_count(agent[7])};
  } else if (agent[1] != "0") {
    r.fail("agent flag must be 0 or 1");
  }
  for (std::size_t mod = 0; mod < modalities; ++mod) {
    if (r.to_count(r.expect("modality", 2)[1]) != mod) r.fail("modalities out of order");
    LayerParams p;
    const std::size_t d_feat = r.to_count(r.expect("d_feat", 2)[1]);
    p.alpha = r.to_double(r.expect("alpha", 2)[1]);
    auto prox = r.expect("prox", 2);
    auto graph = r.expect("graph", 3);
    try {
      p.prox_kind = parse_prox_kind(prox[1]);
      p.graph_kind = parse_graph_kind(graph[1]);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      r.fail(e.what());
    }
    ckpt.knn_k.push_back(r.to_count(graph[2]));
    p.theta = r.values("theta");
    p.f = r.matrix("F", k, k);
    p.w = r.matrix("W", k, k);
    p.u = r.matrix("U", d_feat, k);
    m.params.push_back(std::move(p));
  }
  r.expect("end", 1);
  m.graphs.assign(modalities, std::nullopt);
  try {
    m.validate();
  } catch (const Error& e) {
    r.fail(std::string("invalid model: ") + e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

void attach_graphs(Checkpoint& ckpt, const OpenWorldDataset& ds) {
  UnrolledModel& m = ckpt.model;
  if (ds.modalities.size() != m.modalities()) {
    throw ShapeError("checkpoint has " + std::to_string(m.modalities()) +
                     " modalities, dataset has " + std::to_string(ds.modalities.size()));
  }
  m.graphs.assign(m.modalities(), std::nullopt);
  for (std::size_t mod = 0; mod < m.modalities(); ++mod) {
    const GraphKind kind = m.params[mod].graph_kind;
    if (kind == GraphKind::None) continue;
    const std::size_t k = mod < ckpt.knn_k.size() ? ckpt.knn_k[mod] : 0;
    const bool reuse = mod < ds.graphs.size() && ds.graphs[mod] && ds.graphs[mod]->kind == kind &&
                       ds.graphs[mod]->k_neighbors == k;
    m.graphs[mod] = reuse ? *ds.graphs[mod] : build_graph(kind, ds.modalities[mod], k);
  }
}

}  // namespace towl
