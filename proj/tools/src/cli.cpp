#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "towl/checkpoint.hpp"
#include "towl/data.hpp"
#include "towl/error.hpp"
#include "towl/format.hpp"
#include "towl/report.hpp"
#include "towl/train.hpp"
#include "towl/unroll.hpp"

namespace towl::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Settings {
  std::string config;
  std::uint64_t seed = 0;

  // gen-data
  std::string out;
  std::size_t classes = 5;
  std::size_t unknown = 1;
  std::size_t n = 100;
  std::size_t modalities = 1;
  std::size_t d_feat = 256;
  double sep = 8.0;
  bool noise_modality = false;
  double unknown_in_train_frac = 0.2;

  // model and training
  std::string manifest;
  std::string checkpoint;
  std::string json_path;
  std::size_t epochs = 200;
  double lr = 0.001;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double discard_frac = 0.1;
  std::size_t layers = 3;
  double alpha = 0.5;
  double beta = 0.02;
  std::size_t k = 10;
  std::string prox = "soft-threshold";
  std::string graph = "laplacian";
  std::string fusion = "weighted-average";
  std::vector<double> weights;
  std::string optimizer = "adam";

  // grad-check
  double epsilon = 1e-6;
  double tol = 1e-4;
  double abs_floor = 1e-6;

  // verify-contraction
  std::size_t trials = 20;
  double target_norm = 0.0;
  std::size_t modality = 0;
  double fixed_point_tol = 1e-10;

  // sweep
  std::vector<double> grid = {0.001, 0.01, 0.1, 1.0, 10.0, 100.0};
};

std::string key_of(std::string name) {
  for (char& c : name) {
    if (c == '-') c = '_';
  }
  return name;
}

// Options of one verb, addressable both as flags and as config-file keys.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& field, const std::string& help) {
    CLI::Option* opt = app_->add_option("--" + name, field, help)->capture_default_str();
    bound_[key_of(name)] = {opt, [&field](const json& j) { field = j.get<T>(); }};
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& field, const std::string& help) {
    CLI::Option* opt = app_->add_flag("--" + name, field, help);
    bound_[key_of(name)] = {opt, [&field](const json& j) { field = j.get<bool>(); }};
    return opt;
  }

  /// Fills every setting the command line left untouched from the JSON
  /// object at `path`.
  void apply_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path + "'");
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
    for (const auto& [raw_key, value] : j.items()) {
      const std::string key = key_of(raw_key);
      auto it = bound_.find(key);
      if (it == bound_.end()) throw ConfigError(raw_key, "not an option of '" + app_->get_name() + "'");
      if (it->second.opt->count() > 0) continue;
      try {
        it->second.set(value);
      } catch (const json::exception& e) {
        throw ConfigError(raw_key, std::string("wrong type: ") + e.what());
      }
      from_config_.insert(key);
    }
  }

  bool given(const std::string& name) const {
    const std::string key = key_of(name);
    auto it = bound_.find(key);
    return (it != bound_.end() && it->second.opt->count() > 0) || from_config_.count(key) > 0;
  }

 private:
  struct Bound {
    CLI::Option* opt;
    std::function<void(const json&)> set;
  };
  CLI::App* app_;
  std::map<std::string, Bound> bound_;
  std::set<std::string> from_config_;
};

void add_model_options(Options& o, Settings& s) {
  o.add("layers", s.layers, "Unrolled layers per modality");
  o.add("alpha", s.alpha, "Graph-term damping, in [0, 1)");
  o.add("beta", s.beta, "Sparsity weight used by the ISTA initialization");
  o.add("k", s.k, "Neighbours per node for kNN graphs (default: manifest value)");
  o.add("prox", s.prox, "soft-threshold | row-group-threshold | identity");
  o.add("graph", s.graph, "laplacian | hypergraph | none (default: manifest value)");
  o.add("fusion", s.fusion, "weighted-average | auto-weight | attention | trusted");
  o.add("weights", s.weights, "Weighted-average modality weights")->delimiter(',');
}

void add_train_options(Options& o, Settings& s) {
  o.add("epochs", s.epochs, "Training epochs");
  o.add("lr", s.lr, "Learning rate");
  o.add("lambda1", s.lambda1, "Weight of the known-class loss");
  o.add("lambda2", s.lambda2, "Weight of the unknown loss");
  o.add("discard-frac", s.discard_frac, "Fraction dropped at each end by rank-and-discard");
  o.add("optimizer", s.optimizer, "adam | sgd");
}

void require_file(const std::string& key, const std::string& path) {
  if (path.empty()) throw ConfigError(key, "required");
  if (!fs::is_regular_file(path)) throw ConfigError(key, "file not found: " + path);
}

ModelSpec model_spec(const Settings& s, const GraphConfig& graph) {
  ModelSpec spec;
  spec.t_layers = s.layers;
  spec.alpha = s.alpha;
  spec.beta = s.beta;
  spec.prox = parse_prox_kind(s.prox);
  spec.graph = graph.kind;
  spec.knn_k = graph.knn_k;
  spec.fusion = parse_fusion_kind(s.fusion);
  spec.fusion_weights = s.weights;
  return spec;
}

TrainConfig train_config(const Settings& s, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = s.epochs;
  cfg.lr = s.lr;
  cfg.lambda1 = s.lambda1;
  cfg.lambda2 = s.lambda2;
  cfg.discard_frac = s.discard_frac;
  cfg.seed = seed;
  cfg.optimizer = parse_optimizer_kind(s.optimizer);
  cfg.validate();
  return cfg;
}

struct LoadedData {
  Manifest manifest;
  OpenWorldDataset ds;
  std::uint64_t seed = 0;
};

// Manifest values, overridden by explicitly given --graph / --k / --seed /
// --unknown-in-train-frac. The seed drives both the split and training.
LoadedData load_data(const Settings& s, const Options& o) {
  require_file("manifest", s.manifest);
  LoadedData d;
  d.manifest = read_manifest(s.manifest);
  if (o.given("graph")) d.manifest.graph.kind = parse_graph_kind(s.graph);
  if (o.given("k")) d.manifest.graph.knn_k = s.k;
  if (o.given("unknown-in-train-frac")) d.manifest.unknown_in_train_frac = s.unknown_in_train_frac;
  if (o.given("seed")) d.manifest.seed = s.seed;
  if (d.manifest.graph.kind != GraphKind::None && !d.manifest.graph.edge_list &&
      d.manifest.graph.knn_k == 0) {
    throw ConfigError("k", "must be >= 1");
  }
  d.ds = load_from_manifest(d.manifest);
  d.seed = d.manifest.seed;
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

int cmd_gen_data(const Settings& s, std::ostream& out) {
  if (s.out.empty()) throw ConfigError("out", "required");
  if (s.classes < 2) throw ConfigError("classes", "must be >= 2");
  if (s.unknown >= s.classes) throw ConfigError("unknown", "must be < classes");
  if (s.n < 3) throw ConfigError("n", "must be >= 3 samples per class");
  if (s.modalities < 1) throw ConfigError("modalities", "must be >= 1");
  if (s.d_feat < 1) throw ConfigError("d-feat", "must be >= 1");
  if (!(s.sep > 0.0)) throw ConfigError("sep", "must be positive");
  if (s.noise_modality && s.modalities < 2) {
    throw ConfigError("noise-modality", "needs at least two modalities");
  }

  BlobsConfig bc;
  bc.n_per_class = s.n;
  bc.k_known = s.classes - s.unknown;
  bc.k_unknown = s.unknown;
  bc.d_feat = s.d_feat;
  bc.sep = s.sep;
  bc.m_modalities = s.modalities;
  bc.noise_modality = s.noise_modality;
  Rng rng(s.seed);
  const OpenWorldDataset ds = make_blobs(bc, rng);

  const fs::path dir(s.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());

  Manifest m;
  for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
    const std::string name = "modality_" + std::to_string(i) + ".csv";
    std::ostringstream csv;
    write_feature_csv(csv, ds.modalities[i]);
    write_text(dir / name, csv.str());
    m.modalities.emplace_back(name);
  }
  std::ostringstream labels;
  write_labels(labels, ds.labels);
  write_text(dir / "labels.txt", labels.str());
  m.labels = "labels.txt";
  m.known_classes = ds.known_classes;
  m.seed = s.seed;
  m.graph.knn_k = s.k;
  m.unknown_in_train_frac = s.unknown_in_train_frac;
  write_text(dir / "manifest.json", manifest_to_json(m));

  out << "wrote " << ds.modalities.size() << " modalities, " << ds.n() << " samples, "
      << ds.k() << " known classes to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const Settings& s, const Options& o, std::ostream& out) {
  if (s.out.empty()) throw ConfigError("out", "required");
  LoadedData d = load_data(s, o);
  const TrainConfig cfg = train_config(s, d.seed);
  const ModelSpec spec = model_spec(s, d.manifest.graph);

  const bool multi = d.ds.modalities.size() > 1;
  ProtocolResult r = multi ? run_protocol2(d.ds, cfg, spec) : run_protocol1(d.ds, cfg, spec);

  const fs::path dir(s.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  save_checkpoint(dir / "model.ckpt", make_checkpoint(r.model, r.agent));
  std::ostringstream trace;
  write_trace_csv(trace, r.trace);
  write_text(dir / "trace.csv", trace.str());
  const std::string text = metrics_text(r.metrics);
  write_text(dir / "metrics.txt", text);
  write_text(dir / "metrics.json", metrics_json(r.metrics, r.trace));
  if (!s.json_path.empty()) write_text(s.json_path, metrics_json(r.metrics, r.trace));

  out << "protocol=" << (multi ? 2 : 1) << '\n';
  out << "final_loss=" << format_double(r.trace.back().l_total) << '\n';
  out << text;
  return kExitOk;
}

Checkpoint load_model(const Settings& s, const OpenWorldDataset& ds) {
  require_file("checkpoint", s.checkpoint);
  Checkpoint ckpt = load_checkpoint(s.checkpoint);
  attach_graphs(ckpt, ds);
  return ckpt;
}

int cmd_eval(const Settings& s, const Options& o, std::ostream& out) {
  require_file("checkpoint", s.checkpoint);
  LoadedData d = load_data(s, o);
  Checkpoint ckpt = load_model(s, d.ds);
  const AgentThreshold agent = ckpt.agent ? *ckpt.agent : agent_from_validation(ckpt.model, d.ds);
  const EvaluationMetrics metrics = evaluate(ckpt.model, d.ds, agent);
  if (!s.json_path.empty()) write_text(s.json_path, metrics_json(metrics));
  out << metrics_text(metrics);
  return kExitOk;
}

int cmd_agent(const Settings& s, const Options& o, std::ostream& out) {
  require_file("checkpoint", s.checkpoint);
  LoadedData d = load_data(s, o);
  Checkpoint ckpt = load_model(s, d.ds);
  const AgentThreshold a = agent_from_validation(ckpt.model, d.ds);
  std::ostringstream text;
  text << "a=" << format_double(a.a) << '\n'
       << "a_k=" << format_double(a.a_k) << '\n'
       << "a_u=" << format_double(a.a_u) << '\n'
       << "entropy_cutoff=" << format_double(a.entropy_cutoff) << '\n'
       << "n_validation=" << a.n_validation << '\n'
       << "n_high_entropy=" << a.n_high_entropy << '\n';
  if (!s.json_path.empty()) {
    nlohmann::ordered_json j;
    j["a"] = a.a;
    j["a_k"] = a.a_k;
    j["a_u"] = a.a_u;
    j["entropy_cutoff"] = a.entropy_cutoff;
    j["n_validation"] = a.n_validation;
    j["n_high_entropy"] = a.n_high_entropy;
    write_text(s.json_path, j.dump(2) + "\n");
  }
  out << text.str();
  return kExitOk;
}

int cmd_grad_check(const Settings& s, const Options& o, std::ostream& out) {
  OpenWorldDataset ds;
  std::uint64_t seed = s.seed;
  GraphConfig graph;
  if (!s.manifest.empty()) {
    LoadedData d = load_data(s, o);
    ds = std::move(d.ds);
    seed = d.seed;
    graph = d.manifest.graph;
  } else {
    BlobsConfig bc;
    bc.n_per_class = s.n;
    bc.k_known = s.classes - s.unknown;
    bc.k_unknown = s.unknown;
    bc.d_feat = s.d_feat;
    bc.m_modalities = s.modalities;
    Rng rng(s.seed);
    ds = make_blobs(bc, rng);
    ds.masks = split_open_world(ds.labels, ds.known_classes, SplitRatios{}, s.unknown_in_train_frac,
                                rng);
    ds.graphs.assign(ds.modalities.size(), std::nullopt);
    graph.kind = parse_graph_kind(s.graph);
    graph.knn_k = s.k;
  }
  if (ds.n() > 64) {
    throw ConfigError("manifest", "grad-check needs N <= 64, got " + std::to_string(ds.n()));
  }
  const ModelSpec spec = model_spec(s, graph);
  const UnrolledModel model = build_model(ds, spec, seed, ds.modalities.size() > 1);
  const LossConfig loss{s.lambda1, s.lambda2, s.discard_frac};
  const GradCheckReport r = grad_check(model, make_batch(ds), loss, s.epsilon, s.tol, s.abs_floor);

  std::ostringstream text;
  for (const GradCheckEntry& e : r.entries) {
    text << "param." << e.name << ".max_rel_error=" << format_double(e.max_rel_error) << '\n';
    text << "param." << e.name << ".checked=" << e.checked << '\n';
    text << "param." << e.name << ".kinks_excluded=" << e.kinks_excluded << '\n';
  }
  text << "epsilon=" << format_double(r.epsilon) << '\n'
       << "tol=" << format_double(r.tol) << '\n'
       << "max_rel_error=" << format_double(r.max_rel_error) << '\n'
       << "kinks_excluded=" << r.kinks_excluded << '\n'
       << "result=" << (r.passed ? "PASS" : "FAIL") << '\n';
  if (!s.json_path.empty()) {
    nlohmann::ordered_json j;
    for (const GradCheckEntry& e : r.entries) {
      j["params"][e.name] = {{"max_rel_error", e.max_rel_error},
                             {"max_abs_error", e.max_abs_error},
                             {"checked", e.checked},
                             {"kinks_excluded", e.kinks_excluded}};
    }
    j["max_rel_error"] = r.max_rel_error;
    j["kinks_excluded"] = r.kinks_excluded;
    j["passed"] = r.passed;
    write_text(s.json_path, j.dump(2) + "\n");
  }
  out << text.str();
  return r.passed ? kExitOk : kExitRuntime;
}

int cmd_verify_contraction(const Settings& s, const Options& o, std::ostream& out) {
  LoadedData d = load_data(s, o);
  UnrolledModel model;
  if (!s.checkpoint.empty()) {
    model = load_model(s, d.ds).model;
  } else {
    model = build_model(d.ds, model_spec(s, d.manifest.graph), d.seed, d.ds.modalities.size() > 1);
  }
  if (s.modality >= model.modalities()) {
    throw ConfigError("modality", "model has " + std::to_string(model.modalities()) +
                                      " modalities");
  }
  const std::size_t n = d.ds.n();
  double factor = 1.0;
  if (s.target_norm > 0.0) factor = rescale_linear_part(model, s.modality, s.target_norm, n);
  Rng rng(d.seed);
  const ContractionReport r = verify_contraction(model, s.modality, d.ds.modalities[s.modality],
                                                 s.trials, rng, s.fixed_point_tol);
  std::ostringstream text;
  text << "rescale_factor=" << format_double(factor) << '\n'
       << "linear_norm=" << format_double(r.linear_norm) << '\n'
       << "analytic_bound=" << format_double(r.analytic_bound) << '\n'
       << "max_ratio=" << format_double(r.max_ratio) << '\n'
       << "decay_rate=" << format_double(r.decay_rate) << '\n'
       << "mean_decay_rate=" << format_double(r.mean_decay_rate) << '\n'
       << "initial_step=" << format_double(r.initial_step) << '\n'
       << "final_step=" << format_double(r.final_step) << '\n'
       << "iterations=" << r.iterations << '\n'
       << "iteration_bound=" << r.iteration_bound << '\n'
       << "result=" << (r.passed() ? "PASS" : "FAIL") << '\n';
  if (!s.json_path.empty()) {
    nlohmann::ordered_json j;
    j["linear_norm"] = r.linear_norm;
    j["analytic_bound"] = r.analytic_bound;
    j["max_ratio"] = r.max_ratio;
    j["decay_rate"] = r.decay_rate;
    j["mean_decay_rate"] = r.mean_decay_rate;
    j["iterations"] = r.iterations;
    j["iteration_bound"] = r.iteration_bound;
    j["passed"] = r.passed();
    write_text(s.json_path, j.dump(2) + "\n");
  }
  out << text.str();
  return r.passed() ? kExitOk : kExitRuntime;
}

int cmd_sweep(const Settings& s, const Options& o, std::ostream& out) {
  if (s.grid.empty()) throw ConfigError("grid", "must not be empty");
  LoadedData d = load_data(s, o);
  const ModelSpec spec = model_spec(s, d.manifest.graph);
  const bool multi = d.ds.modalities.size() > 1;
  std::ostringstream csv;
  csv << "lambda1,lambda2,accuracy,unknown_recall,a,final_loss\n";
  for (double l1 : s.grid) {
    for (double l2 : s.grid) {
      Settings run = s;
      run.lambda1 = l1;
      run.lambda2 = l2;
      const TrainConfig cfg = train_config(run, d.seed);
      const ProtocolResult r = multi ? run_protocol2(d.ds, cfg, spec) : run_protocol1(d.ds, cfg, spec);
      csv << format_double(l1) << ',' << format_double(l2) << ','
          << format_double(r.metrics.accuracy.accuracy) << ','
          << format_double(r.metrics.accuracy.unknown_recall) << ','
          << format_double(r.agent.a) << ',' << format_double(r.trace.back().l_total) << '\n';
    }
  }
  if (!s.out.empty()) {
    write_text(s.out, csv.str());
    out << "wrote " << s.grid.size() * s.grid.size() << " runs to " << s.out << '\n';
  } else {
    out << csv.str();
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unrolled-ISTA open-world learning: data generation, training, evaluation, and audits",
               "towl"};
  app.require_subcommand(1);

  struct Verb {
    CLI::App* app;
    Settings s;
    std::unique_ptr<Options> o;
  };
  std::vector<std::unique_ptr<Verb>> verbs;
  auto verb = [&](const std::string& name, const std::string& help) -> Verb& {
    auto v = std::make_unique<Verb>();
    v->app = app.add_subcommand(name, help);
    v->o = std::make_unique<Options>(v->app);
    v->app->add_option("--config", v->s.config, "JSON file of option values");
    verbs.push_back(std::move(v));
    return *verbs.back();
  };

  Verb& gen = verb("gen-data", "Write a synthetic blobs dataset and its manifest");
  {
    Settings& s = gen.s;
    Options& o = *gen.o;
    o.add("out", s.out, "Output directory");
    o.add("classes", s.classes, "Total number of classes");
    o.add("unknown", s.unknown, "Classes held out as unknown");
    o.add("n", s.n, "Samples per class");
    o.add("modalities", s.modalities, "Number of feature files");
    o.add("d-feat", s.d_feat, "Features per modality");
    o.add("sep", s.sep, "Pairwise distance of class centers");
    o.flag("noise-modality", s.noise_modality, "Make the last modality label-independent noise");
    o.add("k", s.k, "kNN graph size recorded in the manifest");
    o.add("unknown-in-train-frac", s.unknown_in_train_frac,
          "Share of unknown-class samples placed outside the test split");
    o.add("seed", s.seed, "Random seed");
  }

  Verb& train = verb("train", "Train on a manifest; writes model.ckpt, trace.csv, metrics");
  {
    Settings& s = train.s;
    Options& o = *train.o;
    o.add("manifest", s.manifest, "Experiment manifest");
    o.add("out", s.out, "Output directory");
    o.add("json", s.json_path, "Extra copy of the metrics JSON");
    o.add("seed", s.seed, "Split and training seed (default: manifest seed)");
    o.add("unknown-in-train-frac", s.unknown_in_train_frac, "Override the manifest value");
    add_train_options(o, s);
    add_model_options(o, s);
  }

  Verb& eval = verb("eval", "Evaluate a checkpoint on the test split");
  Verb& agent = verb("agent", "Recompute the rejection threshold on the validation split");
  for (Verb* v : {&eval, &agent}) {
    Settings& s = v->s;
    Options& o = *v->o;
    o.add("manifest", s.manifest, "Experiment manifest");
    o.add("checkpoint", s.checkpoint, "Model checkpoint");
    o.add("json", s.json_path, "Write the report as JSON here");
    o.add("seed", s.seed, "Split seed (default: manifest seed)");
    o.add("unknown-in-train-frac", s.unknown_in_train_frac, "Override the manifest value");
  }

  Verb& gc = verb("grad-check", "Compare backward() with central differences");
  {
    Settings& s = gc.s;
    Options& o = *gc.o;
    s.n = 4;
    s.d_feat = 6;
    o.add("manifest", s.manifest, "Experiment manifest (N <= 64); default: synthetic blobs");
    o.add("n", s.n, "Synthetic samples per class");
    o.add("classes", s.classes, "Synthetic classes");
    o.add("unknown", s.unknown, "Synthetic unknown classes");
    o.add("modalities", s.modalities, "Synthetic modalities");
    o.add("d-feat", s.d_feat, "Synthetic features per modality");
    o.add("unknown-in-train-frac", s.unknown_in_train_frac, "Share of unknown samples outside test");
    o.add("epsilon", s.epsilon, "Finite-difference step");
    o.add("tol", s.tol, "Relative error tolerance");
    o.add("abs-floor", s.abs_floor, "Denominator floor of the relative error");
    o.add("lambda1", s.lambda1, "Weight of the known-class loss");
    o.add("lambda2", s.lambda2, "Weight of the unknown loss");
    o.add("discard-frac", s.discard_frac, "Fraction dropped at each end by rank-and-discard");
    o.add("json", s.json_path, "Write the report as JSON here");
    o.add("seed", s.seed, "Random seed");
    add_model_options(o, s);
  }

  Verb& vc = verb("verify-contraction", "Audit the layer map for the contraction property");
  {
    Settings& s = vc.s;
    Options& o = *vc.o;
    o.add("manifest", s.manifest, "Experiment manifest");
    o.add("checkpoint", s.checkpoint, "Model checkpoint (default: ISTA-initialized model)");
    o.add("modality", s.modality, "Modality to audit");
    o.add("trials", s.trials, "Random pairs for the Lipschitz ratio");
    o.add("target-norm", s.target_norm, "Rescale the linear part to this norm first (0: keep)");
    o.add("fixed-point-tol", s.fixed_point_tol, "Stop when ||Z' - Z||_F falls below this");
    o.add("json", s.json_path, "Write the report as JSON here");
    o.add("seed", s.seed, "Random seed (default: manifest seed)");
    o.add("unknown-in-train-frac", s.unknown_in_train_frac, "Override the manifest value");
    add_model_options(o, s);
  }

  Verb& sweep = verb("sweep", "Grid over (lambda1, lambda2); one CSV row per run");
  {
    Settings& s = sweep.s;
    Options& o = *sweep.o;
    o.add("manifest", s.manifest, "Experiment manifest");
    o.add("out", s.out, "CSV output path (default: stdout)");
    o.add("grid", s.grid, "Values tried for both lambdas")->delimiter(',');
    o.add("seed", s.seed, "Split and training seed (default: manifest seed)");
    o.add("unknown-in-train-frac", s.unknown_in_train_frac, "Override the manifest value");
    add_train_options(o, s);
    add_model_options(o, s);
  }

  std::vector<const char*> argv{"towl"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    if (app.get_subcommands().empty()) err << app.help();
    return kExitConfig;
  }

  try {
    for (const auto& v : verbs) {
      if (!v->app->parsed()) continue;
      if (!v->s.config.empty()) v->o->apply_config(v->s.config);
      const Settings& s = v->s;
      const Options& o = *v->o;
      if (v.get() == &gen) return cmd_gen_data(s, out);
      if (v.get() == &train) return cmd_train(s, o, out);
      if (v.get() == &eval) return cmd_eval(s, o, out);
      if (v.get() == &agent) return cmd_agent(s, o, out);
      if (v.get() == &gc) return cmd_grad_check(s, o, out);
      if (v.get() == &vc) return cmd_verify_contraction(s, o, out);
      return cmd_sweep(s, o, out);
    }
  } catch (const ConfigError& e) {
    err << "towl: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "towl: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << "towl: no command given\n";
  return kExitConfig;
}

}  // namespace towl::cli
