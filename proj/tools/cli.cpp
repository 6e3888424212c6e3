#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgdet/data_io.hpp"
#include "sgdet/errors.hpp"
#include "sgdet/evaluation.hpp"
#include "sgdet/graph.hpp"
#include "sgdet/model.hpp"
#include "sgdet/postprocess.hpp"
#include "sgdet/synth.hpp"
#include "sgdet/trainer.hpp"

namespace sgdet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values, defaulted from the library structs.
struct Options {
  // paths
  std::string manifest, annotations, checkpoint, out, metrics, raw_out, detections, scores, video,
      dot;
  std::uint64_t seed = 0;

  SynthConfig synth;

  TrainConfig train;
  std::size_t epochs = 0;  // 0 keeps the two-phase default
  std::string hidden = "512,128";
  bool no_semantic = false;
  std::string temporal_mode = "rescale";

  double alpha = 0.5;
  std::string nms_method = "linear";
  SoftNmsConfig nms;
  std::string label = "action";

  std::string subset;
  bool class_agnostic = false;
  std::string thresholds = "activitynet";
  bool alpha_search = false;
};

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError(flag + ": expected comma-separated positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(flag + ": empty list");
  return out;
}

std::vector<double> parse_thresholds(const std::string& text) {
  if (text == "activitynet") return activitynet_thresholds();
  if (text == "thumos") return thumos_thresholds();
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v > 0.0 && v <= 1.0)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--thresholds: expected activitynet, thumos or values in (0, 1], got '" +
                        text + "'");
    }
  }
  if (out.empty()) throw ConfigError("--thresholds: empty list");
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

// Turns a JSON config object into flags placed before the user's own flags,
// so that with take-last semantics the command line wins.
std::vector<std::string> config_flags(const fs::path& path) {
  const json doc = read_json(path);
  if (!doc.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : doc.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_string()) {
      out.push_back(flag);
      out.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      out.push_back(flag);
      out.push_back(value.dump());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ',';
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      out.push_back(flag);
      out.push_back(joined);
    } else {
      throw ConfigError(path.string() + ": unsupported value for '" + key + "'");
    }
  }
  return out;
}

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::vector<std::string> out(args.begin(), args.begin() + std::min<std::size_t>(2, i));
    const auto extra = config_flags(path);
    out.insert(out.end(), extra.begin(), extra.end());
    // remaining user arguments, minus the --config pair
    for (std::size_t j = std::min<std::size_t>(2, i); j < args.size(); ++j) {
      if (j == i) {
        if (args[j] == "--config") ++j;
        continue;
      }
      out.push_back(args[j]);
    }
    return out;
  }
  return args;
}

fs::path default_annotations(const std::string& manifest) {
  return fs::path(manifest).parent_path() / "annotations.json";
}

std::size_t common_dim(const Dataset& data) {
  if (data.sequences.empty()) throw DataError("dataset has no videos");
  const std::size_t dim = data.sequences.front().dim;
  for (const auto& s : data.sequences) {
    if (s.dim != dim) {
      throw DataError("video " + s.video_id + " has " + std::to_string(s.dim) +
                      "-dimensional features, expected " + std::to_string(dim));
    }
  }
  return dim;
}

void apply_train_flags(Options& o) {
  TrainConfig& t = o.train;
  t.seed = o.seed;
  t.model.hidden = parse_sizes(o.hidden, "--hidden");
  t.model.semantic = !o.no_semantic;
  if (o.temporal_mode == "rescale") {
    t.layout.mode = SequenceLayout::Mode::rescale;
  } else if (o.temporal_mode == "window") {
    t.layout.mode = SequenceLayout::Mode::window;
  } else {
    throw ConfigError("--temporal-mode must be rescale or window, got '" + o.temporal_mode + "'");
  }
  if (o.epochs > 0) {
    t.phase1_epochs = (o.epochs + 1) / 2;
    t.phase2_epochs = o.epochs - t.phase1_epochs;
  }
  if (o.subset == "all") {
    t.subset.clear();
  } else if (!o.subset.empty()) {
    t.subset = o.subset;
  }
}

// ---- subcommands ----

int run_synth(Options& o, std::ostream& out) {
  o.synth.seed = o.seed;
  const Dataset data = synth_dataset(o.synth);
  write_dataset(o.out, data);
  std::size_t actions = 0;
  for (const auto& [id, v] : data.annotations) actions += v.segments.size();
  out << "wrote " << data.sequences.size() << " videos (" << actions << " actions) to " << o.out
      << '\n';
  return kOk;
}

int run_train(Options& o, std::ostream& out) {
  apply_train_flags(o);
  const fs::path ann = o.annotations.empty() ? default_annotations(o.manifest) : fs::path(o.annotations);
  const Dataset data = load_dataset(o.manifest, ann);
  o.train.model.input_dim = common_dim(data);
  o.train.validate();
  o.train.model.validate();

  Model model(o.train.model);
  AnchorCache cache(model.config());
  const auto samples = prepare_samples(data, o.train, cache);
  if (samples.empty()) {
    throw DataError("no training windows with actions (subset '" + o.train.subset + "')");
  }
  out << "training on " << samples.size() << " windows, " << model.parameters().total_elements()
      << " parameters\n";

  const fs::path metrics_path = o.metrics.empty() ? fs::path(o.out + ".metrics.jsonl") : fs::path(o.metrics);
  if (metrics_path.has_parent_path()) fs::create_directories(metrics_path.parent_path());
  std::ofstream metrics(metrics_path);
  if (!metrics) throw DataError("cannot write " + metrics_path.string());

  const auto t0 = std::chrono::steady_clock::now();
  train(model, samples, o.train, [&](const EpochMetrics& m) {
    metrics << m.to_json().dump() << '\n' << std::flush;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "epoch " << m.epoch << '/' << o.train.epochs() << "  loss " << std::setprecision(5)
        << m.loss_total << " (g " << m.loss_g << ", n " << m.loss_n << ")  lr " << m.lr << "  "
        << std::setprecision(1) << std::fixed << secs << "s\n"
        << std::defaultfloat;
  });
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  model.save(o.out, {{"train", o.train.to_json()}});
  out << "saved checkpoint " << o.out << '\n';
  return kOk;
}

SequenceLayout layout_from_extra(const json& extra) {
  if (extra.is_object() && extra.contains("train")) {
    const auto& t = extra.at("train");
    if (t.contains("layout")) return SequenceLayout::from_json(t.at("layout"));
  }
  return {};
}

SoftNmsConfig nms_config(const Options& o) {
  SoftNmsConfig c = o.nms;
  c.method = parse_nms_method(o.nms_method);
  return c;
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("--alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

int run_infer(Options& o, std::ostream& out) {
  check_alpha(o.alpha);
  const SoftNmsConfig nms = nms_config(o);
  json extra;
  const Model model = Model::load(o.checkpoint, &extra);
  const SequenceLayout layout = layout_from_extra(extra);

  std::optional<fs::path> ann;
  if (!o.annotations.empty()) ann = o.annotations;
  if (!o.subset.empty() && !ann) throw ConfigError("--subset requires --annotations");
  const Dataset data = load_dataset(o.manifest, ann);
  if (!data.sequences.empty() && common_dim(data) != model.config().input_dim) {
    throw DataError("features are " + std::to_string(common_dim(data)) +
                    "-dimensional but the checkpoint expects " +
                    std::to_string(model.config().input_dim));
  }

  AnchorCache cache(model.config());
  DetectionMap detections;
  ScoreMap raw;
  for (const auto& seq : data.sequences) {
    if (!o.subset.empty()) {
      auto it = data.annotations.find(seq.video_id);
      if (it == data.annotations.end() || it->second.subset != o.subset) continue;
    }
    auto windows = predict_windows(model, seq, layout, cache);
    detections[seq.video_id] =
        finalize_detections(windows, seq.duration_seconds, o.alpha, nms, o.label);
    if (!o.raw_out.empty()) raw[seq.video_id] = {seq.duration_seconds, std::move(windows)};
  }
  write_text(o.out, detections_to_json(detections).dump() + '\n');
  if (!o.raw_out.empty()) write_text(o.raw_out, scores_to_json(raw).dump() + '\n');
  out << "wrote detections for " << detections.size() << " videos to " << o.out << '\n';
  return kOk;
}

DetectionMap detections_from_scores(const ScoreMap& scores, double alpha,
                                    const SoftNmsConfig& nms, const std::string& label) {
  DetectionMap out;
  for (const auto& [id, v] : scores) {
    out[id] = finalize_detections(v.windows, v.duration, alpha, nms, label);
  }
  return out;
}

int run_eval(Options& o, std::ostream& out) {
  const auto thresholds = parse_thresholds(o.thresholds);
  const AnnotationSet annotations = read_annotations(o.annotations);
  if (o.detections.empty() && !o.alpha_search) {
    throw ConfigError("eval needs --detections, or --alpha-search with --scores");
  }
  if (o.alpha_search && o.scores.empty()) throw ConfigError("--alpha-search requires --scores");

  auto evaluate = [&](const DetectionMap& d) {
    const EvalInputs in = group_for_evaluation(d, annotations, o.subset, o.class_agnostic);
    return map_suite(in.predictions, in.ground_truth, thresholds);
  };

  EvalReport report;
  json doc;
  if (o.alpha_search) {
    const ScoreMap scores = scores_from_json(read_json(o.scores));
    const SoftNmsConfig nms = nms_config(o);
    json grid = json::array();
    double best_alpha = 0.0;
    out << "alpha   average-mAP\n";
    for (int step = 1; step <= 9; ++step) {
      const double alpha = 0.1 * step;
      EvalReport r = evaluate(detections_from_scores(scores, alpha, nms, o.label));
      out << std::fixed << std::setprecision(1) << alpha << "     " << std::setprecision(4)
          << r.average_map << '\n'
          << std::defaultfloat;
      grid.push_back({{"alpha", alpha}, {"average_mAP", r.average_map}});
      if (step == 1 || r.average_map > report.average_map) {
        report = std::move(r);
        best_alpha = alpha;
      }
    }
    out << "best alpha " << best_alpha << '\n';
    if (!o.detections.empty()) report = evaluate(detections_from_json(read_json(o.detections)));
    doc = report.to_json();
    doc["alpha_search"] = {{"grid", grid}, {"best_alpha", best_alpha}};
  } else {
    report = evaluate(detections_from_json(read_json(o.detections)));
    doc = report.to_json();
  }
  if (report.empty_ground_truth) {
    out << "warning: no ground-truth segments in the evaluated subset\n";
  }
  out << report.to_table();
  if (!o.out.empty()) write_text(o.out, doc.dump(2) + '\n');
  return kOk;
}

int run_export_graph(Options& o, std::ostream& out) {
  const Dataset data = load_dataset(o.manifest);
  auto it = std::find_if(data.sequences.begin(), data.sequences.end(),
                         [&](const FeatureSequence& s) { return s.video_id == o.video; });
  if (it == data.sequences.end()) throw DataError("video '" + o.video + "' not in manifest");

  std::optional<Model> model;
  if (!o.checkpoint.empty()) {
    model.emplace(Model::load(o.checkpoint));
  } else {
    apply_train_flags(o);
    o.train.model.input_dim = it->dim;
    model.emplace(o.train.model);
    model->initialize(o.seed);
  }
  if (model->config().input_dim != it->dim) {
    throw DataError("video features are " + std::to_string(it->dim) +
                    "-dimensional but the model expects " +
                    std::to_string(model->config().input_dim));
  }
  const std::size_t k = model->config().k_neighbors;
  if (k >= it->length) {
    throw ConfigError("K = " + std::to_string(k) + " needs more than " +
                      std::to_string(it->length) + " snippets");
  }

  std::vector<double> cl(it->dim * it->length);
  for (std::size_t l = 0; l < it->length; ++l)
    for (std::size_t c = 0; c < it->dim; ++c) cl[c * it->length + l] = it->at(l, c);
  NoGradGuard no_grad;
  const Tensor x = model->project_input(Tensor::from_vector({it->dim, it->length}, std::move(cl)));
  const BackboneOutput y = backbone_forward(x, model->blocks(), k);

  VideoGraph graph;
  graph.length = it->length;
  graph.k = k;
  graph.temporal = temporal_adjacency(it->length);
  graph.semantic_layers = y.semantic_edges;
  write_text(o.out, graph_to_json(graph).dump() + '\n');
  if (!o.dot.empty()) write_text(o.dot, graph_to_dot(graph));
  out << "wrote " << graph.semantic_layers.size() << " layers for " << o.video << " to "
      << o.out << '\n';
  return kOk;
}

void add_model_flags(CLI::App* app, Options& o) {
  auto& m = o.train.model;
  app->add_option("--width", m.width, "internal channel width");
  app->add_option("--blocks", m.blocks, "number of GCNeXt blocks");
  app->add_option("--cardinality", m.cardinality, "groups per stream");
  app->add_option("--k-neighbors", m.k_neighbors, "semantic neighbours per node");
  app->add_flag("--no-semantic", o.no_semantic, "drop semantic streams and alignment");
  app->add_option("--tau1", m.tau1, "temporal alignment resolution");
  app->add_option("--tau2", m.tau2, "semantic alignment resolution");
  app->add_option("--max-duration", m.max_duration, "anchor duration bound D");
  app->add_option("--hidden", o.hidden, "localization hidden widths, comma separated");
  app->add_option("--lambda1", m.lambda1, "regression loss weight");
  app->add_option("--lambda2", m.lambda2, "L2 weight");
}

void add_nms_flags(CLI::App* app, Options& o) {
  app->add_option("--alpha", o.alpha, "score fusion exponent");
  app->add_option("--nms-method", o.nms_method, "linear or gaussian");
  app->add_option("--nms-threshold", o.nms.threshold, "linear Soft-NMS IoU threshold");
  app->add_option("--nms-sigma", o.nms.sigma, "Gaussian Soft-NMS spread");
  app->add_option("--top-m", o.nms.top_m, "detections kept per video");
  app->add_option("--label", o.label, "label written on detections");
}

int run(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> args = expand_config(raw);
  Options o;
  CLI::App app{"Sub-graph localization for temporal action detection", "sgdet"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", "sgdet 0.1.0");
  std::string config_path;  // consumed by expand_config

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--videos", o.synth.num_videos);
  synth->add_option("--length", o.synth.length, "snippets per video");
  synth->add_option("--dim", o.synth.dim, "feature dimension");
  synth->add_option("--min-actions", o.synth.min_actions);
  synth->add_option("--max-actions", o.synth.max_actions);
  synth->add_option("--min-action-length", o.synth.min_action_length);
  synth->add_option("--max-action-length", o.synth.max_action_length);
  synth->add_option("--classes", o.synth.num_classes);
  synth->add_option("--noise", o.synth.noise, "background noise standard deviation");
  synth->add_option("--seconds-per-snippet", o.synth.seconds_per_snippet);
  synth->add_option("--validation-every", o.synth.validation_every);
  synth->add_option("--seed", o.seed);

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--manifest", o.manifest)->required();
  train->add_option("--annotations", o.annotations, "defaults to annotations.json beside the manifest");
  train->add_option("--out", o.out, "checkpoint path")->required();
  train->add_option("--metrics", o.metrics, "JSONL log, defaults to <out>.metrics.jsonl");
  train->add_option("--seed", o.seed);
  train->add_option("--epochs", o.epochs, "total epochs, split evenly over the two phases");
  train->add_option("--lr", o.train.lr1, "phase-1 learning rate");
  train->add_option("--lr2", o.train.lr2, "phase-2 learning rate");
  train->add_option("--batch-size", o.train.batch_size);
  train->add_option("--subset", o.subset, "annotation subset to train on ('all' for every video)");
  train->add_option("--temporal-mode", o.temporal_mode, "rescale or window");
  train->add_option("--length", o.train.layout.length, "rescale target or window size");
  train->add_option("--stride", o.train.layout.stride, "window stride");
  add_model_flags(train, o);

  auto* infer = app.add_subcommand("infer", "detect actions with a trained checkpoint");
  infer->add_option("--manifest", o.manifest)->required();
  infer->add_option("--checkpoint", o.checkpoint)->required();
  infer->add_option("--out", o.out, "detection JSON")->required();
  infer->add_option("--annotations", o.annotations, "needed only with --subset");
  infer->add_option("--subset", o.subset, "only videos of this annotation subset");
  infer->add_option("--raw-out", o.raw_out, "also write pre-NMS anchor scores");
  add_nms_flags(infer, o);

  auto* eval = app.add_subcommand("eval", "score detections against annotations");
  eval->add_option("--detections,--predictions", o.detections, "detection JSON");
  eval->add_option("--annotations", o.annotations)->required();
  eval->add_option("--subset", o.subset, "only videos of this annotation subset");
  eval->add_flag("--class-agnostic", o.class_agnostic);
  eval->add_option("--thresholds", o.thresholds, "activitynet, thumos or a comma list");
  eval->add_option("--out", o.out, "report JSON");
  eval->add_flag("--alpha-search", o.alpha_search, "grid-search alpha over 0.1..0.9");
  eval->add_option("--scores", o.scores, "raw scores written by infer --raw-out");
  add_nms_flags(eval, o);

  auto* graph = app.add_subcommand("export-graph", "dump per-block semantic edges of one video");
  graph->add_option("--manifest", o.manifest)->required();
  graph->add_option("--video", o.video)->required();
  graph->add_option("--out", o.out, "graph JSON")->required();
  graph->add_option("--dot", o.dot, "also write Graphviz DOT");
  graph->add_option("--checkpoint", o.checkpoint, "trained weights; otherwise seeded init");
  graph->add_option("--seed", o.seed);
  add_model_flags(graph, o);

  for (auto* sub : {synth, train, infer, eval, graph}) {
    sub->add_option("--config", config_path, "JSON file of flag values; flags win");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  if (synth->parsed()) return run_synth(o, out);
  if (train->parsed()) return run_train(o, out);
  if (infer->parsed()) return run_infer(o, out);
  if (eval->parsed()) return run_eval(o, out);
  return run_export_graph(o, out);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run(args, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kDataError;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace sgdet::cli
