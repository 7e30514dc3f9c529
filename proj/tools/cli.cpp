#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "blnet/analyzer.hpp"
#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/serialize.hpp"
#include "blnet/shape_inference.hpp"
#include "blnet/tables.hpp"
#include "blnet/tensor.hpp"
#include "blnet/trainer.hpp"
#include "blnet/validate.hpp"

namespace blnet::cli {

namespace {

using nlohmann::json;

enum class Format { Text, Csv, Json };

// Flags that pick and shape a model. Every model-taking subcommand shares them.
struct ModelArgs {
  std::string preset;
  std::string graph_file;
  std::optional<int> alpha, beta, K, m;
  std::string merge;
  std::string input;
};

struct OutputArgs {
  Format format = Format::Text;
  std::string out_file;
};

void add_model_options(CLI::App* sub, ModelArgs& m, const std::string& default_preset = "") {
  m.preset = default_preset;
  sub->add_option("--preset", m.preset, "preset id (see `blnet build --list`)");
  sub->add_option("--graph", m.graph_file, "graph file instead of a preset");
  sub->add_option("--alpha", m.alpha, "little-branch width divisor")->check(CLI::PositiveNumber);
  sub->add_option("--beta", m.beta, "little-branch depth divisor")->check(CLI::PositiveNumber);
  sub->add_option("--K", m.K, "branch count")->check(CLI::PositiveNumber);
  sub->add_option("--m", m.m, "number of merges")->check(CLI::PositiveNumber);
  sub->add_option("--merge", m.merge, "merge mode")->check(CLI::IsMember({"add", "addition", "concat", "concatenation"}));
  sub->add_option("--input", m.input, "input extent: S, HxW or N,C,H,W");
}

void add_output_options(CLI::App* sub, OutputArgs& o) {
  const std::map<std::string, Format> formats{{"text", Format::Text}, {"csv", Format::Csv}, {"json", Format::Json}};
  sub->add_option("--format", o.format, "output format")->transform(CLI::CheckedTransformer(formats));
  sub->add_option("--out", o.out_file, "write the report to a file instead of stdout");
}

std::vector<int64_t> parse_extents(const std::string& text) {
  std::vector<int64_t> v;
  std::string token;
  for (char ch : text + ",") {
    if (ch == ',' || ch == 'x' || ch == 'X') {
      if (token.empty()) throw Error(ErrorKind::InvalidArgument, "bad --input '" + text + "'");
      std::size_t used = 0;
      int64_t value = 0;
      try {
        value = std::stoll(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size() || value < 1) throw Error(ErrorKind::InvalidArgument, "bad --input '" + text + "'");
      v.push_back(value);
      token.clear();
    } else {
      token += ch;
    }
  }
  if (v.size() != 1 && v.size() != 2 && v.size() != 4) {
    throw Error(ErrorKind::InvalidArgument, "--input takes S, HxW or N,C,H,W");
  }
  return v;
}

TensorShape apply_input(TensorShape base, const std::string& text) {
  if (text.empty()) return base;
  const auto v = parse_extents(text);
  if (v.size() == 4) return {v[0], v[1], v[2], v[3]};
  base.height = v[0];
  base.width = v.size() == 2 ? v[1] : v[0];
  return base;
}

struct Model {
  Graph graph;
  TensorShape input;
  std::string label;
};

Model load_model(const ModelArgs& m) {
  if (!m.graph_file.empty()) {
    if (!m.preset.empty()) {
      throw Error(ErrorKind::InvalidArgument, "--graph and --preset are mutually exclusive");
    }
    if (m.alpha || m.beta || m.K || m.m || !m.merge.empty()) {
      throw Error(ErrorKind::InvalidArgument, "architecture flags apply to presets only");
    }
    Graph g = load_graph(m.graph_file);
    const auto declared = declared_input_shape(g);
    if (!declared && m.input.empty()) {
      throw Error(ErrorKind::InvalidArgument, "graph declares no input shape; pass --input N,C,H,W");
    }
    const TensorShape input = apply_input(declared.value_or(TensorShape{}), m.input);
    return {std::move(g), input, m.graph_file};
  }
  if (m.preset.empty()) throw Error(ErrorKind::InvalidArgument, "--preset or --graph is required");
  const PresetInfo* info = find_preset(m.preset);
  if (!info) throw Error(ErrorKind::UnknownBackbone, "unknown preset '" + m.preset + "'");
  PresetOverrides o;
  o.alpha = m.alpha;
  o.beta = m.beta;
  o.K = m.K;
  o.num_merges = m.m;
  if (!m.merge.empty()) o.merge_mode = merge_mode_from_name(m.merge.substr(0, 3) == "add" ? "addition" : "concatenation");
  const TensorShape input = apply_input(info->input, m.input);
  if (input.batch != info->input.batch || input.channels != info->input.channels) {
    throw Error(ErrorKind::InvalidArgument, "presets fix batch and channels; pass S or HxW to --input");
  }
  if (input != info->input) {
    o.height = input.height;
    o.width = input.width;
  }
  return {build_preset(m.preset, o), input, m.preset};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json shape_json(const TensorShape& s) { return json::array({s.batch, s.channels, s.height, s.width}); }

void emit(const OutputArgs& o, const std::string& text, std::ostream& out) {
  if (o.out_file.empty()) {
    out << text;
    return;
  }
  std::ofstream f(o.out_file, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot write '" + o.out_file + "'");
  f << text;
  if (!f) throw Error(ErrorKind::Io, "write to '" + o.out_file + "' failed");
}

// Shape of the last node per stage, in first-appearance order.
std::vector<std::pair<std::string, TensorShape>> stage_outputs(const Graph& g, const ShapeMap& shapes) {
  std::vector<std::pair<std::string, TensorShape>> out;
  for (const auto& n : g.nodes()) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == n.stage; });
    if (it == out.end()) {
      out.emplace_back(n.stage, shapes.at(n.id));
    } else {
      it->second = shapes.at(n.id);
    }
  }
  return out;
}

void require_valid(const Graph& g) {
  const ValidationReport r = validate(g);
  if (!r.ok()) throw Error(ErrorKind::InvalidGraph, r.to_string());
}

// ---------------------------------------------------------------------------

std::string graph_summary(const Model& m, Format format) {
  require_valid(m.graph);
  const ShapeMap shapes = infer_shapes(m.graph, m.input);
  const TensorShape output = shapes.at(m.graph.outputs().front());
  if (format == Format::Json) {
    json j{{"graph", m.graph.meta("name", m.label)},
           {"nodes", m.graph.size()},
           {"input", shape_json(m.input)},
           {"output", shape_json(output)},
           {"valid", true}};
    return j.dump(2) + "\n";
  }
  if (format == Format::Csv) {
    return "graph,nodes,input,output\n" + m.graph.meta("name", m.label) + "," + std::to_string(m.graph.size()) + "," +
           m.input.to_string() + "," + output.to_string() + "\n";
  }
  return "graph " + m.graph.meta("name", m.label) + ": " + std::to_string(m.graph.size()) + " nodes, input " +
         m.input.to_string() + ", output " + output.to_string() + ", valid\n";
}

std::string list_presets(Format format) {
  std::ostringstream s;
  if (format == Format::Json) {
    json j = json::array();
    for (const auto& p : preset_registry()) {
      j.push_back({{"id", p.id}, {"input", shape_json(p.input)}, {"description", p.description}});
    }
    return j.dump(2) + "\n";
  }
  if (format == Format::Csv) s << "id,input,description\n";
  for (const auto& p : preset_registry()) {
    if (format == Format::Csv) {
      s << p.id << "," << p.input.to_string() << "," << p.description << "\n";
    } else {
      char line[160];
      std::snprintf(line, sizeof line, "%-22s %-14s %s\n", p.id.c_str(), p.input.to_string().c_str(),
                    p.description.c_str());
      s << line;
    }
  }
  return s.str();
}

// One describe row: a stage output, or a merge point inside a stage (no cost).
struct DescribeRow {
  std::string label;
  TensorShape shape;
  std::optional<StageCost> cost;
};

std::vector<DescribeRow> describe_rows(const Graph& g, const ShapeMap& shapes, const CostReport& report) {
  std::vector<DescribeRow> rows;
  for (const auto& [stage, shape] : stage_outputs(g, shapes)) {
    StageCost c{stage, 0, 0};
    for (const auto& s : report.stages) {
      if (s.stage == stage) c = s;
    }
    const std::string merge_id = stage + ".module.relu";
    if (g.index_of(merge_id) && shapes.at(merge_id) != shape) rows.push_back({stage + ".merge", shapes.at(merge_id), {}});
    rows.push_back({stage, shape, c});
  }
  return rows;
}

std::string describe(const Model& m, Format format) {
  require_valid(m.graph);
  const ShapeMap shapes = infer_shapes(m.graph, m.input);
  const CostReport report = count_graph(m.graph, m.input);
  const auto rows = describe_rows(m.graph, shapes, report);
  const bool speech = m.graph.meta("family") == "speech";

  if (format == Format::Json) {
    json stages = json::array();
    for (const auto& r : rows) {
      json e{{"stage", r.label}, {"output", shape_json(r.shape)}};
      if (r.cost) {
        e["flops"] = r.cost->flops;
        e["params"] = r.cost->params;
      }
      stages.push_back(e);
    }
    json j{{"graph", m.graph.meta("name", m.label)}, {"input", shape_json(m.input)}, {"stages", stages},
           {"total_flops", report.total_flops}, {"total_params", report.total_params}};
    return j.dump(2) + "\n";
  }
  std::ostringstream s;
  if (format == Format::Csv) {
    s << "stage,channels,height,width,flops,params\n";
    for (const auto& r : rows) {
      s << r.label << "," << r.shape.channels << "," << r.shape.height << "," << r.shape.width << ",";
      if (r.cost) {
        s << r.cost->flops << "," << r.cost->params << "\n";
      } else {
        s << ",\n";
      }
    }
    return s.str();
  }
  s << "graph " << m.graph.meta("name", m.label) << ", input " << m.input.to_string() << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %8s %8s %8s %12s %12s\n", "stage", "channels", speech ? "freq" : "height",
                speech ? "time" : "width", "GFLOPs", "Mparams");
  s << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %8lld %8lld %8lld", r.label.c_str(), static_cast<long long>(r.shape.channels),
                  static_cast<long long>(r.shape.height), static_cast<long long>(r.shape.width));
    s << line;
    if (r.cost) {
      std::snprintf(line, sizeof line, " %12.4f %12.4f", r.cost->flops / 1e9, r.cost->params / 1e6);
      s << line;
    }
    s << "\n";
  }
  std::snprintf(line, sizeof line, "%-14s %26s %12.4f %12.4f\n", "total", "", report.total_flops / 1e9,
                report.total_params / 1e6);
  s << line;
  return s.str();
}

std::string cost(const Model& m, Format format, bool flops) {
  require_valid(m.graph);
  const CostReport r = count_graph(m.graph, m.input);
  const int64_t total = flops ? r.total_flops : r.total_params;
  if (format == Format::Csv) return r.to_csv();
  if (format == Format::Json) {
    json stages = json::array();
    for (const auto& s : r.stages) stages.push_back({{"stage", s.stage}, {"flops", s.flops}, {"params", s.params}});
    json j{{"graph", r.graph_name},      {"convention", r.convention},     {"input", shape_json(r.input)},
           {"total_flops", r.total_flops}, {"total_params", r.total_params}, {"stages", stages}};
    return j.dump(2) + "\n";
  }
  return (flops ? "flops " : "params ") + std::to_string(total) + " (" +
         fmt(flops ? "%.4f G" : "%.4f M", total / (flops ? 1e9 : 1e6)) + ")  " + r.graph_name + " @ " +
         r.input.to_string() + "\n";
}

std::string comparison(const Model& m, const Model& base, Format format) {
  require_valid(m.graph);
  require_valid(base.graph);
  const Comparison c = compare(m.graph, m.input, base.graph, base.input);
  if (format == Format::Csv) return c.to_csv();
  if (format == Format::Json) {
    json stages = json::array();
    for (const auto& s : c.stages) {
      stages.push_back({{"stage", s.stage},
                        {"flops", s.flops},
                        {"baseline_flops", s.baseline_flops},
                        {"params", s.params},
                        {"baseline_params", s.baseline_params}});
    }
    json j{{"graph", c.graph.graph_name},       {"baseline", c.baseline.graph_name},
           {"flops", c.graph.total_flops},      {"baseline_flops", c.baseline.total_flops},
           {"params", c.graph.total_params},    {"baseline_params", c.baseline.total_params},
           {"speedup", c.speedup},              {"stages", stages}};
    return j.dump(2) + "\n";
  }
  return c.summary();
}

int reproduce(const std::string& which, std::optional<double> tolerance, Format format, const OutputArgs& o,
              std::ostream& out) {
  std::vector<std::string> ids;
  if (which == "all") {
    ids = table_ids();
  } else {
    ids.push_back(which);
  }
  std::vector<TableResult> results;
  for (const auto& id : ids) results.push_back(reproduce_table(id, tolerance));
  bool ok = true;
  for (const auto& r : results) ok = ok && r.passed();

  std::string text;
  if (format == Format::Json) {
    json j = json::array();
    for (const auto& r : results) j.push_back(json::parse(r.to_json()));
    text = j.dump(2) + "\n";
  } else if (format == Format::Csv) {
    for (std::size_t i = 0; i < results.size(); ++i) {
      std::string csv = results[i].to_csv();
      if (i > 0) csv = csv.substr(csv.find('\n') + 1);
      text += csv;
    }
  } else {
    for (const auto& r : results) text += r.to_text();
    text += ok ? "all cells within tolerance\n" : "some cells outside tolerance\n";
  }
  emit(o, text, out);
  return ok ? kOk : kCheckFailed;
}

int64_t head_classes(const Graph& g) {
  const Node& head = g.node(g.outputs().front());
  if (const auto* fc = std::get_if<LinearParams>(&head.spec)) return fc->out_features;
  if (const auto* conv = std::get_if<Conv2dParams>(&head.spec)) return conv->out_channels;
  throw Error(ErrorKind::InvalidArgument, "graph output is not a classifier");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Big-Little network builder, cost analyzer and toy trainer", "blnet"};
  app.require_subcommand(1);

  // Each subcommand owns its model flags so per-command default presets do not collide.
  std::map<std::string, ModelArgs> models;
  OutputArgs output;

  // build
  bool list = false;
  auto* build = app.add_subcommand("build", "build a graph, validate it and print a summary");
  add_model_options(build, models["build"]);
  add_output_options(build, output);
  std::string build_graph_out;
  build->add_option("--save", build_graph_out, "also write the graph file here");
  build->add_flag("--list", list, "list the preset registry");

  auto* desc = app.add_subcommand("describe", "per-stage output shapes and costs");
  add_model_options(desc, models["desc"]);
  add_output_options(desc, output);

  auto* flops = app.add_subcommand("flops", "multiply-accumulate count per sample");
  add_model_options(flops, models["flops"]);
  add_output_options(flops, output);

  auto* params = app.add_subcommand("params", "parameter count");
  add_model_options(params, models["params"]);
  add_output_options(params, output);

  auto* cmp = app.add_subcommand("compare", "cost relative to a baseline");
  add_model_options(cmp, models["cmp"]);
  add_output_options(cmp, output);
  std::string baseline;
  cmp->add_option("--baseline", baseline, "baseline preset (default: the preset's own baseline)");

  auto* repro = app.add_subcommand("reproduce", "check computed costs against the published tables");
  add_output_options(repro, output);
  std::string table = "all";
  std::optional<double> tolerance;
  repro->add_option("--table", table, "table id or 'all'");
  repro->add_option("--tolerance", tolerance, "relative tolerance for every gated cell")->check(CLI::NonNegativeNumber);

  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  add_model_options(gc, models["gc"], "micro-module");
  add_output_options(gc, output);
  GradCheckOptions gc_opt;
  double gc_threshold = 1e-4;
  std::string gc_precision = "f64", gc_mode = "train";
  gc->add_option("--eps", gc_opt.eps, "finite-difference step")->check(CLI::PositiveNumber);
  gc->add_option("--coordinates", gc_opt.coordinates, "coordinates to check")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_opt.seed, "sampling seed");
  gc->add_option("--threshold", gc_threshold, "pass bound on the worst relative error");
  gc->add_option("--precision", gc_precision)->check(CLI::IsMember({"f32", "f64"}));
  gc->add_option("--mode", gc_mode)->check(CLI::IsMember({"train", "eval"}));

  auto* tr = app.add_subcommand("train", "train a micro network on the synthetic dataset");
  add_model_options(tr, models["tr"], "micro-bl");
  add_output_options(tr, output);
  std::string config_file, checkpoint, history_file, tr_precision;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr, momentum, weight_decay;
  std::optional<uint64_t> seed;
  int samples_per_class = 16;
  tr->add_option("--config", config_file, "key = value training config; flags override it");
  tr->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  tr->add_option("--lr", lr, "base learning rate");
  tr->add_option("--momentum", momentum);
  tr->add_option("--weight-decay", weight_decay);
  tr->add_option("--seed", seed);
  tr->add_option("--precision", tr_precision)->check(CLI::IsMember({"f32", "f64"}));
  tr->add_option("--samples-per-class", samples_per_class)->check(CLI::PositiveNumber);
  tr->add_option("--checkpoint", checkpoint, "write final weights here");
  tr->add_option("--history", history_file, "write the per-epoch CSV here");

  auto* exp = app.add_subcommand("export", "write a graph file");
  add_model_options(exp, models["exp"]);
  exp->add_option("--out", output.out_file, "destination (stdout if omitted)");

  auto* imp = app.add_subcommand("import", "read a graph file, validate it and print a summary");
  std::string import_file;
  imp->add_option("file", import_file, "graph file")->required();
  add_output_options(imp, output);
  std::string import_input;
  imp->add_option("--input", import_input, "input extent override");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (build->parsed()) {
      if (list) {
        emit(output, list_presets(output.format), out);
        return kOk;
      }
      const Model m = load_model(models["build"]);
      emit(output, graph_summary(m, output.format), out);
      if (!build_graph_out.empty()) save_graph(m.graph, build_graph_out);
      return kOk;
    }
    if (desc->parsed()) {
      emit(output, describe(load_model(models["desc"]), output.format), out);
      return kOk;
    }
    if (flops->parsed() || params->parsed()) {
      const ModelArgs& a = flops->parsed() ? models["flops"] : models["params"];
      emit(output, cost(load_model(a), output.format, flops->parsed()), out);
      return kOk;
    }
    if (cmp->parsed()) {
      const ModelArgs& a = models["cmp"];
      const Model m = load_model(a);
      if (baseline.empty()) baseline = baseline_of(a.preset);
      if (baseline.empty()) throw Error(ErrorKind::InvalidArgument, "no default baseline; pass --baseline");
      ModelArgs b;
      b.preset = baseline;
      b.input = a.input;
      emit(output, comparison(m, load_model(b), output.format), out);
      return kOk;
    }
    if (repro->parsed()) return reproduce(table, tolerance, output.format, output, out);
    if (gc->parsed()) {
      const Model m = load_model(models["gc"]);
      gc_opt.mode = gc_mode == "eval" ? Mode::Eval : Mode::Train;
      const GradCheckReport r = gradient_check(m.graph, m.input, precision_from_name(gc_precision), gc_opt);
      const bool ok = r.passed(gc_threshold);
      std::string text;
      if (output.format == Format::Json) {
        json j{{"graph", m.graph.meta("name", m.label)}, {"max_rel_error", r.max_rel_error},
               {"coordinates", r.coordinates},          {"skipped_kinks", r.skipped_kinks},
               {"worst", r.worst},                      {"threshold", gc_threshold},
               {"passed", ok}};
        text = j.dump(2) + "\n";
      } else if (output.format == Format::Csv) {
        text = "graph,max_rel_error,coordinates,skipped_kinks,worst,passed\n" + m.graph.meta("name", m.label) + "," +
               fmt("%.6e", r.max_rel_error) + "," + std::to_string(r.coordinates) + "," +
               std::to_string(r.skipped_kinks) + "," + r.worst + "," + (ok ? "true" : "false") + "\n";
      } else {
        text = r.summary() + "\n" + (ok ? "PASS" : "FAIL") + " at threshold " + fmt("%g", gc_threshold) + "\n";
      }
      emit(output, text, out);
      return ok ? kOk : kCheckFailed;
    }
    if (tr->parsed()) {
      TrainConfig cfg = config_file.empty() ? TrainConfig{} : load_train_config(config_file);
      if (epochs) cfg.epochs = *epochs;
      if (batch_size) cfg.batch_size = *batch_size;
      if (lr) cfg.base_lr = *lr;
      if (momentum) cfg.momentum = *momentum;
      if (weight_decay) cfg.weight_decay = *weight_decay;
      if (seed) cfg.seed = *seed;
      if (!tr_precision.empty()) cfg.precision = precision_from_name(tr_precision);
      if (!checkpoint.empty()) cfg.checkpoint_path = checkpoint;
      cfg.check();
      const Model m = load_model(models["tr"]);
      if (m.input.height != m.input.width) throw Error(ErrorKind::InvalidArgument, "training needs a square input");
      const int classes = static_cast<int>(head_classes(m.graph));
      const SyntheticDataset data = make_synthetic_dataset(classes, samples_per_class, m.input.height, cfg.seed);
      const TrainHistory h = train(m.graph, cfg, data);
      if (!history_file.empty()) {
        std::ofstream f(history_file);
        if (!f) throw Error(ErrorKind::Io, "cannot write '" + history_file + "'");
        f << h.to_csv();
      }
      std::string text;
      if (output.format == Format::Csv) {
        text = h.to_csv();
      } else if (output.format == Format::Json) {
        json epochs_json = json::array();
        for (const auto& e : h.epochs) {
          epochs_json.push_back({{"epoch", e.epoch},
                                 {"lr", e.lr},
                                 {"mean_loss", e.mean_loss},
                                 {"train_accuracy", e.train_accuracy},
                                 {"online_accuracy", e.online_accuracy}});
        }
        text = json{{"graph", m.graph.meta("name", m.label)}, {"epochs", epochs_json}, {"checkpoint", h.checkpoint}}
                   .dump(2) +
               "\n";
      } else {
        for (const auto& e : h.epochs) {
          char line[128];
          std::snprintf(line, sizeof line, "epoch %3d  lr %.5f  loss %.5f  train acc %.4f\n", e.epoch, e.lr,
                        e.mean_loss, e.train_accuracy);
          text += line;
        }
        if (!h.checkpoint.empty()) text += "checkpoint " + h.checkpoint + "\n";
      }
      emit(output, text, out);
      return kOk;
    }
    if (exp->parsed()) {
      const Model m = load_model(models["exp"]);
      require_valid(m.graph);
      if (output.out_file.empty()) {
        out << serialize(m.graph);
      } else {
        save_graph(m.graph, output.out_file);
      }
      return kOk;
    }
    if (imp->parsed()) {
      ModelArgs a;
      a.graph_file = import_file;
      a.input = import_input;
      emit(output, graph_summary(load_model(a), output.format), out);
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace blnet::cli
