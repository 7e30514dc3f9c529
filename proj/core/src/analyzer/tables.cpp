#include "blnet/tables.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

#include "blnet/analyzer.hpp"
#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"

namespace blnet {

namespace {

constexpr double kImageParamTol = 0.01;
constexpr double kImageFlopTol = 0.03;
constexpr double kSpeechRatioTol = 0.05;
constexpr double kSpeechFlopTol = 0.10;

struct Model {
  std::string preset;
  PresetOverrides overrides;
};

struct Costs {
  double flops_g;
  double params_m;
};

class TableBuilder {
 public:
  TableBuilder(std::string id, std::string title, std::optional<double> tol) : tol_(tol) {
    result_.id = std::move(id);
    result_.title = std::move(title);
  }

  Costs costs(const Model& m) {
    const std::string key = cache_key(m);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    Graph g = build_preset(m.preset, m.overrides);
    const CostReport r = count_graph(g, *declared_input_shape(g));
    Costs c{r.total_flops / 1e9, r.total_params / 1e6};
    cache_.emplace(key, c);
    return c;
  }

  void cell(const std::string& row, const std::string& quantity, double computed, double paper, double tolerance,
            bool gated = true) {
    TableCell c;
    c.row = row;
    c.quantity = quantity;
    c.computed = computed;
    c.paper = paper;
    c.rel_error = paper != 0.0 ? std::abs(computed - paper) / std::abs(paper) : std::abs(computed);
    c.tolerance = gated && tol_ ? *tol_ : tolerance;
    c.gated = gated;
    c.pass = c.rel_error <= c.tolerance + 1e-12;
    result_.cells.push_back(c);
  }

  // Image row: FLOPs, params and optionally the speedup against `base`.
  void image_row(const std::string& row, const Model& m, double flops, double params,
                 std::optional<double> speedup = std::nullopt, const Model* base = nullptr, bool params_gated = true,
                 bool flops_gated = true) {
    const Costs c = costs(m);
    cell(row, "flops_g", c.flops_g, flops, kImageFlopTol, flops_gated);
    cell(row, "params_m", c.params_m, params, kImageParamTol, params_gated);
    if (speedup && base) cell(row, "speedup", costs(*base).flops_g / c.flops_g, *speedup, kImageFlopTol, flops_gated);
  }

  void ordering(const std::string& row, const std::vector<Model>& models) {
    bool ok = true;
    for (std::size_t i = 1; i < models.size(); ++i) ok = ok && costs(models[i - 1]).flops_g > costs(models[i]).flops_g;
    TableCell c;
    c.row = row;
    c.quantity = "ordering";
    c.computed = ok ? 1.0 : 0.0;
    c.paper = 1.0;
    c.rel_error = ok ? 0.0 : 1.0;
    c.tolerance = 0.0;
    c.pass = ok;
    result_.cells.push_back(c);
  }

  TableResult take() { return std::move(result_); }

 private:
  static std::string cache_key(const Model& m) {
    const auto& o = m.overrides;
    auto v = [](const auto& x) { return x ? std::to_string(static_cast<long long>(*x)) : std::string("-"); };
    return m.preset + "|" + v(o.alpha) + "|" + v(o.beta) + "|" + v(o.K) + "|" + v(o.num_merges) + "|" +
           (o.merge_mode ? std::string(merge_mode_name(*o.merge_mode)) : "-") + "|" + v(o.height) + "|" + v(o.width);
  }

  std::optional<double> tol_;
  TableResult result_;
  std::map<std::string, Costs> cache_;
};

Model bl(const std::string& preset, int alpha, int beta) { return {preset, {.alpha = alpha, .beta = beta}}; }
Model at256(const std::string& preset) { return {preset, {.height = 256, .width = 256}}; }

// Published values: FLOPs in 1e9, params in 1e6.
TableResult table1(std::optional<double> tol) {
  TableBuilder t("t1", "bL-ResNet-50 little-branch complexity (alpha, beta)", tol);
  const Model r50{"resnet50", {}};
  t.image_row("ResNet-50", r50, 4.09, 25.55);
  t.image_row("bL-ResNet-50 (a=2, b=2)", bl("bl-resnet50", 2, 2), 2.91, 26.97, 1.41, &r50);
  t.image_row("bL-ResNet-50 (a=2, b=4)", bl("bl-resnet50", 2, 4), 2.85, 26.69, 1.44, &r50);
  t.image_row("bL-ResNet-50 (a=4, b=2)", bl("bl-resnet50", 4, 2), 2.49, 26.31, 1.64, &r50);
  t.image_row("bL-ResNet-50 (a=4, b=4)", bl("bl-resnet50", 4, 4), 2.48, 26.24, 1.65, &r50);
  return t.take();
}

TableResult table2_resnet(std::optional<double> tol) {
  TableBuilder t("t2_resnet", "bL-ResNet-101/152 cost", tol);
  const Model r101{"resnet101", {}}, r152{"resnet152", {}};
  t.image_row("ResNet-101", r101, 7.80, 44.54);
  t.image_row("bL-ResNet-101 (a=2, b=4)", {"bl-resnet101", {}}, 3.89, 41.85, 2.01, &r101);
  t.image_row("bL-ResNet-101@256 (a=2, b=4)", at256("bl-resnet101"), 5.08, 41.85, 1.54, &r101);
  t.image_row("ResNet-152", r152, 11.51, 60.19);
  t.image_row("bL-ResNet-152 (a=2, b=4)", {"bl-resnet152", {}}, 5.04, 57.36, 2.28, &r152);
  t.image_row("bL-ResNet-152@256 (a=2, b=4)", at256("bl-resnet152"), 6.58, 57.36, 1.75, &r152);
  return t.take();
}

TableResult table2_resnext(std::optional<double> tol) {
  TableBuilder t("t2_resnext", "bL-ResNeXt cost", tol);
  const Model x50{"resnext50_32x4d", {}}, x101{"resnext101_32x4d", {}}, x101w{"resnext101_64x4d", {}};
  t.image_row("ResNeXt-50 (32x4d)", x50, 4.23, 25.03);
  t.image_row("bL-ResNeXt-50 (32x4d)", {"bl-resnext50_32x4d", {}}, 3.03, 26.19, 1.40, &x50);
  t.image_row("bL-ResNeXt-50@256 (32x4d)", at256("bl-resnext50_32x4d"), 3.95, 26.19, 1.08, &x50);
  t.image_row("ResNeXt-101 (32x4d)", x101, 7.97, 44.17);
  t.image_row("bL-ResNeXt-101 (32x4d)", {"bl-resnext101_32x4d", {}}, 4.08, 41.51, 1.95, &x101);
  t.image_row("bL-ResNeXt-101@256 (32x4d)", at256("bl-resnext101_32x4d"), 5.33, 41.51, 1.50, &x101);
  t.image_row("ResNeXt-101 (64x4d)", x101w, 15.46, 83.46);
  t.image_row("bL-ResNeXt-101 (64x4d)", {"bl-resnext101_64x4d", {}}, 7.14, 77.36, 2.17, &x101w);
  t.image_row("bL-ResNeXt-101@256 (64x4d)", at256("bl-resnext101_64x4d"), 9.32, 77.36, 1.66, &x101w);
  return t.take();
}

TableResult table4(std::optional<double> tol) {
  TableBuilder t("t4", "speech ResNet-22 cost", tol);
  const Model base{"speech-resnet22", {}};
  const double base_flops = t.costs(base).flops_g;
  auto row = [&](const std::string& name, const Model& m, double flops, double ratio, double params) {
    const Costs c = t.costs(m);
    t.cell(name, "flops_g", c.flops_g, flops, kSpeechFlopTol);
    if (ratio > 0) t.cell(name, "speedup", base_flops / c.flops_g, ratio, kSpeechRatioTol);
    // Published parameter counts do not follow from the channel plan; reported only.
    t.cell(name, "params_m", c.params_m, params, kImageParamTol, false);
  };
  row("ResNet-22", base, 1.11, 0, 3.02);
  row("bL-ResNet-22 (a=4, b=1)", bl("speech-bl22", 4, 1), 0.68, 1.63, 3.15);
  row("bL-ResNet-22 (a=4, b=2)", bl("speech-bl22", 4, 2), 0.66, 1.68, 3.11);
  row("bL-ResNet-22 (a=4, b=3)", bl("speech-bl22", 4, 3), 0.65, 1.70, 3.10);
  row("bL-ResNet-22 (a=2, b=3)", bl("speech-bl22", 2, 3), 0.77, 1.43, 3.07);
  row("bL-ResNet-22 (a=4, b=1) cat", {"speech-bl22-cat", {}}, 0.70, 1.58, 3.18);
  row("bL-PYR-ResNet-22 (a=4, b=1)", {"speech-bl-pyr22", {}}, 0.98, 1.13, 3.32);
  return t.take();
}

TableResult table7(std::optional<double> tol) {
  TableBuilder t("t7", "ResNets at reduced internal resolution", tol);
  const Model r50{"resnet50", {}}, r101{"resnet101", {}};
  t.image_row("ResNet-50", r50, 4.09, 25.55);
  t.image_row("ResNet-50-lowres", {"resnet50_lowres", {}}, 1.29, 25.60, 3.17, &r50);
  t.image_row("ResNet-101", r101, 7.80, 44.54);
  t.image_row("ResNet-101-lowres", {"resnet101_lowres", {}}, 2.22, 44.57, 3.51, &r101);
  return t.take();
}

TableResult table8(std::optional<double> tol) {
  TableBuilder t("t8", "merge mode, branch count and merge count ablations", tol);
  const Model r50{"resnet50", {}};
  const Model m4{"bl-resnet50", {}}, m2{"bl-resnet50", {.num_merges = 2}}, m1{"bl-resnet50", {.num_merges = 1}};
  t.image_row("ResNet-50", r50, 4.09, 25.55);
  t.image_row("bL-ResNet-50 (addition, K=2)", m4, 2.85, 26.69, 1.43, &r50);
  t.image_row("bL-ResNet-50 (concatenation, K=2)", {"bl-resnet50", {.merge_mode = MergeMode::Concatenation}}, 2.01,
              20.57, 2.03, &r50, false, false);
  t.image_row("bL-ResNet-50 (addition, K=3)", {"bl-resnet50", {.K = 3}}, 3.91, 27.23, 1.04, &r50);
  t.image_row("bL-ResNet-50 (m=4)", m4, 2.85, 26.69);
  t.image_row("bL-ResNet-50 (m=2)", m2, 2.74, 26.66);
  t.image_row("bL-ResNet-50 (m=1)", m1, 2.64, 26.64);
  t.ordering("bL-ResNet-50 m=4 > m=2 > m=1 FLOPs", {m4, m2, m1});
  t.image_row("bL-ResNet-101 (m=4)", {"bl-resnet101", {}}, 3.89, 41.85);
  t.image_row("bL-ResNet-101 (m=7)", {"bl-resnet101", {.num_merges = 7}}, 5.21, 44.44, std::nullopt, nullptr, false,
              false);
  return t.take();
}

TableResult table10(std::optional<double> tol) {
  TableBuilder t("t10", "alpha/beta sweep for bL-ResNet-50 and bL-ResNet-101", tol);
  t.image_row("ResNet-50", {"resnet50", {}}, 4.09, 25.55);
  const std::vector<std::tuple<int, int, double, double>> r50{
      {1, 1, 5.65, 34.12}, {1, 2, 4.34, 30.14}, {2, 2, 2.91, 26.97},
      {2, 4, 2.85, 26.69}, {4, 2, 2.49, 26.31}, {4, 4, 2.48, 26.24}};
  std::vector<Model> order50;
  for (const auto& [a, b, f, p] : r50) {
    const Model m = bl("bl-resnet50", a, b);
    order50.push_back(m);
    t.image_row("bL-ResNet-50 (a=" + std::to_string(a) + ", b=" + std::to_string(b) + ")", m, f, p);
  }
  t.ordering("bL-ResNet-50 FLOPs decrease along the sweep", order50);
  t.image_row("ResNet-101", {"resnet101", {}}, 7.80, 44.54);
  const std::vector<std::tuple<int, int, double, double>> r101{
      {1, 1, 10.29, 63.32}, {2, 2, 4.27, 43.39}, {2, 4, 3.89, 41.85}};
  std::vector<Model> order101;
  for (const auto& [a, b, f, p] : r101) {
    const Model m = bl("bl-resnet101", a, b);
    order101.push_back(m);
    t.image_row("bL-ResNet-101 (a=" + std::to_string(a) + ", b=" + std::to_string(b) + ")", m, f, p);
  }
  t.ordering("bL-ResNet-101 FLOPs decrease along the sweep", order101);
  return t.take();
}

const std::vector<std::pair<std::string, std::function<TableResult(std::optional<double>)>>>& registry() {
  static const std::vector<std::pair<std::string, std::function<TableResult(std::optional<double>)>>> r{
      {"t1", table1},         {"t2_resnet", table2_resnet}, {"t2_resnext", table2_resnext}, {"t4", table4},
      {"t7", table7},         {"t8", table8},               {"t10", table10},
  };
  return r;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

bool TableResult::passed() const {
  for (const auto& c : cells) {
    if (c.gated && !c.pass) return false;
  }
  return true;
}

std::string TableResult::to_text() const {
  std::ostringstream out;
  out << id << ": " << title << "\n";
  for (const auto& c : cells) {
    char line[256];
    std::snprintf(line, sizeof line, "  %-38s %-9s computed %9.4f  paper %9.4f  err %6.2f%%  tol %5.1f%%  %s\n",
                  c.row.c_str(), c.quantity.c_str(), c.computed, c.paper, 100.0 * c.rel_error, 100.0 * c.tolerance,
                  !c.gated ? "info" : (c.pass ? "PASS" : "FAIL"));
    out << line;
  }
  out << (passed() ? "PASS" : "FAIL") << " " << id << "\n";
  return out.str();
}

std::string TableResult::to_csv() const {
  std::ostringstream out;
  out << "table,row,quantity,computed,paper,rel_error,tolerance,gated,pass\n";
  for (const auto& c : cells) {
    out << id << ",\"" << c.row << "\"," << c.quantity << ',' << fmt("%.6f", c.computed) << ','
        << fmt("%.6f", c.paper) << ',' << fmt("%.6f", c.rel_error) << ',' << fmt("%.4f", c.tolerance) << ','
        << (c.gated ? 1 : 0) << ',' << (c.pass ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string TableResult::to_json() const {
  nlohmann::json j;
  j["table"] = id;
  j["title"] = title;
  j["passed"] = passed();
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells) {
    j["cells"].push_back({{"row", c.row},
                          {"quantity", c.quantity},
                          {"computed", c.computed},
                          {"paper", c.paper},
                          {"rel_error", c.rel_error},
                          {"tolerance", c.tolerance},
                          {"gated", c.gated},
                          {"pass", c.pass}});
  }
  return j.dump(2) + "\n";
}

std::vector<std::string> table_ids() {
  std::vector<std::string> ids;
  for (const auto& [id, fn] : registry()) ids.push_back(id);
  return ids;
}

TableResult reproduce_table(std::string_view id, std::optional<double> tolerance_override) {
  for (const auto& [name, fn] : registry()) {
    if (name == id) return fn(tolerance_override);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown table '" + std::string(id) + "'");
}

}  // namespace blnet
