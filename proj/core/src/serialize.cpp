#include "blnet/serialize.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "blnet/error.hpp"

namespace blnet {

using nlohmann::json;

namespace {

struct ParamsToJson {
  json operator()(const InputParams& p) const { return {{"channels", p.channels}}; }
  json operator()(const Conv2dParams& p) const {
    return {{"in_channels", p.in_channels}, {"out_channels", p.out_channels}, {"kernel", {p.kernel_h, p.kernel_w}},
            {"stride", {p.stride_h, p.stride_w}},  {"pad", {p.pad_h, p.pad_w}},  {"groups", p.groups},
            {"bias", p.has_bias}};
  }
  json operator()(const BatchNormParams& p) const { return {{"channels", p.channels}}; }
  json operator()(const ReluParams&) const { return json::object(); }
  json operator()(const MaxPoolParams& p) const {
    return {{"kernel", {p.kernel_h, p.kernel_w}}, {"stride", {p.stride_h, p.stride_w}}, {"pad", {p.pad_h, p.pad_w}}};
  }
  json operator()(const GlobalAvgPoolParams&) const { return json::object(); }
  json operator()(const UpsampleParams& p) const { return {{"scale", {p.scale_h, p.scale_w}}}; }
  json operator()(const AddMergeParams& p) const { return {{"arity", p.arity}, {"coefficients", p.coefficients}}; }
  json operator()(const ConcatMergeParams& p) const { return {{"arity", p.arity}}; }
  json operator()(const CropTimeParams& p) const { return {{"trim", {p.trim_front, p.trim_back}}}; }
  json operator()(const LinearParams& p) const {
    return {{"in_features", p.in_features}, {"out_features", p.out_features}, {"bias", p.has_bias}};
  }
};

void pair_of(const json& j, const char* key, int64_t& a, int64_t& b) {
  const auto& v = j.at(key);
  a = v.at(0).get<int64_t>();
  b = v.at(1).get<int64_t>();
}

LayerSpec spec_from_json(LayerKind kind, const json& j) {
  switch (kind) {
    case LayerKind::Input:
      return InputParams{j.at("channels").get<int64_t>()};
    case LayerKind::Conv2d: {
      Conv2dParams p;
      p.in_channels = j.at("in_channels").get<int64_t>();
      p.out_channels = j.at("out_channels").get<int64_t>();
      pair_of(j, "kernel", p.kernel_h, p.kernel_w);
      pair_of(j, "stride", p.stride_h, p.stride_w);
      pair_of(j, "pad", p.pad_h, p.pad_w);
      p.groups = j.at("groups").get<int64_t>();
      p.has_bias = j.at("bias").get<bool>();
      return p;
    }
    case LayerKind::BatchNorm:
      return BatchNormParams{j.at("channels").get<int64_t>()};
    case LayerKind::ReLU:
      return ReluParams{};
    case LayerKind::MaxPool: {
      MaxPoolParams p;
      pair_of(j, "kernel", p.kernel_h, p.kernel_w);
      pair_of(j, "stride", p.stride_h, p.stride_w);
      pair_of(j, "pad", p.pad_h, p.pad_w);
      return p;
    }
    case LayerKind::GlobalAvgPool:
      return GlobalAvgPoolParams{};
    case LayerKind::BilinearUpsample: {
      UpsampleParams p;
      pair_of(j, "scale", p.scale_h, p.scale_w);
      return p;
    }
    case LayerKind::AddMerge:
      return AddMergeParams{j.at("arity").get<int64_t>(), j.at("coefficients").get<std::vector<double>>()};
    case LayerKind::ConcatMerge:
      return ConcatMergeParams{j.at("arity").get<int64_t>()};
    case LayerKind::CropTime: {
      CropTimeParams p;
      pair_of(j, "trim", p.trim_front, p.trim_back);
      return p;
    }
    case LayerKind::Linear:
      return LinearParams{j.at("in_features").get<int64_t>(), j.at("out_features").get<int64_t>(),
                          j.at("bias").get<bool>()};
  }
  throw Error(ErrorKind::UnknownLayerKind, "unhandled layer kind");
}

// Maps a byte offset to 1-based (line, column).
std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

std::string serialize(const Graph& graph) {
  std::ostringstream out;
  out << "{\"format\": \"blnet-graph\", \"version\": " << kGraphFormatVersion << ",\n";
  out << " \"metadata\": " << json(graph.metadata()).dump() << ",\n";
  out << " \"inputs\": " << json(graph.inputs()).dump() << ",\n";
  out << " \"outputs\": " << json(graph.outputs()).dump() << ",\n";
  out << " \"nodes\": [\n";
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Node& n = graph.nodes()[i];
    json rec = json::object();
    rec["id"] = n.id;
    rec["kind"] = std::string(kind_name(n.kind()));
    rec["params"] = std::visit(ParamsToJson{}, n.spec);
    rec["preds"] = n.preds;
    rec["stage"] = n.stage;
    out << "  " << rec.dump() << (i + 1 < graph.size() ? ",\n" : "\n");
  }
  out << " ]}\n";
  return out.str();
}

Graph deserialize(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(ErrorKind::ParseError,
                "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
  }

  try {
    if (!doc.is_object()) throw Error(ErrorKind::ParseError, "document is not an object");
    if (doc.value("format", std::string()) != "blnet-graph") {
      throw Error(ErrorKind::ParseError, "missing or wrong \"format\" field");
    }
    if (!doc.contains("version")) throw Error(ErrorKind::ParseError, "missing \"version\" field");
    const int version = doc.at("version").get<int>();
    if (version != kGraphFormatVersion) {
      throw Error(ErrorKind::ParseError, "unsupported format version " + std::to_string(version));
    }

    std::vector<Node> nodes;
    for (const auto& rec : doc.at("nodes")) {
      const auto kind_text = rec.at("kind").get<std::string>();
      auto kind = kind_from_name(kind_text);
      if (!kind) throw Error(ErrorKind::UnknownLayerKind, "'" + kind_text + "'");
      Node n;
      n.id = rec.at("id").get<std::string>();
      n.spec = spec_from_json(*kind, rec.at("params"));
      n.preds = rec.at("preds").get<std::vector<std::string>>();
      n.stage = rec.value("stage", std::string());
      nodes.push_back(std::move(n));
    }
    return Graph(std::move(nodes), doc.at("inputs").get<std::vector<std::string>>(),
                 doc.at("outputs").get<std::vector<std::string>>(), doc.value("metadata", Metadata{}));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("malformed graph document: ") + e.what());
  }
}

void save_graph(const Graph& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << serialize(graph);
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace blnet
