#include "blnet/net_builder.hpp"

#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"

namespace blnet {

NetBuilder::NetBuilder(TensorShape input) {
  graph_.set_stage("input");
  graph_.add("input", InputParams{input.channels}, {});
  graph_.mark_input("input");
  graph_.set_meta("input_shape", std::to_string(input.batch) + "," + std::to_string(input.channels) + "," +
                                     std::to_string(input.height) + "," + std::to_string(input.width));
  input_ = {"input", input};
}

Tap NetBuilder::add(const std::string& id, LayerSpec spec, const std::vector<Tap>& preds) {
  std::vector<TensorShape> in;
  std::vector<std::string> ids;
  for (const auto& p : preds) {
    in.push_back(p.shape);
    ids.push_back(p.id);
  }
  TensorShape out = infer_output_shape(spec, in, id);
  graph_.add(id, std::move(spec), std::move(ids));
  return {id, out};
}

Tap NetBuilder::conv(const std::string& id, const Tap& x, int64_t out, int64_t kh, int64_t kw, int64_t sh,
                     int64_t sw, int64_t ph, int64_t pw, int64_t groups, bool bias) {
  return add(id, Conv2dParams{x.channels(), out, kh, kw, sh, sw, ph, pw, groups, bias}, {x});
}

Tap NetBuilder::conv(const std::string& id, const Tap& x, int64_t out, int64_t k, int64_t stride, int64_t groups) {
  return conv(id, x, out, k, k, stride, stride, k / 2, k / 2, groups);
}

Tap NetBuilder::bn(const std::string& id, const Tap& x) { return add(id, BatchNormParams{x.channels()}, {x}); }

Tap NetBuilder::relu(const std::string& id, const Tap& x) { return add(id, ReluParams{}, {x}); }

Tap NetBuilder::conv_bn(const std::string& prefix, const Tap& x, int64_t out, int64_t k, int64_t stride,
                        int64_t groups, bool with_relu) {
  return conv_bn_full(prefix, x, Conv2dParams{x.channels(), out, k, k, stride, stride, k / 2, k / 2, groups, false},
                      with_relu);
}

Tap NetBuilder::conv_bn_full(const std::string& prefix, const Tap& x, const Conv2dParams& p, bool with_relu) {
  Tap y = add(prefix + ".conv", p, {x});
  y = bn(prefix + ".bn", y);
  return with_relu ? relu(prefix + ".relu", y) : y;
}

Tap NetBuilder::upsample(const std::string& id, const Tap& x, int64_t sh, int64_t sw) {
  if (sh == 1 && sw == 1) return x;
  return add(id, UpsampleParams{sh, sw}, {x});
}

Tap NetBuilder::add_merge(const std::string& id, const std::vector<Tap>& xs, std::vector<double> coefficients) {
  for (const auto& x : xs) {
    if (x.shape != xs.front().shape) {
      throw Error(ErrorKind::ShapeIrreconcilable,
                  "merge '" + id + "': " + xs.front().shape.to_string() + " vs " + x.shape.to_string());
    }
  }
  return add(id, AddMergeParams{static_cast<int64_t>(xs.size()), std::move(coefficients)}, xs);
}

Tap NetBuilder::concat(const std::string& id, const std::vector<Tap>& xs) {
  for (const auto& x : xs) {
    if (x.height() != xs.front().height() || x.width() != xs.front().width()) {
      throw Error(ErrorKind::ShapeIrreconcilable,
                  "concat '" + id + "': " + xs.front().shape.to_string() + " vs " + x.shape.to_string());
    }
  }
  return add(id, ConcatMergeParams{static_cast<int64_t>(xs.size())}, xs);
}

Tap NetBuilder::crop_time(const std::string& id, const Tap& x, int64_t target_width) {
  const int64_t excess = x.width() - target_width;
  if (excess < 0) {
    throw Error(ErrorKind::ShapeIrreconcilable,
                "crop '" + id + "': width " + std::to_string(x.width()) + " < " + std::to_string(target_width));
  }
  if (excess == 0) return x;
  return add(id, CropTimeParams{excess / 2, excess - excess / 2}, {x});
}

Graph NetBuilder::finish(const std::vector<Tap>& outputs) && {
  for (const auto& o : outputs) graph_.mark_output(o.id);
  return std::move(graph_).finish();
}

}  // namespace blnet
