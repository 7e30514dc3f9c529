#include "blnet/engine.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"
#include "blnet/validate.hpp"

namespace blnet {

namespace {

class Fnv {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ b[i]) * 1099511628211ull;
  }
  void str(const std::string& s) {
    bytes(s.data(), s.size());
    bytes("\0", 1);
  }
  uint64_t value() const { return h_; }

 private:
  uint64_t h_ = 1469598103934665603ull;
};

bool same_sample_shape(const TensorShape& a, const TensorShape& b) {
  return a.channels == b.channels && a.height == b.height && a.width == b.width;
}

}  // namespace

std::vector<WeightSpec> weight_specs(const LayerSpec& spec) {
  std::vector<WeightSpec> out;
  if (const auto* c = std::get_if<Conv2dParams>(&spec)) {
    out.push_back({"weight", {c->out_channels, c->in_channels / std::max<int64_t>(c->groups, 1), c->kernel_h, c->kernel_w}});
    if (c->has_bias) out.push_back({"bias", channel_shape(c->out_channels)});
  } else if (const auto* b = std::get_if<BatchNormParams>(&spec)) {
    out.push_back({"gamma", channel_shape(b->channels)});
    out.push_back({"beta", channel_shape(b->channels)});
    out.push_back({"running_mean", channel_shape(b->channels), false});
    out.push_back({"running_var", channel_shape(b->channels), false});
  } else if (const auto* l = std::get_if<LinearParams>(&spec)) {
    out.push_back({"weight", {l->out_features, l->in_features, 1, 1}});
    if (l->has_bias) out.push_back({"bias", channel_shape(l->out_features)});
  }
  return out;
}

template <typename T>
bool ParamStore<T>::contains(const std::string& node, const std::string& name) const {
  auto it = entries_.find(node);
  return it != entries_.end() && it->second.contains(name);
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& node, const std::string& name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(node, name));
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& node, const std::string& name) const {
  auto it = entries_.find(node);
  if (it != entries_.end()) {
    auto jt = it->second.find(name);
    if (jt != it->second.end()) return jt->second;
  }
  throw Error(ErrorKind::MissingParam, "node '" + node + "' has no weight '" + name + "'");
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [node, entry] : entries_)
    for (const auto& [name, t] : entry) n += t.size();
  return n;
}

template <typename T>
uint64_t ParamStore<T>::fingerprint() const {
  Fnv h;
  for (const auto& [node, entry] : entries_)
    for (const auto& [name, t] : entry) {
      h.str(node);
      h.str(name);
      h.bytes(t.ptr(), t.size() * sizeof(T));
    }
  return h.value();
}

template <typename T>
const Tensor<T>& Activations<T>::at(const std::string& id) const {
  auto it = values.find(id);
  if (it == values.end()) throw Error(ErrorKind::StaleActivations, "no activation recorded for node '" + id + "'");
  return it->second;
}

template <typename T>
Engine<T>::Engine(Graph graph, kernels::ConvAlgo algo) : graph_(std::move(graph)), algo_(algo) {
  const ValidationReport report = validate(graph_);
  if (!report.ok()) throw Error(ErrorKind::InvalidGraph, report.to_string());
  order_ = *graph_.topological_order();
  preds_ = graph_.predecessor_indices();
  if (graph_.inputs().size() != 1 || graph_.outputs().empty())
    throw Error(ErrorKind::InvalidGraph, "the engine runs graphs with one input and at least one output");
  auto declared = declared_input_shape(graph_);
  if (!declared) throw Error(ErrorKind::InvalidGraph, "graph has no declared input shape");
  input_shape_ = *declared;
  Fnv h;
  for (const Node& n : graph_.nodes()) {
    h.str(n.id);
    h.str(std::string(kind_name(n.kind())));
    for (const auto& p : n.preds) h.str(p);
  }
  fingerprint_ = h.value();
}

template <typename T>
ParamStore<T> Engine<T>::init_params(uint64_t seed) const {
  ParamStore<T> store;
  std::mt19937_64 rng(seed);
  for (const Node& n : graph_.nodes()) {
    for (const WeightSpec& w : weight_specs(n.spec)) {
      Tensor<T> t(w.shape);
      if (w.name == "weight") {
        const int64_t fan_in = w.shape.channels * w.shape.height * w.shape.width;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (auto& v : t.data) v = static_cast<T>(dist(rng));
      } else if (w.name == "gamma" || w.name == "running_var") {
        std::fill(t.data.begin(), t.data.end(), T(1));
      }
      store.set(n.id, w.name, std::move(t));
    }
  }
  return store;
}

template <typename T>
void Engine<T>::check_params(const ParamStore<T>& params) const {
  for (const Node& n : graph_.nodes()) {
    for (const WeightSpec& w : weight_specs(n.spec)) {
      const Tensor<T>& t = params.at(n.id, w.name);
      if (t.shape != w.shape || t.size() != static_cast<std::size_t>(w.shape.numel())) {
        throw Error(ErrorKind::ShapeMismatch, "node '" + n.id + "' weight '" + w.name + "' has shape " +
                                                  t.shape.to_string() + ", expected " + w.shape.to_string());
      }
    }
  }
}

template <typename T>
Activations<T> Engine<T>::forward(const ParamStore<T>& params, const Tensor<T>& input, Mode mode) const {
  check_params(params);
  if (!same_sample_shape(input.shape, input_shape_) || input.size() != static_cast<std::size_t>(input.shape.numel())) {
    throw Error(ErrorKind::ShapeMismatch,
                "input " + input.shape.to_string() + " does not match declared " + input_shape_.to_string());
  }
  if (!all_finite(input)) throw Error(ErrorKind::NonFiniteValue, "input contains NaN or Inf");

  Activations<T> acts;
  acts.mode = mode;
  acts.outputs = graph_.outputs();
  acts.graph_fingerprint = fingerprint_;
  acts.params_fingerprint = params.fingerprint();
  const auto& nodes = graph_.nodes();
  for (std::size_t idx : order_) {
    const Node& node = nodes[idx];
    std::vector<const Tensor<T>*> in;
    for (std::size_t p : preds_[idx]) in.push_back(&acts.values.at(nodes[p].id));
    const std::string& id = node.id;
    Tensor<T> y;
    switch (node.kind()) {
      case LayerKind::Input:
        y = input;
        break;
      case LayerKind::Conv2d: {
        const auto& p = std::get<Conv2dParams>(node.spec);
        y = kernels::conv2d(*in[0], params.at(id, "weight"), p.has_bias ? &params.at(id, "bias") : nullptr, p, algo_);
        break;
      }
      case LayerKind::BatchNorm:
        if (mode == Mode::Train) {
          y = kernels::batchnorm_train(*in[0], params.at(id, "gamma"), params.at(id, "beta"), &acts.batch_stats[id]);
        } else {
          y = kernels::batchnorm_eval(*in[0], params.at(id, "gamma"), params.at(id, "beta"),
                                      params.at(id, "running_mean"), params.at(id, "running_var"));
        }
        break;
      case LayerKind::ReLU:
        y = kernels::relu(*in[0]);
        break;
      case LayerKind::MaxPool:
        y = kernels::maxpool(*in[0], std::get<MaxPoolParams>(node.spec));
        break;
      case LayerKind::GlobalAvgPool:
        y = kernels::global_avg_pool(*in[0]);
        break;
      case LayerKind::BilinearUpsample: {
        const auto& p = std::get<UpsampleParams>(node.spec);
        y = kernels::bilinear_upsample(*in[0], p.scale_h, p.scale_w);
        break;
      }
      case LayerKind::AddMerge:
        y = kernels::add_merge<T>(in, std::get<AddMergeParams>(node.spec).coefficients);
        break;
      case LayerKind::ConcatMerge:
        y = kernels::concat<T>(in);
        break;
      case LayerKind::CropTime:
        y = kernels::crop_time(*in[0], std::get<CropTimeParams>(node.spec));
        break;
      case LayerKind::Linear: {
        const auto& p = std::get<LinearParams>(node.spec);
        y = kernels::linear(*in[0], params.at(id, "weight"), p.has_bias ? &params.at(id, "bias") : nullptr);
        break;
      }
    }
    if (!all_finite(y)) throw Error(ErrorKind::NonFiniteValue, "node '" + id + "' produced NaN or Inf");
    acts.values.emplace(id, std::move(y));
  }
  return acts;
}

template <typename T>
GradStore<T> Engine<T>::backward(const ParamStore<T>& params, const Activations<T>& acts,
                                 const Tensor<T>& output_grad) const {
  if (acts.graph_fingerprint != fingerprint_)
    throw Error(ErrorKind::StaleActivations, "activations were recorded for a different graph");
  if (acts.params_fingerprint != params.fingerprint())
    throw Error(ErrorKind::StaleActivations, "parameters changed since the forward pass");
  const auto& nodes = graph_.nodes();
  for (const Node& n : nodes) {
    if (!acts.values.contains(n.id)) throw Error(ErrorKind::StaleActivations, "missing activation for '" + n.id + "'");
  }
  const std::string& out_id = graph_.outputs().front();
  if (output_grad.shape != acts.at(out_id).shape) {
    throw Error(ErrorKind::ShapeMismatch, "output gradient " + output_grad.shape.to_string() + " vs output " +
                                              acts.at(out_id).shape.to_string());
  }

  GradStore<T> grads;
  for (const Node& n : nodes)
    for (const WeightSpec& w : weight_specs(n.spec)) grads.params.set(n.id, w.name, Tensor<T>(w.shape));

  std::unordered_map<std::string, Tensor<T>> g;
  g.emplace(out_id, output_grad);
  auto grad_of = [&](const std::string& id) -> Tensor<T>& {
    auto it = g.find(id);
    if (it == g.end()) it = g.emplace(id, Tensor<T>(acts.at(id).shape)).first;
    return it->second;
  };

  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const Node& node = nodes[*it];
    auto git = g.find(node.id);
    if (git == g.end()) continue;
    const Tensor<T> dy = std::move(git->second);
    g.erase(git);
    const std::string& id = node.id;
    std::vector<std::string> pid;
    for (std::size_t p : preds_[*it]) pid.push_back(nodes[p].id);

    switch (node.kind()) {
      case LayerKind::Input:
        grads.input = dy;
        break;
      case LayerKind::Conv2d: {
        const auto& p = std::get<Conv2dParams>(node.spec);
        kernels::conv2d_backward(acts.at(pid[0]), params.at(id, "weight"), p, dy, &grad_of(pid[0]),
                                 &grads.params.at(id, "weight"), p.has_bias ? &grads.params.at(id, "bias") : nullptr,
                                 algo_);
        break;
      }
      case LayerKind::BatchNorm:
        if (acts.mode == Mode::Train) {
          kernels::batchnorm_train_backward(acts.at(pid[0]), params.at(id, "gamma"), acts.batch_stats.at(id), dy,
                                            grad_of(pid[0]), grads.params.at(id, "gamma"),
                                            grads.params.at(id, "beta"));
        } else {
          kernels::batchnorm_eval_backward(acts.at(pid[0]), params.at(id, "gamma"), params.at(id, "running_mean"),
                                           params.at(id, "running_var"), dy, grad_of(pid[0]),
                                           grads.params.at(id, "gamma"), grads.params.at(id, "beta"));
        }
        break;
      case LayerKind::ReLU:
        kernels::relu_backward(acts.at(pid[0]), dy, grad_of(pid[0]));
        break;
      case LayerKind::MaxPool:
        kernels::maxpool_backward(acts.at(pid[0]), std::get<MaxPoolParams>(node.spec), dy, grad_of(pid[0]));
        break;
      case LayerKind::GlobalAvgPool:
        kernels::global_avg_pool_backward(dy, grad_of(pid[0]));
        break;
      case LayerKind::BilinearUpsample: {
        const auto& p = std::get<UpsampleParams>(node.spec);
        if (p.scale_h == 1 && p.scale_w == 1) {
          kernels::add_merge_backward(dy, 1.0, grad_of(pid[0]));
        } else {
          kernels::bilinear_upsample_backward(dy, p.scale_h, p.scale_w, grad_of(pid[0]));
        }
        break;
      }
      case LayerKind::AddMerge: {
        const auto& c = std::get<AddMergeParams>(node.spec).coefficients;
        for (std::size_t k = 0; k < pid.size(); ++k) kernels::add_merge_backward(dy, c[k], grad_of(pid[k]));
        break;
      }
      case LayerKind::ConcatMerge: {
        int64_t offset = 0;
        for (const auto& p : pid) {
          kernels::concat_backward(dy, offset, grad_of(p));
          offset += acts.at(p).shape.channels;
        }
        break;
      }
      case LayerKind::CropTime:
        kernels::crop_time_backward(dy, std::get<CropTimeParams>(node.spec), grad_of(pid[0]));
        break;
      case LayerKind::Linear: {
        const auto& p = std::get<LinearParams>(node.spec);
        kernels::linear_backward(acts.at(pid[0]), params.at(id, "weight"), dy, &grad_of(pid[0]),
                                 &grads.params.at(id, "weight"), p.has_bias ? &grads.params.at(id, "bias") : nullptr);
        break;
      }
    }
  }
  if (grads.input.size() == 0) grads.input = Tensor<T>(acts.at(graph_.inputs().front()).shape);
  for (const auto& [node, entry] : grads.params.entries())
    for (const auto& [name, t] : entry)
      if (!all_finite(t)) throw Error(ErrorKind::NonFiniteValue, "gradient of '" + node + "/" + name + "' is not finite");
  if (!all_finite(grads.input)) throw Error(ErrorKind::NonFiniteValue, "input gradient is not finite");
  return grads;
}

template <typename T>
void Engine<T>::update_running_stats(ParamStore<T>& params, const Activations<T>& acts, double momentum) const {
  if (acts.mode != Mode::Train) return;
  const T mu = static_cast<T>(momentum);
  for (const auto& [id, st] : acts.batch_stats) {
    Tensor<T>& rm = params.at(id, "running_mean");
    Tensor<T>& rv = params.at(id, "running_var");
    for (std::size_t c = 0; c < st.mean.size(); ++c) {
      rm.data[c] = mu * rm.data[c] + (1 - mu) * st.mean[c];
      rv.data[c] = mu * rv.data[c] + (1 - mu) * st.var[c];
    }
  }
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const int64_t n = logits.shape.batch;
  const int64_t k = logits.shape.per_sample();
  if (static_cast<int64_t>(labels.size()) != n)
    throw Error(ErrorKind::ShapeMismatch, "label count " + std::to_string(labels.size()) + " for batch " + std::to_string(n));
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k)
      throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    const T* z = logits.ptr() + i * k;
    T* d = r.grad.ptr() + i * k;
    double zmax = z[0];
    for (int64_t j = 1; j < k; ++j) zmax = std::max<double>(zmax, z[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - zmax);
    const double log_sum = std::log(sum) + zmax;
    total += log_sum - static_cast<double>(z[label]);
    for (int64_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(z[j]) - log_sum);
      d[j] = static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  if (!std::isfinite(r.loss)) throw Error(ErrorKind::NonFiniteValue, "loss is not finite");
  return r;
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Activations<float>;
template struct Activations<double>;
template class Engine<float>;
template class Engine<double>;
template LossResult<float> softmax_cross_entropy(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, std::span<const int>);

}  // namespace blnet
