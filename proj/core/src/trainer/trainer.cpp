#include "blnet/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "blnet/error.hpp"

namespace blnet {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  N v{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw Error(ErrorKind::InvalidArgument, "bad value '" + std::string(text) + "' for '" + std::string(key) + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorKind::InvalidArgument, "bad boolean '" + std::string(text) + "' for '" + std::string(key) + "'");
}

}  // namespace

void TrainConfig::check() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::InvalidArgument, "momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::InvalidArgument, "weight_decay must be >= 0");
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  if (key == "epochs") {
    epochs = parse_number<int>(key, value);
  } else if (key == "batch_size") {
    batch_size = parse_number<int>(key, value);
  } else if (key == "base_lr" || key == "lr") {
    base_lr = parse_number<double>(key, value);
  } else if (key == "momentum") {
    momentum = parse_number<double>(key, value);
  } else if (key == "nesterov") {
    nesterov = parse_bool(key, value);
  } else if (key == "weight_decay") {
    weight_decay = parse_number<double>(key, value);
  } else if (key == "seed") {
    seed = parse_number<uint64_t>(key, value);
  } else if (key == "precision") {
    precision = precision_from_name(value);
  } else if (key == "checkpoint") {
    checkpoint_path = std::string(value);
  } else if (key == "schedule") {
    if (value != "cosine") throw Error(ErrorKind::InvalidArgument, "only the cosine schedule is available");
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown training option '" + std::string(key) + "'");
  }
}

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig config;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected key = value");
    try {
      config.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  config.check();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_train_config(text.str());
}

double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs)
    throw Error(ErrorKind::InvalidArgument, "epoch " + std::to_string(epoch) + " outside [0, " +
                                                std::to_string(total_epochs) + ")");
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

bool is_trainable_weight(std::string_view name) { return name != "running_mean" && name != "running_var"; }

template <typename T>
void sgd_step(ParamStore<T>& params, const ParamStore<T>& grads, SgdState<T>& state, double lr, double momentum,
              double weight_decay, bool nesterov) {
  const T eta = static_cast<T>(lr), mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  for (auto& [node, entry] : params.entries()) {
    for (auto& [name, w] : entry) {
      if (!is_trainable_weight(name)) continue;
      const Tensor<T>& g = grads.at(node, name);
      if (g.shape != w.shape)
        throw Error(ErrorKind::ShapeMismatch, "gradient shape for '" + node + "/" + name + "' does not match");
      if (!state.velocity.contains(node, name)) state.velocity.set(node, name, Tensor<T>(w.shape));
      Tensor<T>& v = state.velocity.at(node, name);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T d = g.data[i] + wd * w.data[i];
        v.data[i] = mu * v.data[i] + d;
        w.data[i] -= eta * (nesterov ? d + mu * v.data[i] : v.data[i]);
      }
    }
  }
}

template <typename T>
Tensor<T> SyntheticDataset::batch(std::span<const std::size_t> indices) const {
  TensorShape s = sample;
  s.batch = static_cast<int64_t>(indices.size());
  Tensor<T> out(s);
  const auto per = static_cast<std::size_t>(sample.per_sample());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const double* src = values.data() + indices[b] * per;
    std::transform(src, src + per, out.ptr() + b * per, [](double v) { return static_cast<T>(v); });
  }
  return out;
}

SyntheticDataset make_synthetic_dataset(int classes, int samples_per_class, int64_t image_size, uint64_t seed) {
  if (classes < 2) throw Error(ErrorKind::InvalidArgument, "a dataset needs at least two classes");
  if (samples_per_class < 1 || image_size < 4) throw Error(ErrorKind::InvalidArgument, "dataset too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.2);

  struct Prototype {
    double color[3], texture[3];
    double cx, cy, theta, freq;
  };
  const double size = static_cast<double>(image_size);
  std::vector<Prototype> protos(static_cast<std::size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    Prototype& p = protos[static_cast<std::size_t>(k)];
    double norm = 0.0;
    for (double& c : p.color) {
      c = unit(rng);
      norm += c * c;
    }
    for (double& c : p.color) c /= std::sqrt(norm) + 1e-12;
    for (double& c : p.texture) c = unit(rng);
    const double angle = 2.0 * std::numbers::pi * k / classes;
    p.cx = size / 2 + size / 4 * std::cos(angle);
    p.cy = size / 2 + size / 4 * std::sin(angle);
    p.theta = std::numbers::pi * k / classes;
    p.freq = 2.0 + k % 3;
  }

  SyntheticDataset d;
  d.classes = classes;
  d.sample = {1, 3, image_size, image_size};
  const auto per = static_cast<std::size_t>(d.sample.per_sample());
  d.values.reserve(per * static_cast<std::size_t>(classes * samples_per_class));
  const double radius = size / 8;
  std::uniform_real_distribution<double> shift(-2.0, 2.0), amp(0.8, 1.2), phase(0.0, 2.0 * std::numbers::pi);
  // Interleave classes so any prefix stays balanced.
  for (int i = 0; i < samples_per_class; ++i) {
    for (int k = 0; k < classes; ++k) {
      const Prototype& p = protos[static_cast<std::size_t>(k)];
      const double dx = shift(rng), dy = shift(rng), a = amp(rng), ph = phase(rng);
      for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < image_size; ++y)
          for (int64_t x = 0; x < image_size; ++x) {
            const double rx = static_cast<double>(x) - p.cx - dx, ry = static_cast<double>(y) - p.cy - dy;
            const double blob = std::exp(-(rx * rx + ry * ry) / (2 * radius * radius));
            const double u = (static_cast<double>(x) * std::cos(p.theta) + static_cast<double>(y) * std::sin(p.theta)) / size;
            const double stripes = std::sin(2 * std::numbers::pi * p.freq * u + ph);
            d.values.push_back(2.0 * a * p.color[c] * blob + 0.5 * p.texture[c] * stripes + noise(rng));
          }
      d.labels.push_back(k);
    }
  }
  return d;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,lr,mean_loss,train_accuracy,online_accuracy\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.lr, e.mean_loss, e.train_accuracy,
                  e.online_accuracy);
    out << buf;
  }
  return out.str();
}

namespace {

int argmax_row(const double* begin, int64_t n) {
  return static_cast<int>(std::max_element(begin, begin + n) - begin);
}

template <typename T>
std::vector<int> predictions(const Tensor<T>& logits) {
  const int64_t k = logits.shape.per_sample();
  std::vector<int> out;
  std::vector<double> row(static_cast<std::size_t>(k));
  for (int64_t n = 0; n < logits.shape.batch; ++n) {
    std::copy_n(logits.ptr() + n * k, k, row.begin());
    out.push_back(argmax_row(row.data(), k));
  }
  return out;
}

}  // namespace

template <typename T>
double accuracy(const Engine<T>& engine, const ParamStore<T>& params, const SyntheticDataset& data,
                std::size_t batch_size) {
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Activations<T> acts = engine.forward(params, data.batch<T>(idx), Mode::Eval);
    const std::vector<int> pred = predictions(acts.output());
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]];
  }
  return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

template <typename T>
TrainHistory train(const Graph& graph, const TrainConfig& config, const SyntheticDataset& data,
                   ParamStore<T>* final_params) {
  config.check();
  if (data.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty dataset");
  Engine<T> engine(graph);
  ParamStore<T> params = engine.init_params(config.seed);
  SgdState<T> state;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);

  // Batches of batch_size; a trailing singleton joins the previous batch so
  // batch statistics stay defined.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t s = 0; s < data.size(); s += bs) spans.emplace_back(s, std::min(data.size(), s + bs));
  if (spans.size() > 1 && spans.back().second - spans.back().first == 1) {
    spans.pop_back();
    spans.back().second = data.size();
  }

  TrainHistory history;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.epochs, config.base_lr);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (const auto& [lo, hi] : spans) {
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      try {
        const Activations<T> acts = engine.forward(params, data.batch<T>(idx), Mode::Train);
        const LossResult<T> loss = softmax_cross_entropy(acts.output(), labels);
        const std::vector<int> pred = predictions(acts.output());
        for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
        loss_sum += loss.loss * static_cast<double>(labels.size());
        seen += labels.size();
        const GradStore<T> grads = engine.backward(params, acts, loss.grad);
        sgd_step(params, grads.params, state, lr, config.momentum, config.weight_decay, config.nesterov);
        engine.update_running_stats(params, acts);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteValue) throw;
        throw Error(ErrorKind::DivergenceDetected, "epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.mean_loss = loss_sum / static_cast<double>(seen);
    rec.online_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    rec.train_accuracy = accuracy(engine, params, data);
    history.epochs.push_back(rec);
  }
  if (!config.checkpoint_path.empty()) {
    save_checkpoint(config.checkpoint_path, params);
    history.checkpoint = config.checkpoint_path;
  }
  if (final_params) *final_params = std::move(params);
  return history;
}

TrainHistory train(const Graph& graph, const TrainConfig& config, const SyntheticDataset& data) {
  return config.precision == Precision::F32 ? train<float>(graph, config, data)
                                            : train<double>(graph, config, data);
}

std::string GradCheckReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "max relative error %.3e over %zu coordinates, %zu skipped at ReLU kinks (worst %s: analytic %.6e, "
                "numeric %.6e)",
                max_rel_error, coordinates, skipped_kinks, worst.c_str(), worst_analytic, worst_numeric);
  return buf;
}

namespace {

template <typename T>
GradCheckReport gradient_check_typed(const Graph& graph, const TensorShape& input_shape,
                                     const GradCheckOptions& opt) {
  Engine<T> engine(graph);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamStore<T> params = engine.init_params(opt.seed);
  // Move BN and biases off their trivial initial values so every path carries gradient.
  for (auto& [node, entry] : params.entries())
    for (auto& [name, t] : entry) {
      for (auto& v : t.data) {
        if (name == "gamma") v = static_cast<T>(1.0 + 0.2 * normal(rng));
        if (name == "beta" || name == "bias" || name == "running_mean") v = static_cast<T>(0.2 * normal(rng));
        if (name == "running_var") v = static_cast<T>(1.0 + 0.5 * std::abs(normal(rng)));
      }
    }
  Tensor<T> input(input_shape);
  for (auto& v : input.data) v = static_cast<T>(normal(rng));

  Activations<T> acts = engine.forward(params, input, opt.mode);
  Tensor<T> proj(acts.output().shape);
  for (auto& v : proj.data) v = static_cast<T>(normal(rng));
  const GradStore<T> grads = engine.backward(params, acts, proj);

  std::vector<std::string> relu_inputs;
  for (const Node& n : graph.nodes())
    if (n.kind() == LayerKind::ReLU) relu_inputs.push_back(n.preds.front());
  auto sign_pattern = [&](const Activations<T>& a) {
    std::vector<bool> bits;
    for (const auto& id : relu_inputs)
      for (T v : a.at(id).data) bits.push_back(v > T(0));
    return bits;
  };
  const std::vector<bool> base_pattern = sign_pattern(acts);

  // Returns the projected output, or nothing when a ReLU changed sides.
  auto objective = [&](const ParamStore<T>& p, const Tensor<T>& x) -> std::optional<double> {
    const Activations<T> a = engine.forward(p, x, opt.mode);
    if (sign_pattern(a) != base_pattern) return std::nullopt;
    double s = 0.0;
    for (std::size_t i = 0; i < proj.size(); ++i) s += static_cast<double>(proj.data[i]) * a.output().data[i];
    return s;
  };

  struct Coord {
    std::string node, name;
    std::size_t index;
  };
  std::vector<Coord> all;
  for (const auto& [node, entry] : params.entries())
    for (const auto& [name, t] : entry) {
      if (!is_trainable_weight(name)) continue;
      for (std::size_t i = 0; i < t.size(); ++i) all.push_back({node, name, i});
    }
  if (opt.include_input)
    for (std::size_t i = 0; i < input.size(); ++i) all.push_back({"", "input", i});
  std::shuffle(all.begin(), all.end(), rng);

  GradCheckReport report;
  for (const Coord& c : all) {
    if (report.coordinates >= opt.coordinates) break;
    const bool is_input = c.node.empty();
    T& slot = is_input ? input.data[c.index] : params.at(c.node, c.name).data[c.index];
    const T orig = slot;
    slot = static_cast<T>(orig + opt.eps);
    const std::optional<double> plus = objective(params, input);
    slot = static_cast<T>(orig - opt.eps);
    const std::optional<double> minus = plus ? objective(params, input) : std::nullopt;
    slot = orig;
    if (!plus || !minus) {
      ++report.skipped_kinks;
      continue;
    }
    ++report.coordinates;
    const double numeric = (*plus - *minus) / (2.0 * opt.eps);
    const double analytic = is_input ? grads.input.data[c.index] : grads.params.at(c.node, c.name).data[c.index];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = (is_input ? std::string("input") : c.node + "/" + c.name) + "[" + std::to_string(c.index) + "]";
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace

GradCheckReport gradient_check(const Graph& graph, const TensorShape& input_shape, Precision precision,
                               const GradCheckOptions& options) {
  return precision == Precision::F64 ? gradient_check_typed<double>(graph, input_shape, options)
                                     : gradient_check_typed<float>(graph, input_shape, options);
}

template void sgd_step(ParamStore<float>&, const ParamStore<float>&, SgdState<float>&, double, double, double, bool);
template void sgd_step(ParamStore<double>&, const ParamStore<double>&, SgdState<double>&, double, double, double,
                       bool);
template Tensor<float> SyntheticDataset::batch(std::span<const std::size_t>) const;
template Tensor<double> SyntheticDataset::batch(std::span<const std::size_t>) const;
template double accuracy(const Engine<float>&, const ParamStore<float>&, const SyntheticDataset&, std::size_t);
template double accuracy(const Engine<double>&, const ParamStore<double>&, const SyntheticDataset&, std::size_t);
template TrainHistory train(const Graph&, const TrainConfig&, const SyntheticDataset&, ParamStore<float>*);
template TrainHistory train(const Graph&, const TrainConfig&, const SyntheticDataset&, ParamStore<double>*);

}  // namespace blnet
