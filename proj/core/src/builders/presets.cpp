#include <array>

#include "blnet/builders.hpp"
#include "blnet/error.hpp"

namespace blnet {

namespace {

constexpr std::array<std::pair<Backbone, std::string_view>, 7> kBackboneNames{{
    {Backbone::ResNet50, "resnet50"},
    {Backbone::ResNet101, "resnet101"},
    {Backbone::ResNet152, "resnet152"},
    {Backbone::ResNeXt50_32x4d, "resnext50_32x4d"},
    {Backbone::ResNeXt101_32x4d, "resnext101_32x4d"},
    {Backbone::ResNeXt101_64x4d, "resnext101_64x4d"},
    {Backbone::SpeechResNet22, "speech_resnet22"},
}};

constexpr TensorShape kImageInput{1, 3, 224, 224};
constexpr TensorShape kSpeechInput{1, 3, 64, 49};

enum class Family { Baseline, Lowres, BLImage, Speech, MicroBL, MicroModule, MicroModuleK3, MicroSpeech };

struct Entry {
  PresetInfo info;
  Family family;
  Backbone backbone = Backbone::ResNet50;
  SpeechVariant speech = SpeechVariant::Baseline22;
};

std::vector<Entry> make_entries() {
  std::vector<Entry> e;
  for (const auto& [b, name] : kBackboneNames) {
    if (b == Backbone::SpeechResNet22) continue;
    e.push_back({{std::string(name), "baseline " + std::string(name), kImageInput, false, false}, Family::Baseline, b});
  }
  e.push_back({{"resnet50_lowres", "resnet50 with every stage at half resolution", kImageInput, false, false},
               Family::Lowres, Backbone::ResNet50});
  e.push_back({{"resnet101_lowres", "resnet101 with every stage at half resolution", kImageInput, false, false},
               Family::Lowres, Backbone::ResNet101});
  for (const auto& [b, name] : kBackboneNames) {
    if (b == Backbone::SpeechResNet22) continue;
    e.push_back({{"bl-" + std::string(name), "Big-Little " + std::string(name) + " (default alpha 2, beta 4)",
                  kImageInput, true, false},
                 Family::BLImage, b});
  }
  e.push_back({{"speech-resnet22", "speech ResNet-22 baseline", kSpeechInput, false, true}, Family::Speech,
               Backbone::SpeechResNet22, SpeechVariant::Baseline22});
  e.push_back({{"speech-bl22", "speech Big-Little ResNet-22 (default alpha 4, beta 1)", kSpeechInput, true, true},
               Family::Speech, Backbone::SpeechResNet22, SpeechVariant::BL22});
  e.push_back({{"speech-bl22-cat", "speech Big-Little ResNet-22, concatenation merge", kSpeechInput, true, true},
               Family::Speech, Backbone::SpeechResNet22, SpeechVariant::BL22Cat});
  e.push_back({{"speech-bl-pyr22", "speech pyramidal Big-Little ResNet-22", kSpeechInput, true, true},
               Family::Speech, Backbone::SpeechResNet22, SpeechVariant::BLPyr22});
  e.push_back({{"micro-bl", "two-stage micro Big-Little network for training", {2, 3, 32, 32}, true, false},
               Family::MicroBL});
  e.push_back({{"micro-module", "single K = 2 module with a linear head", {2, 4, 8, 8}, true, false},
               Family::MicroModule});
  e.push_back({{"micro-module-k3", "single K = 3 module with a linear head", {2, 4, 8, 8}, true, false},
               Family::MicroModuleK3});
  e.push_back({{"micro-speech", "speech-style micro module with time cropping", {2, 3, 16, 13}, true, true},
               Family::MicroSpeech});
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e = make_entries();
  return e;
}

const Entry* find_entry(std::string_view id) {
  for (const auto& e : entries()) {
    if (e.info.id == id) return &e;
  }
  return nullptr;
}

void reject(bool present, std::string_view flag, std::string_view id) {
  if (present) {
    throw Error(ErrorKind::InvalidArgument, "preset '" + std::string(id) + "' does not accept " + std::string(flag));
  }
}

TensorShape with_extent(TensorShape s, const PresetOverrides& o) {
  if (o.height) s.height = *o.height;
  if (o.width) s.width = *o.width;
  return s;
}

}  // namespace

std::string_view backbone_name(Backbone b) {
  for (const auto& [k, name] : kBackboneNames) {
    if (k == b) return name;
  }
  return "?";
}

Backbone backbone_from_name(std::string_view name) {
  for (const auto& [k, n] : kBackboneNames) {
    if (n == name) return k;
  }
  throw Error(ErrorKind::UnknownBackbone, "'" + std::string(name) + "'");
}

bool is_image_backbone(Backbone b) { return b != Backbone::SpeechResNet22; }

std::string_view merge_mode_name(MergeMode m) { return m == MergeMode::Addition ? "addition" : "concatenation"; }

std::optional<MergeMode> merge_mode_from_name(std::string_view name) {
  if (name == "addition" || name == "add") return MergeMode::Addition;
  if (name == "concatenation" || name == "concat") return MergeMode::Concatenation;
  return std::nullopt;
}

const std::vector<PresetInfo>& preset_registry() {
  static const std::vector<PresetInfo> infos = [] {
    std::vector<PresetInfo> v;
    for (const auto& e : entries()) v.push_back(e.info);
    return v;
  }();
  return infos;
}

const PresetInfo* find_preset(std::string_view id) {
  const Entry* e = find_entry(id);
  return e ? &e->info : nullptr;
}

Graph build_preset(std::string_view id, const PresetOverrides& o) {
  const Entry* e = find_entry(id);
  if (!e) throw Error(ErrorKind::UnknownBackbone, "unknown preset '" + std::string(id) + "'");
  const TensorShape input = with_extent(e->info.input, o);

  switch (e->family) {
    case Family::Baseline:
    case Family::Lowres:
      reject(o.alpha.has_value(), "--alpha", id);
      reject(o.beta.has_value(), "--beta", id);
      reject(o.num_merges.has_value(), "--m", id);
      reject(o.merge_mode.has_value(), "--merge", id);
      reject(o.K && *o.K != 1, "--K", id);
      return e->family == Family::Baseline ? build_baseline(e->backbone, input) : build_lowres(e->backbone, input);

    case Family::BLImage: {
      BLConfig c;
      c.backbone = e->backbone;
      c.input_resolution = input;
      c.alpha = o.alpha.value_or(2);
      c.beta = o.beta.value_or(4);
      c.K = o.K.value_or(2);
      c.num_merges = o.num_merges.value_or(4);
      c.merge_mode = o.merge_mode.value_or(MergeMode::Addition);
      c.coefficients.assign(c.K, 1.0);
      return build_bl_image(c);
    }

    case Family::Speech: {
      reject(o.num_merges.has_value(), "--m", id);
      reject(o.K && *o.K != (e->speech == SpeechVariant::Baseline22 ? 1 : 2) &&
                 e->speech != SpeechVariant::BLPyr22,
             "--K", id);
      SpeechConfig c;
      c.variant = e->speech;
      if (o.merge_mode) {
        reject(e->speech != SpeechVariant::BL22 && e->speech != SpeechVariant::BL22Cat, "--merge", id);
        c.variant = *o.merge_mode == MergeMode::Addition ? SpeechVariant::BL22 : SpeechVariant::BL22Cat;
      }
      if (e->speech == SpeechVariant::Baseline22) {
        reject(o.alpha.has_value(), "--alpha", id);
        reject(o.beta.has_value(), "--beta", id);
      }
      c.alpha = o.alpha.value_or(4);
      c.beta = o.beta.value_or(1);
      c.input = input;
      return build_speech(c);
    }

    case Family::MicroBL:
    case Family::MicroModule:
    case Family::MicroModuleK3:
    case Family::MicroSpeech: {
      reject(o.num_merges.has_value(), "--m", id);
      MicroConfig c;
      c.input = input;
      c.alpha = o.alpha.value_or(2);
      c.beta = o.beta.value_or(2);
      c.K = o.K.value_or(e->family == Family::MicroModuleK3 ? 3 : 2);
      c.merge_mode = o.merge_mode.value_or(MergeMode::Addition);
      c.coefficients.assign(c.K, 1.0);
      if (e->family == Family::MicroBL) return build_micro_bl(c);
      if (e->family == Family::MicroSpeech) return build_micro_speech(c);
      return build_micro_module(c);
    }
  }
  throw Error(ErrorKind::UnknownBackbone, "unknown preset '" + std::string(id) + "'");
}

std::string baseline_of(std::string_view id) {
  const Entry* e = find_entry(id);
  if (!e) return "";
  switch (e->family) {
    case Family::Baseline: return e->info.id;
    case Family::Lowres:
    case Family::BLImage: return std::string(backbone_name(e->backbone));
    case Family::Speech: return "speech-resnet22";
    default: return "";
  }
}

}  // namespace blnet
