#include <algorithm>

#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/net_builder.hpp"

namespace blnet {

namespace {

int64_t exact_ratio(int64_t big, int64_t small, const std::string& prefix) {
  if (small <= 0 || big % small != 0) {
    throw Error(ErrorKind::ShapeIrreconcilable,
                prefix + ": extent " + std::to_string(small) + " does not divide " + std::to_string(big));
  }
  return big / small;
}

}  // namespace

Tap build_bl_module(NetBuilder& nb, const std::string& prefix, const std::vector<Tap>& branches,
                    const ModuleOptions& options) {
  if (branches.size() < 2) throw Error(ErrorKind::InvalidArgument, prefix + ": a module needs two branches");
  const bool addition = options.merge_mode == MergeMode::Addition;
  if (addition && options.coefficients.size() != branches.size()) {
    throw Error(ErrorKind::InvalidArgument, prefix + ": coefficient count does not match branch count");
  }

  // Time-cropping modules align on the shortest time extent; otherwise the
  // finest grid wins on both axes.
  int64_t height = 0, width = branches.front().width();
  for (const auto& b : branches) {
    height = std::max(height, b.height());
    width = options.crop_time ? std::min(width, b.width()) : std::max(width, b.width());
  }

  std::vector<Tap> ready;
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const std::string name = prefix + ".b" + std::to_string(k);
    Tap t = options.crop_time ? nb.crop_time(name + ".crop", branches[k], width) : branches[k];
    // Under addition every branch but the coarsest ends in a 1x1 adapter,
    // even when its width already matches.
    if (addition && k + 1 < branches.size()) {
      t = nb.conv_bn(name + ".adapt", t, options.target_channels, 1);
    }
    t = nb.upsample(name + ".up", t, exact_ratio(height, t.height(), prefix), exact_ratio(width, t.width(), prefix));
    ready.push_back(t);
  }

  Tap merged;
  if (addition) {
    merged = nb.add_merge(prefix + ".merge", ready, options.coefficients);
  } else {
    merged = nb.concat(prefix + ".concat", ready);
    merged = nb.conv_bn(prefix + ".reduce", merged, options.target_channels, 1);
  }
  merged = nb.relu(prefix + ".relu", merged);
  return options.fusion ? options.fusion(nb, merged) : merged;
}

}  // namespace blnet
