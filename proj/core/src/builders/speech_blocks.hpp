#pragma once

#include <string>
#include <vector>

#include "blnet/net_builder.hpp"

namespace blnet::detail {

// Residual block of `convs` 3x3 convs without time padding. The shortcut is
// cropped symmetrically in time and projected when width or stride changes.
Tap speech_block(NetBuilder& nb, const std::string& prefix, const Tap& x, int64_t out, int convs,
                 int64_t freq_stride, bool final_relu);

// Blocks with the given conv counts; only the first block strides.
Tap speech_branch(NetBuilder& nb, const std::string& prefix, Tap x, int64_t channels,
                  const std::vector<int>& block_convs, int64_t first_stride, bool last_relu);

Tap speech_stem(NetBuilder& nb, const Tap& x, int64_t channels);

}  // namespace blnet::detail
