// Frame-budget batch planning.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dtts {

struct SizedItem {
  std::string utt_id;
  long frames = 0;
};

using BatchPlan = std::vector<std::vector<std::size_t>>;

/// Greedy length-bucketed packing: items are sorted by frame count (ties
/// broken by a seeded shuffle) and packed in order while the batch total
/// stays within frame_budget; batch order is then shuffled. Every index
/// appears exactly once. Throws DataError naming any item longer than the
/// budget.
BatchPlan build_batches(const std::vector<SizedItem>& items, long frame_budget, std::uint64_t seed);

}  // namespace dtts
