#include "dtts/batching.hpp"

#include "dtts/errors.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace dtts {

BatchPlan build_batches(const std::vector<SizedItem>& items, long frame_budget, std::uint64_t seed) {
  if (frame_budget < 1) throw UsageError("frame budget must be positive");
  for (const auto& it : items) {
    if (it.frames > frame_budget) {
      throw DataError("utterance '" + it.utt_id + "' has " + std::to_string(it.frames) +
                      " frames, more than the batch budget of " + std::to_string(frame_budget));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].frames < items[b].frames; });

  BatchPlan plan;
  std::vector<std::size_t> current;
  long used = 0;
  for (std::size_t i : order) {
    if (!current.empty() && used + items[i].frames > frame_budget) {
      plan.push_back(std::move(current));
      current.clear();
      used = 0;
    }
    current.push_back(i);
    used += items[i].frames;
  }
  if (!current.empty()) plan.push_back(std::move(current));
  std::shuffle(plan.begin(), plan.end(), rng);
  return plan;
}

}  // namespace dtts
