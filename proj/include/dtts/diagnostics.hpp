// Structural probes on a model instance, reported by `dtts eval-props`.
#pragma once

#include "dtts/acoustic_model.hpp"

#include <json.hpp>

namespace dtts {

/// Largest deviation of pre-softmax logits from their diagonal mean when a
/// constant-content sequence of `length` rows is fed to the attention.
double attention_toeplitz_deviation(const RelativeSelfAttention& attention, Index dim, Index length,
                                    std::uint64_t seed = 0);

/// Largest |solo - batched| over the final mel of every item when the
/// items are run together in one padded batch.
double padding_invariance_gap(const AcousticModel& model, const std::vector<PhonemeUtterance>& items);

/// Reference-encoder invocations caused by one forward_infer call.
int inference_reference_calls(const AcousticModel& model, const std::vector<Index>& phonemes);

/// Architecture summary: block counts, dims, module order, parameter count.
nlohmann::json architecture_report(const AcousticModel& model);

}  // namespace dtts
