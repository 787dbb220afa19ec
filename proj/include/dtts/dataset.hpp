// Feature preparation and loading. prepare_data turns manifests into a
// feature cache directory:
//   index.json           vocabulary, pitch statistics, per-utterance metadata
//   <utt_id>.mel.f32     T x 80 log-mel (+ .mel.json sidecar)
//   <utt_id>.pitch.f32   N x 1 normalized phoneme pitch (+ sidecar)
#pragma once

#include "dtts/acoustic_model.hpp"
#include "dtts/io.hpp"

#include <string>
#include <vector>

namespace dtts {

struct Dataset {
  Vocabulary vocab;
  PitchStats pitch_stats;
  int num_speakers = 1;
  int num_languages = 1;
  std::vector<PhonemeUtterance> utterances;

  Index frames(std::size_t i) const { return utterances[i].mel->rows(); }
  /// Subset in manifest order; throws DataError for ids missing from the cache.
  Dataset select(const Manifest& manifest) const;
};

/// Reads audio (48 kHz is resampled to 16 kHz), computes mel and pitch,
/// checks that durations sum to the frame count and writes the cache.
/// Returns the number of utterances written.
std::size_t prepare_data(const std::vector<fs::path>& manifests, const fs::path& cache_dir);

/// Loads every utterance in the cache.
Dataset load_dataset(const fs::path& cache_dir);

/// Cache directory from $DTTS_CACHE_DIR, else `fallback`.
fs::path default_cache_dir(const fs::path& fallback = "dtts_cache");

}  // namespace dtts
