// Deterministic toy corpus: every phoneme id owns a fixed-length segment of
// tone plus periodic noise, so durations are exact by construction.
#pragma once

#include "dtts/io.hpp"

#include <cstdint>

namespace dtts {

struct SyntheticCorpusSpec {
  int num_utterances = 8;
  int vocab_size = 6;
  int num_speakers = 1;
  int num_languages = 1;
  int min_phonemes = 3;
  int max_phonemes = 6;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Frames owned by one phoneme id (4 to 8).
int synthetic_duration(int phoneme_id);
/// Tone frequency in Hz; always a multiple of 80 Hz.
double synthetic_frequency(int phoneme_id, int speaker);
std::string synthetic_token(int phoneme_id);

/// 48 kHz audio whose 16 kHz analysis has exactly sum(durations) frames.
Waveform synthetic_waveform(const std::vector<int>& phoneme_ids, int speaker, int language,
                            std::uint64_t seed);

/// Writes manifest.txt, wav/<id>.wav and dur/<id>.dur under out_dir and
/// returns the manifest path.
fs::path make_synthetic_corpus(const SyntheticCorpusSpec& spec, const fs::path& out_dir);

}  // namespace dtts
