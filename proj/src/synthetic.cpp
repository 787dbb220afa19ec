#include "dtts/synthetic.hpp"

#include "dtts/errors.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace dtts {
namespace {

constexpr int kPeriod48k = 600;  // one analysis hop at 48 kHz

// Noise pattern repeating every hop, keyed by phoneme id and corpus seed.
std::vector<double> noise_pattern(int phoneme_id, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(phoneme_id));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> out(kPeriod48k);
  for (double& v : out) v = n(rng);
  return out;
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
  if (num_utterances < 1) throw UsageError("synthetic corpus needs at least one utterance");
  if (vocab_size < 1 || vocab_size > 64) throw UsageError("synthetic vocab_size must be in [1, 64]");
  if (num_speakers < 1 || num_languages < 1) throw UsageError("need at least one speaker and language");
  if (min_phonemes < 1 || max_phonemes < min_phonemes) {
    throw UsageError("synthetic phoneme counts must satisfy 1 <= min <= max");
  }
}

int synthetic_duration(int phoneme_id) { return 4 + (phoneme_id * 3) % 5; }

double synthetic_frequency(int phoneme_id, int speaker) {
  return 80.0 * (3 + phoneme_id + 2 * speaker);
}

std::string synthetic_token(int phoneme_id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%02d", phoneme_id);
  return buf;
}

Waveform synthetic_waveform(const std::vector<int>& phoneme_ids, int speaker, int language,
                            std::uint64_t seed) {
  long frames = 0;
  for (int p : phoneme_ids) frames += synthetic_duration(p);
  // ceil((600 F - 300) / 3) = 200 F - 100 samples at 16 kHz -> F frames.
  const long total = kPeriod48k * frames - kPeriod48k / 2;
  Waveform w;
  w.sample_rate = kOutputRate;
  w.samples.assign(static_cast<std::size_t>(std::max(total, 1L)), 0.0);
  const double harmonic = 0.15 * language;
  long start = 0;
  for (int p : phoneme_ids) {
    const auto noise = noise_pattern(p, seed);
    const double f = synthetic_frequency(p, speaker);
    const long end = std::min(total, start + static_cast<long>(kPeriod48k) * synthetic_duration(p));
    for (long n = start; n < end; ++n) {
      const double phase = 2.0 * std::numbers::pi * f * static_cast<double>(n) / kOutputRate;
      w.samples[static_cast<std::size_t>(n)] =
          0.4 * std::sin(phase) + harmonic * std::sin(2.0 * phase) +
          0.03 * noise[static_cast<std::size_t>(n % kPeriod48k)];
    }
    start = end;
  }
  return w;
}

fs::path make_synthetic_corpus(const SyntheticCorpusSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> count(spec.min_phonemes, spec.max_phonemes);
  std::uniform_int_distribution<int> phone(0, spec.vocab_size - 1);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < spec.num_utterances; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "syn%04d", i);
    std::vector<int> ids(static_cast<std::size_t>(count(rng)));
    for (int& p : ids) p = phone(rng);
    const int speaker = i % spec.num_speakers;
    const int language = (i / spec.num_speakers) % spec.num_languages;

    ManifestEntry e;
    e.utt_id = id;
    for (int p : ids) e.phonemes.push_back(synthetic_token(p));
    e.speaker = speaker;
    e.language = language;
    e.audio = std::string("wav/") + id + ".wav";
    e.durations = std::string("dur/") + id + ".dur";
    std::vector<int> durations;
    for (int p : ids) durations.push_back(synthetic_duration(p));
    write_wav(out_dir / e.audio, synthetic_waveform(ids, speaker, language, spec.seed));
    write_durations(out_dir / e.durations, durations);
    entries.push_back(std::move(e));
  }
  const fs::path manifest = out_dir / "manifest.txt";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace dtts
