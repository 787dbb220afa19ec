// On-disk formats: WAV audio, utterance manifests, duration files, the
// float32 feature cache and the phoneme vocabulary.
#pragma once

#include "dtts/autograd.hpp"
#include "dtts/features.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dtts {

namespace fs = std::filesystem;

/// Reads 16-bit PCM or 32-bit float RIFF/WAVE; multi-channel input is
/// averaged to mono. Throws DataError on malformed files.
Waveform read_wav(const fs::path& path);
/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const fs::path& path, const Waveform& w);

/// utt_id | phoneme tokens | speaker | language | audio path | duration path
struct ManifestEntry {
  std::string utt_id;
  std::vector<std::string> phonemes;
  int speaker = 0;
  int language = 0;
  std::string audio;      // relative to the manifest directory
  std::string durations;  // relative to the manifest directory
};

struct Manifest {
  fs::path base_dir;
  std::vector<ManifestEntry> entries;

  fs::path audio_path(const ManifestEntry& e) const { return base_dir / e.audio; }
  fs::path durations_path(const ManifestEntry& e) const { return base_dir / e.durations; }
};

/// Blank lines and lines starting with '#' are skipped. Throws DataError
/// with the line number on malformed lines or duplicate ids.
Manifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);

std::vector<int> read_durations(const fs::path& path);
void write_durations(const fs::path& path, const std::vector<int>& durations);

/// Raw little-endian float32, row-major, next to a JSON sidecar
/// (<stem>.json) holding shape, dtype, hop and sample rate.
struct FeatureFile {
  Matrix values;
  int hop = kHopSamples;
  int sample_rate = kAnalysisRate;
};

void write_feature(const fs::path& data_path, const Matrix& values, int hop = kHopSamples,
                   int sample_rate = kAnalysisRate);
FeatureFile read_feature(const fs::path& data_path);
fs::path sidecar_path(const fs::path& data_path);

/// Sorted unique phoneme tokens; ids are positions in that order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);
  static Vocabulary from_manifests(const std::vector<Manifest>& manifests);

  Index id(const std::string& token) const;
  std::vector<Index> encode(const std::vector<std::string>& tokens) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  Index size() const { return static_cast<Index>(tokens_.size()); }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, Index> ids_;
};

/// Whitespace-separated phoneme tokens from a text file.
std::vector<std::string> read_phoneme_file(const fs::path& path);

/// Writes bytes to a temporary sibling and renames it over path.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

}  // namespace dtts
