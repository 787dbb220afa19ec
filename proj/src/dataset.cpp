#include "dtts/dataset.hpp"

#include "dtts/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

namespace dtts {
namespace {

fs::path mel_file(const fs::path& dir, const std::string& id) { return dir / (id + ".mel.f32"); }
fs::path pitch_file(const fs::path& dir, const std::string& id) { return dir / (id + ".pitch.f32"); }

}  // namespace

Dataset Dataset::select(const Manifest& manifest) const {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < utterances.size(); ++i) by_id[utterances[i].utt_id] = i;
  Dataset out;
  out.vocab = vocab;
  out.pitch_stats = pitch_stats;
  out.num_speakers = num_speakers;
  out.num_languages = num_languages;
  for (const auto& e : manifest.entries) {
    const auto it = by_id.find(e.utt_id);
    if (it == by_id.end()) {
      throw DataError("utterance '" + e.utt_id + "' is not in the feature cache; run prepare-data");
    }
    out.utterances.push_back(utterances[it->second]);
  }
  return out;
}

std::size_t prepare_data(const std::vector<fs::path>& manifest_paths, const fs::path& cache_dir) {
  if (manifest_paths.empty()) throw UsageError("prepare-data needs at least one manifest");
  std::vector<Manifest> manifests;
  for (const auto& p : manifest_paths) manifests.push_back(read_manifest(p));
  const Vocabulary vocab = Vocabulary::from_manifests(manifests);

  struct Item {
    const ManifestEntry* entry;
    Matrix mel;
    std::vector<int> durations;
    std::vector<double> log_pitch;
  };
  std::vector<Item> items;
  std::map<std::string, std::string> origin;
  for (std::size_t m = 0; m < manifests.size(); ++m) {
    for (const auto& e : manifests[m].entries) {
      if (!origin.emplace(e.utt_id, manifest_paths[m].string()).second) {
        throw DataError("utterance id '" + e.utt_id + "' appears in more than one manifest");
      }
      Waveform w = read_wav(manifests[m].audio_path(e));
      if (w.sample_rate == kOutputRate) w = resample_48k_to_16k(w);
      w.validate();
      if (w.sample_rate != kAnalysisRate) {
        throw DataError(e.utt_id + ": unsupported sample rate " + std::to_string(w.sample_rate));
      }
      Item it{&e, compute_mel(w).frames, read_durations(manifests[m].durations_path(e)), {}};
      if (it.durations.size() != e.phonemes.size()) {
        throw DataError(e.utt_id + ": " + std::to_string(it.durations.size()) + " durations for " +
                        std::to_string(e.phonemes.size()) + " phonemes");
      }
      long total = 0;
      for (int d : it.durations) total += d;
      if (total != it.mel.rows()) {
        throw DataError(e.utt_id + ": durations sum to " + std::to_string(total) + " but audio has " +
                        std::to_string(it.mel.rows()) + " frames");
      }
      it.log_pitch = phoneme_log_pitch(extract_pitch(w), it.durations);
      items.push_back(std::move(it));
    }
  }

  std::vector<std::vector<double>> all_pitch;
  for (const auto& it : items) all_pitch.push_back(it.log_pitch);
  const PitchStats stats = pitch_stats(all_pitch);

  fs::create_directories(cache_dir);
  nlohmann::json index;
  index["vocab"] = vocab.tokens();
  index["pitch_stats"] = {{"mean", stats.mean}, {"stddev", stats.stddev}};
  int speakers = 1, languages = 1;
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& it : items) {
    const auto& e = *it.entry;
    const auto pitch = normalize_pitch(it.log_pitch, stats);
    write_feature(mel_file(cache_dir, e.utt_id), it.mel);
    write_feature(pitch_file(cache_dir, e.utt_id),
                  Eigen::Map<const Matrix>(pitch.data(), static_cast<Index>(pitch.size()), 1));
    speakers = std::max(speakers, e.speaker + 1);
    languages = std::max(languages, e.language + 1);
    utts.push_back({{"utt_id", e.utt_id},
                    {"phonemes", vocab.encode(e.phonemes)},
                    {"speaker", e.speaker},
                    {"language", e.language},
                    {"frames", it.mel.rows()},
                    {"durations", it.durations}});
  }
  index["num_speakers"] = speakers;
  index["num_languages"] = languages;
  index["utterances"] = utts;
  write_file_atomic(cache_dir / "index.json", index.dump(2) + "\n");
  return items.size();
}

Dataset load_dataset(const fs::path& cache_dir) {
  const fs::path index_path = cache_dir / "index.json";
  if (!fs::exists(index_path)) {
    throw DataError("no feature cache at " + cache_dir.string() + " (run prepare-data)");
  }
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(index_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(index_path.string() + ": " + e.what());
  }
  Dataset d;
  d.vocab = Vocabulary(index.at("vocab").get<std::vector<std::string>>());
  d.pitch_stats.mean = index.at("pitch_stats").at("mean").get<double>();
  d.pitch_stats.stddev = index.at("pitch_stats").at("stddev").get<double>();
  d.num_speakers = index.value("num_speakers", 1);
  d.num_languages = index.value("num_languages", 1);
  for (const auto& j : index.at("utterances")) {
    PhonemeUtterance u;
    u.utt_id = j.at("utt_id").get<std::string>();
    u.phonemes = j.at("phonemes").get<std::vector<Index>>();
    u.speaker = j.at("speaker").get<Index>();
    u.language = j.at("language").get<Index>();
    u.durations = j.at("durations").get<std::vector<int>>();
    u.mel = read_feature(mel_file(cache_dir, u.utt_id)).values;
    const Matrix pitch = read_feature(pitch_file(cache_dir, u.utt_id)).values;
    u.pitch.assign(pitch.data(), pitch.data() + pitch.size());
    d.utterances.push_back(std::move(u));
  }
  return d;
}

fs::path default_cache_dir(const fs::path& fallback) {
  if (const char* env = std::getenv("DTTS_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

}  // namespace dtts
