#include "dtts/io.hpp"

#include "dtts/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace dtts {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

template <typename T>
T load_le(const std::string& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void store_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("invalid " + what + " '" + s + "'");
  }
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Waveform read_wav(const fs::path& path) {
  const std::string b = read_file(path);
  const std::string name = path.string();
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw DataError(name + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const auto size = load_le<std::uint32_t>(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw DataError(name + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw DataError(name + ": short fmt chunk");
      format = load_le<std::uint16_t>(b, body);
      channels = load_le<std::uint16_t>(b, body + 2);
      rate = load_le<std::uint32_t>(b, body + 4);
      bits = load_le<std::uint16_t>(b, body + 14);
      if (format == 0xFFFE && size >= 26) format = load_le<std::uint16_t>(b, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      if (channels == 0) throw DataError(name + ": zero channels");
      const bool pcm16 = format == 1 && bits == 16;
      const bool float32 = format == 3 && bits == 32;
      if (!pcm16 && !float32) {
        throw DataError(name + ": unsupported encoding (format " + std::to_string(format) +
                        ", " + std::to_string(bits) + " bits)");
      }
      const std::size_t width = bits / 8;
      const std::size_t frames = size / (width * channels);
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t at = body + (i * channels + c) * width;
          acc += pcm16 ? load_le<std::int16_t>(b, at) / 32768.0
                       : static_cast<double>(load_le<float>(b, at));
        }
        w.samples[i] = acc / channels;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw DataError(name + ": no data chunk");
}

void write_wav(const fs::path& path, const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  store_le<std::uint32_t>(out, 36 + 2 * n);
  out += "WAVEfmt ";
  store_le<std::uint32_t>(out, 16);
  store_le<std::uint16_t>(out, 1);
  store_le<std::uint16_t>(out, 1);
  store_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  store_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  store_le<std::uint16_t>(out, 2);
  store_le<std::uint16_t>(out, 16);
  out += "data";
  store_le<std::uint32_t>(out, 2 * n);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    store_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32767.0)));
  }
  write_file_atomic(path, out);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t bar; (bar = t.find('|', start)) != std::string::npos; start = bar + 1) {
      fields.push_back(trim(t.substr(start, bar - start)));
    }
    fields.push_back(trim(t.substr(start)));
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 6) {
      throw DataError(where + ": expected 6 '|'-separated fields, got " +
                      std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.utt_id = fields[0];
    e.phonemes = split_ws(fields[1]);
    e.speaker = parse_int(fields[2], "speaker id at " + where);
    e.language = parse_int(fields[3], "language id at " + where);
    e.audio = fields[4];
    e.durations = fields[5];
    if (e.utt_id.empty()) throw DataError(where + ": empty utterance id");
    if (e.phonemes.empty()) throw DataError(where + ": utterance '" + e.utt_id + "' has no phonemes");
    if (e.speaker < 0 || e.language < 0) throw DataError(where + ": negative speaker/language id");
    if (!seen.insert(e.utt_id).second) throw DataError(where + ": duplicate utterance id '" + e.utt_id + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    std::string phones;
    for (const auto& p : e.phonemes) phones += (phones.empty() ? "" : " ") + p;
    out += e.utt_id + "|" + phones + "|" + std::to_string(e.speaker) + "|" +
           std::to_string(e.language) + "|" + e.audio + "|" + e.durations + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<int> read_durations(const fs::path& path) {
  std::vector<int> out;
  for (const auto& tok : split_ws(read_file(path))) {
    const int d = parse_int(tok, "duration in " + path.string());
    if (d < 0) throw DataError(path.string() + ": negative duration " + tok);
    out.push_back(d);
  }
  return out;
}

void write_durations(const fs::path& path, const std::vector<int>& durations) {
  std::string out;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    out += (i ? " " : "") + std::to_string(durations[i]);
  }
  write_file_atomic(path, out + "\n");
}

fs::path sidecar_path(const fs::path& data_path) {
  fs::path p = data_path;
  p.replace_extension(".json");
  return p;
}

void write_feature(const fs::path& data_path, const Matrix& values, int hop, int sample_rate) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(values.size()) * 4);
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) store_le<float>(bytes, static_cast<float>(values(r, c)));
  }
  const nlohmann::json meta = {{"shape", {values.rows(), values.cols()}},
                               {"dtype", "float32"},
                               {"byte_order", "little"},
                               {"hop", hop},
                               {"sample_rate", sample_rate}};
  write_file_atomic(data_path, bytes);
  write_file_atomic(sidecar_path(data_path), meta.dump(2) + "\n");
}

FeatureFile read_feature(const fs::path& data_path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(sidecar_path(data_path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path(data_path).string() + ": " + e.what());
  }
  if (meta.value("dtype", "") != "float32") throw DataError(data_path.string() + ": dtype must be float32");
  const auto shape = meta.at("shape").get<std::vector<Index>>();
  if (shape.size() != 2) throw DataError(data_path.string() + ": shape must be 2-D");
  const std::string bytes = read_file(data_path);
  if (bytes.size() != static_cast<std::size_t>(shape[0] * shape[1]) * 4) {
    throw DataError(data_path.string() + ": size does not match sidecar shape");
  }
  FeatureFile f;
  f.values.resize(shape[0], shape[1]);
  for (Index i = 0; i < shape[0] * shape[1]; ++i) {
    f.values.data()[i] = load_le<float>(bytes, static_cast<std::size_t>(i) * 4);
  }
  f.hop = meta.value("hop", kHopSamples);
  f.sample_rate = meta.value("sample_rate", kAnalysisRate);
  return f;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<Index>(i);
}

Vocabulary Vocabulary::from_manifests(const std::vector<Manifest>& manifests) {
  std::vector<std::string> all;
  for (const auto& m : manifests) {
    for (const auto& e : m.entries) all.insert(all.end(), e.phonemes.begin(), e.phonemes.end());
  }
  return Vocabulary(std::move(all));
}

Index Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw DataError("unknown phoneme '" + token + "'");
  return it->second;
}

std::vector<Index> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<Index> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> read_phoneme_file(const fs::path& path) {
  return split_ws(read_file(path));
}

}  // namespace dtts
