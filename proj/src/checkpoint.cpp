#include "dtts/checkpoint.hpp"

#include "dtts/errors.hpp"
#include "dtts/io.hpp"

#include <cstring>

namespace dtts {
namespace {

constexpr char kMagic[8] = {'D', 'T', 'T', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::map<std::string, const Matrix*>& tensors) {
  nlohmann::json header = meta;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    index.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m->size()) * sizeof(double);
  }
  header["tensors"] = index;
  const std::string json = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, json.size());
  out += json;
  out.reserve(out.size() + offset);
  for (const auto& [name, m] : tensors) {
    out.append(reinterpret_cast<const char*>(m->data()),
               static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  write_file_atomic(path, out);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string name = path.string();
  constexpr std::size_t fixed = sizeof kMagic + 4 + 8;
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(name + ": not a checkpoint");
  }
  const auto version = get<std::uint32_t>(bytes, sizeof kMagic);
  if (version != kCheckpointVersion) {
    throw DataError(name + ": checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  const auto header_len = get<std::uint64_t>(bytes, sizeof kMagic + 4);
  if (fixed + header_len > bytes.size()) throw DataError(name + ": truncated header");
  CheckpointData out;
  try {
    out.meta = nlohmann::json::parse(bytes.substr(fixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad header: " + e.what());
  }
  const std::size_t data_start = fixed + header_len;
  for (const auto& t : out.meta.at("tensors")) {
    const auto rows = t.at("rows").get<Index>();
    const auto cols = t.at("cols").get<Index>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (data_start + off + n > bytes.size()) throw DataError(name + ": truncated tensor data");
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes.data() + data_start + off, n);
    out.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  out.meta.erase("tensors");
  return out;
}

}  // namespace dtts
