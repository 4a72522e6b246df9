#include "unidgf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace unidgf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

using nlohmann::json;

void save_checkpoint(const std::string& path, const json& config,
                     const ParamStore& store) {
  json dir = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : store.entries()) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    dir.push_back(entry);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(Scalar);
  }
  json header;
  header["config"] = config;
  header["tensors"] = dir;
  std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  out.put(static_cast<char>(kCheckpointVersion));
  uint64_t len = header_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : store.entries()) {
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(Scalar)));
  }
  if (!out) throw IoError("short write: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError("not a UDGF checkpoint: " + path);
  }
  int version = in.get();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw IoError("corrupt checkpoint header: " + path);
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header: " + path);

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header parse error: ") + e.what());
  }

  LoadedCheckpoint out;
  out.config = header.at("config");
  uint64_t expect_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    uint64_t offset = entry.at("offset").get<uint64_t>();
    if (offset != expect_offset) throw IoError("checkpoint offsets out of order: " + path);
    long n = shape_numel(shape);
    std::vector<Scalar> data(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(Scalar)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(Scalar))) {
      throw IoError("truncated checkpoint payload at '" + name + "': " + path);
    }
    out.store.put(name, Tensor::from_data(shape, std::move(data), false));
    expect_offset = offset + static_cast<uint64_t>(n) * sizeof(Scalar);
  }
  return out;
}

}  // namespace unidgf
