#include "irk/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace irk {

namespace {
constexpr char kMagic[8] = {'I', 'R', 'K', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json header;
  header["meta"] = meta;
  nlohmann::ordered_json tensors;
  uint64_t offset = 0;
  for (const auto& name : params.names()) {
    const auto& t = params.at(name);
    tensors[name] = nlohmann::ordered_json{
        {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}};
    offset += uint64_t(t.numel()) * sizeof(float);
  }
  header["tensors"] = tensors;
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  uint32_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  uint64_t hlen = htext.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(htext.data(), std::streamsize(htext.size()));
  for (const auto& name : params.names()) {
    const auto& t = params.at(name);
    f.write(reinterpret_cast<const char*>(t.values.data()),
            std::streamsize(t.values.size() * sizeof(float)));
  }
  if (!f) throw IoError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  f.read(htext.data(), std::streamsize(hlen));
  if (!f) throw IoError("truncated checkpoint header: " + path);
  auto header = nlohmann::ordered_json::parse(htext);

  Checkpoint out;
  out.meta = header.at("meta");
  for (auto it = header.at("tensors").begin(); it != header.at("tensors").end(); ++it) {
    auto shape = it.value().at("shape").get<Shape>();
    if (it.value().at("dtype").get<std::string>() != "f32")
      throw IoError("unsupported tensor dtype in checkpoint");
    auto& t = out.params.create(it.key(), shape);
    f.read(reinterpret_cast<char*>(t.values.data()),
           std::streamsize(t.values.size() * sizeof(float)));
    if (!f) throw IoError("truncated checkpoint payload: " + path);
  }
  return out;
}

}  // namespace irk
