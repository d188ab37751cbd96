#include "emofuse/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

namespace emofuse {

namespace fs = std::filesystem;
using nlohmann::json;

void write_f32(const fs::path& path, const F32Array& array) {
  if (static_cast<std::int64_t>(array.values.size()) != numel_of(array.shape)) {
    throw ShapeError("write_f32: " + std::to_string(array.values.size()) +
                     " values for shape " + shape_str(array.shape));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  const json header = {{"shape", array.shape}, {"dtype", "f32"}};
  out << header.dump() << '\n';
  std::vector<std::uint32_t> words(array.values.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::uint32_t w = std::bit_cast<std::uint32_t>(array.values[i]);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    words[i] = w;
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw FormatError("failed writing " + path.string());
}

F32Array read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  if (!header.contains("shape") || !header["shape"].is_array() || header.value("dtype", "") != "f32") {
    throw FormatError(path.string() + ": header must carry \"shape\" and dtype \"f32\"");
  }
  F32Array array;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 0) {
      throw FormatError(path.string() + ": shape entries must be non-negative integers");
    }
    array.shape.push_back(d.get<std::int64_t>());
  }
  const auto n = static_cast<std::size_t>(numel_of(array.shape));
  std::vector<std::uint32_t> words(n);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(std::uint32_t)) {
    throw FormatError(path.string() + ": truncated payload, expected " + std::to_string(n) + " floats");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  array.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t w = words[i];
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    array.values[i] = std::bit_cast<float>(w);
  }
  return array;
}

void write_tensor(const fs::path& path, const Tensor& tensor) {
  F32Array a{tensor.shape(), {}};
  a.values.assign(tensor.values().begin(), tensor.values().end());
  write_f32(path, a);
}

Tensor read_tensor(const fs::path& path) {
  F32Array a = read_f32(path);
  return Tensor(a.shape, std::vector<Real>(a.values.begin(), a.values.end()));
}

void save_parameters(const fs::path& dir, const ParameterSet& params, const json& metadata) {
  fs::create_directories(dir);
  json index = json::array();
  for (const auto& p : params.all()) {
    write_tensor(dir / (p.name + ".f32"), p.tensor);
    index.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"trainable", p.trainable}});
  }
  json doc = {{"parameters", index}, {"metadata", metadata}};
  std::ofstream out(dir / "params.json", std::ios::trunc);
  out << doc.dump(2) << '\n';
  if (!out) throw FormatError("failed writing " + (dir / "params.json").string());
}

json load_parameters(const fs::path& dir, ParameterSet& params) {
  std::ifstream in(dir / "params.json");
  if (!in) throw FormatError("checkpoint " + dir.string() + " has no params.json");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/params.json: " + e.what());
  }
  std::set<std::string> listed;
  for (const auto& entry : doc.at("parameters")) listed.insert(entry.at("name").get<std::string>());
  for (auto& p : params.all()) {
    if (!listed.count(p.name)) throw FormatError("checkpoint " + dir.string() + " lacks " + p.name);
    Tensor loaded = read_tensor(dir / (p.name + ".f32"));
    if (loaded.shape() != p.tensor.shape()) {
      throw FormatError("checkpoint shape mismatch for " + p.name + ": " +
                        shape_str(loaded.shape()) + " vs model " + shape_str(p.tensor.shape()));
    }
    std::copy(loaded.values().begin(), loaded.values().end(), p.tensor.values().begin());
    listed.erase(p.name);
  }
  if (!listed.empty()) {
    throw FormatError("checkpoint " + dir.string() + " has unknown parameter " + *listed.begin());
  }
  return doc.value("metadata", json::object());
}

}  // namespace emofuse
