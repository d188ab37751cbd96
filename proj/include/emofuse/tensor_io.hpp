#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "emofuse/tensor.hpp"

namespace emofuse {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw float32 array as stored on disk.
struct F32Array {
  Shape shape;
  std::vector<float> values;
};

// File layout: one line of JSON `{"shape": [...], "dtype": "f32"}` followed
// by a newline and numel little-endian IEEE-754 float32 values.
void write_f32(const std::filesystem::path& path, const F32Array& array);
F32Array read_f32(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

/// Writes every parameter as `<dir>/<name>.f32` plus `<dir>/params.json`
/// listing names, shapes and the caller's metadata.
void save_parameters(const std::filesystem::path& dir, const ParameterSet& params,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Loads values into an existing parameter set. Every parameter must be
/// present with a matching shape; extra files are an error too.
nlohmann::json load_parameters(const std::filesystem::path& dir, ParameterSet& params);

}  // namespace emofuse
