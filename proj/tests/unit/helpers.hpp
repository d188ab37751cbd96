#pragma once

#include <filesystem>
#include <string>

#include "emofuse/model.hpp"

namespace emofuse::test {

// Small enough that a few epochs over a few dozen samples take well under
// a second.
inline ModelConfig tiny_model_config() {
  ModelConfig m;
  constexpr int d = 16;
  for (auto* c : {&m.face, &m.body, &m.scene}) {
    c->input_size = 16;
    c->width = 4;
    c->out_dim = d;
  }
  m.pose.hidden = 8;
  m.pose.out_dim = d;
  m.vit.height = m.vit.width = 16;
  m.vit.patch = 8;
  m.vit.embed_dim = d;
  m.vit.heads = 2;
  m.vit.depth = 1;
  m.vit.mlp_hidden = 32;
  m.depth.input_size = 32;
  m.depth.channels = {2, 2, 4, 4, 4};
  m.depth.out_dim = d;
  m.fusion.stream_dim = d;
  m.fusion.embrace_dim = d;
  m.fusion.fused_dim = 32;
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("emofuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace emofuse::test
