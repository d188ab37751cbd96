#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "emofuse/dataset.hpp"

namespace emofuse {

inline constexpr int kSyntheticImageSize = 64;

/// Hidden factors behind one synthetic sample.
struct SyntheticLatents {
  std::array<double, 2> face{};   // drawn into the face region colour
  std::array<double, 2> body{};   // drawn into the body colour and the arm/leg angles
  std::array<double, 3> scene{};  // drawn into the background outside the body box
  double distance = 0.0;          // drawn into the depth map only
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<SyntheticLatents> latents;  // parallel to manifest.samples
};

/// Synthetic people on 64x64 canvases.
///
/// Every discrete score is sqrt(1 - scene_signal) * (local projection) +
/// sqrt(scene_signal) * (scene projection), thresholded so that each category
/// hits a fixed prevalence. The local projection reads only face/body
/// latents and the scene projection only scene latents; Disconnection also
/// mixes in the planted distance to the nearest other person. The mixing
/// weights are fixed and independent of `seed`, so datasets drawn with
/// different seeds share one labelling function.
SyntheticDataset generate_synthetic_with_latents(std::int64_t n, std::uint64_t seed,
                                                 double scene_signal);

DatasetManifest generate_synthetic(std::int64_t n, std::uint64_t seed, double scene_signal);

}  // namespace emofuse
