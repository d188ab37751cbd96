#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "emofuse/categories.hpp"
#include "emofuse/image.hpp"

namespace emofuse {

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed manifest record; `line` is 1-based.
class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::size_t line, const std::string& what)
      : std::runtime_error("manifest line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

inline constexpr int kFaceSize = 128;
inline constexpr int kBodySize = 224;
inline constexpr int kNumJoints = 18;

/// Skeleton joint in normalized image coordinates. (-1, -1) marks a joint
/// that was not detected.
struct Keypoint {
  float x = -1.0f;
  float y = -1.0f;
  bool missing() const { return x < 0.0f || y < 0.0f; }
  bool operator==(const Keypoint&) const = default;
};
using Pose = std::array<Keypoint, kNumJoints>;

struct EmotionAnnotation {
  std::array<std::uint8_t, kNumDiscrete> disc{};
  std::array<float, kNumContinuous> cont{};  // valence, arousal, dominance in [0, 1]
  bool operator==(const EmotionAnnotation&) const = default;
};

/// Names accepted as keys of `Sample::precomputed`.
inline constexpr std::array<std::string_view, 6> kModalityKeys = {"face",  "body",     "pose",
                                                                  "scene", "semantic", "depth"};

struct Sample {
  std::string id;
  std::optional<Image> image;
  std::optional<Image> depth;
  std::optional<BBox> body_bbox;
  std::optional<BBox> face_bbox;
  std::optional<Pose> pose;
  EmotionAnnotation annotation;
  std::map<std::string, std::vector<float>> precomputed;

  // Paths as written in the manifest, relative to it. Kept for round trips.
  std::string image_path;
  std::string depth_path;
  std::map<std::string, std::string> precomputed_paths;

  bool has_complete_precomputed() const;
};

enum class Split { Train, Val, Test };
std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view name);

struct DatasetManifest {
  std::vector<Sample> samples;
  Split split = Split::Train;
  std::array<double, kNumDiscrete> category_priors{};
};

/// Throws ValidationError naming the sample id when an invariant fails.
void validate_sample(const Sample& sample);

/// Empirical frequency of each category. A category with no positives gets
/// 0.5 / n so every prior stays in (0, 1]; an empty list gives 1 / 26.
std::array<double, kNumDiscrete> compute_priors(const std::vector<Sample>& samples);

/// Consecutive 70/15/15 split in sample order (train, val, test). Sizes are
/// rounded to the nearest sample; the test split takes the remainder.
std::array<DatasetManifest, 3> split_70_15_15(const DatasetManifest& all);

/// Reads a JSON-lines manifest; relative asset paths resolve against the
/// manifest's directory. The split is taken from the file stem when it is
/// train/val/test, otherwise `fallback_split`. Priors are always recomputed.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              Split fallback_split = Split::Train);

/// Writes one record per sample using each sample's stored asset paths.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Writes in-memory images/depth maps that have no path yet as `.f32` files
/// under `asset_dir` and records paths relative to `manifest_dir`.
void materialize_assets(DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                        const std::filesystem::path& asset_dir);

/// Face resized to 128x128x3 and body to 224x224x3; a region whose image or
/// box is missing comes back empty.
std::pair<std::optional<Image>, std::optional<Image>> crop_regions(const Sample& sample);

/// The image with the target's body box blanked, as fed to the context
/// (scene and semantic) streams. Empty when the sample has no image.
std::optional<Image> context_image(const Sample& sample);

}  // namespace emofuse
