#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "emofuse/dataset.hpp"
#include "emofuse/encoders.hpp"
#include "emofuse/fusion.hpp"

namespace emofuse {

struct ModelConfig {
  ConvEncoderConfig face;
  ConvEncoderConfig body;
  ConvEncoderConfig scene;
  PoseEncoderConfig pose;
  VitConfig vit;
  DepthEncoderConfig depth;
  FusionConfig fusion;

  void validate(const std::string& path = "model") const;
};

/// Ablation feature groups: 1 = face/body/pose, 2 = scene + semantic,
/// 3 = depth.
using FeatureSet = std::set<int>;
void validate_feature_set(const FeatureSet& fs, const std::string& path);
std::string feature_set_label(const FeatureSet& fs);  // "{1,2,3}"

/// Raw input slots, in the order of kModalityKeys.
enum class InputSlot { Face, Body, Pose, Scene, Semantic, Depth };
inline constexpr int kNumInputSlots = 6;
bool slot_enabled(InputSlot slot, const FeatureSet& fs);

/// Encoder-ready inputs of one sample. Slots outside the feature set, or
/// missing in the sample, stay empty.
struct PreparedSample {
  std::string id;
  std::optional<Tensor> face, body, scene, semantic, depth;  // [C, H, W]
  std::optional<PreparedPose> pose;
  std::array<std::optional<Tensor>, kNumInputSlots> precomputed;  // [stream_dim]
  EmotionAnnotation annotation;
};

struct ForwardResult {
  HeadOutput heads;
  Tensor fused;                                    // [B, fused_dim]
  std::array<StreamBatch, kNumStreams> streams;    // f1, f7, f4, f5, f6
  std::vector<std::optional<AttentionMaps>> attention;  // per sample, when requested
};

/// The full five-stream network.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  const ConvEncoder& face_encoder() const { return face_; }
  const ConvEncoder& body_encoder() const { return body_; }
  const ConvEncoder& scene_encoder() const { return scene_; }
  const PoseEncoder& pose_encoder() const { return pose_; }
  const VitEncoder& semantic_encoder() const { return vit_; }
  const DepthEncoder& depth_encoder() const { return depth_; }
  const Embrace& embrace() const { return embrace_; }
  const Fusion& fusion() const { return fusion_; }
  const Heads& heads() const { return heads_; }

  /// Crops, resamples and normalizes the enabled inputs. Precomputed
  /// vectors take precedence over images for their slot.
  PreparedSample prepare(const Sample& sample, const FeatureSet& fs) const;
  std::vector<PreparedSample> prepare_all(const std::vector<Sample>& samples, const FeatureSet& fs) const;

  ForwardResult forward(std::span<const PreparedSample* const> batch, bool training, Rng& embrace_rng,
                        bool want_attention = false, EmbraceState* embrace_state = nullptr) const;

  /// Number of times each raw or prepared input slot was read.
  std::int64_t input_reads(InputSlot slot) const { return reads_[static_cast<std::size_t>(slot)].load(); }
  void reset_input_reads() const;

 private:
  void count(InputSlot slot) const { reads_[static_cast<std::size_t>(slot)].fetch_add(1); }
  StreamBatch conv_stream(std::span<const PreparedSample* const> batch, InputSlot slot,
                          std::optional<Tensor> PreparedSample::*field, const ConvEncoder& enc) const;

  ModelConfig cfg_;
  ParameterSet params_;
  Rng init_;
  ConvEncoder face_, body_, scene_;
  PoseEncoder pose_;
  VitEncoder vit_;
  DepthEncoder depth_;
  Embrace embrace_;
  Fusion fusion_;
  Heads heads_;
  mutable std::array<std::atomic<std::int64_t>, kNumInputSlots> reads_{};
};

/// Stacks [B, K] constant targets from annotations: all 26 categories, or
/// the four basic emotions for the 4-class head.
Tensor discrete_targets(std::span<const PreparedSample* const> batch, DiscreteHead head);
Tensor continuous_targets(std::span<const PreparedSample* const> batch);

/// Category indices the discrete head scores, in output order.
std::vector<std::size_t> head_categories(DiscreteHead head);

}  // namespace emofuse
