#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emofuse/dataset.hpp"
#include "emofuse/image.hpp"
#include "emofuse/rng.hpp"
#include "emofuse/tensor.hpp"

namespace emofuse {

/// The five fused streams, in concatenation order.
enum class Modality { Face, BodyPose, Scene, Semantic, Depth };
inline constexpr int kNumStreams = 5;
std::string_view modality_name(Modality m);  // "face", "body_pose", ...

/// One stream's feature for one sample. An absent feature carries no vector.
struct ModalityFeature {
  Modality name = Modality::Face;
  Tensor vector;  // [dim] when present
  bool present = false;
};

/// One stream's features for a batch. Only present samples have a row;
/// `rows[i]` is the batch position of features[i].
struct StreamBatch {
  Tensor features;  // [rows.size(), dim]
  std::vector<std::int64_t> rows;
  std::int64_t batch = 0;

  bool empty() const { return rows.empty(); }
};

/// Kaiming fan-in normal for weights.
Tensor kaiming_normal(Shape shape, std::int64_t fan_in, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

/// Stacks [C, H, W] tensors (no history) into [B, C, H, W].
Tensor stack_constant(const std::vector<Tensor>& items);

// ---------------------------------------------------------------------------

struct ConvEncoderConfig {
  int input_size = 32;  // crops are resampled to this square size first
  int width = 16;       // channels of the first stage; the second uses twice that
  int out_dim = 64;
  void validate(const std::string& path) const;
};

/// Residual conv stack standing in for the pretrained face/body/scene
/// backbones: stride-2 stem, residual block, stride-2 conv, residual block,
/// global average pool, linear.
class ConvEncoder {
 public:
  ConvEncoder(const std::string& name, const ConvEncoderConfig& cfg, ParameterSet& params, Rng& init);

  const ConvEncoderConfig& config() const { return cfg_; }
  /// [3, S, S] from an image of any size.
  Tensor prepare(const Image& image) const;
  /// [B, 3, S, S] -> [B, out_dim]
  Tensor forward(const Tensor& x) const;
  /// Single-image form; an absent image yields present=false.
  ModalityFeature encode(const std::optional<Image>& image, Modality kind) const;

 private:
  struct Conv {
    Tensor w, b;
  };
  Tensor conv(const Conv& c, const Tensor& x, int stride) const;

  ConvEncoderConfig cfg_;
  Conv stem_, res1a_, res1b_, down_, res2a_, res2b_;
  Tensor proj_w_, proj_b_;
};

// ---------------------------------------------------------------------------

struct PoseEncoderConfig {
  int hidden = 32;
  int out_dim = 64;
  bool normalize = true;  // root-relative, torso-scaled coordinates
  void validate(const std::string& path) const;
};

/// Per-joint input rows (x, y, visible) plus the joint mask.
struct PreparedPose {
  std::array<Real, kNumJoints * 3> features{};
  std::array<bool, kNumJoints> mask{};
};

/// Fixed skeleton edges of the 18-joint layout.
const std::vector<std::pair<int, int>>& skeleton_edges();

/// Two masked graph-convolution layers over the skeleton, masked mean pool
/// over detected joints, then a linear projection.
class PoseEncoder {
 public:
  PoseEncoder(const std::string& name, const PoseEncoderConfig& cfg, ParameterSet& params, Rng& init);

  const PoseEncoderConfig& config() const { return cfg_; }
  /// Empty when no joint is detected.
  std::optional<PreparedPose> prepare(const Pose& pose) const;
  Tensor forward(const std::vector<const PreparedPose*>& poses) const;  // [B, out_dim]
  ModalityFeature encode(const std::optional<Pose>& pose) const;

  /// D^-1/2 (A + I) D^-1/2 restricted to the detected joints, row-major.
  static std::array<Real, kNumJoints * kNumJoints> normalized_adjacency(
      const std::array<bool, kNumJoints>& mask);

 private:
  PoseEncoderConfig cfg_;
  Tensor w1_, b1_, w2_, b2_, proj_w_, proj_b_;
};

// ---------------------------------------------------------------------------

struct VitConfig {
  int height = 32;
  int width = 32;
  int patch = 8;
  int channels = 3;
  int embed_dim = 64;
  int depth = 2;
  int heads = 4;
  int mlp_hidden = 128;

  void validate(const std::string& path) const;
  int num_patches() const { return (height / patch) * (width / patch); }
  int tokens() const { return num_patches() + 1; }
};

/// Softmax attention weights, [layers, heads, tokens, tokens] row-major.
struct AttentionMaps {
  int layers = 0;
  int heads = 0;
  int tokens = 0;
  std::vector<Real> values;

  Real at(int l, int h, int i, int j) const {
    return values[((static_cast<std::size_t>(l) * heads + h) * tokens + i) * tokens + j];
  }
};

/// Patch transformer: patchify, linear embedding, class token, learned
/// positional embedding, pre-norm blocks of multi-head self-attention and a
/// GELU MLP, and a final layer norm applied to the class token only.
class VitEncoder {
 public:
  VitEncoder(const std::string& name, const VitConfig& cfg, ParameterSet& params, Rng& init);

  const VitConfig& config() const { return cfg_; }
  Tensor prepare(const Image& image) const;  // [C, H, W]

  /// [B, C, H, W] -> [B, N, P*P*C]
  Tensor patchify(const Tensor& x) const;
  /// Final token states z_L, [B, N+1, D]. Attention maps of every sample
  /// are appended to `attention` when given.
  Tensor encode_tokens(const Tensor& x, std::vector<AttentionMaps>* attention = nullptr) const;
  /// y = LN(z_L at the class position), [B, D].
  Tensor readout(const Tensor& tokens) const;
  Tensor forward(const Tensor& x, std::vector<AttentionMaps>* attention = nullptr) const;

  std::pair<ModalityFeature, std::optional<AttentionMaps>> encode(const std::optional<Image>& image) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  Tensor attention(const Block& blk, const Tensor& z, std::vector<Real>* weights) const;

  VitConfig cfg_;
  Tensor embed_w_, embed_b_, cls_, pos_;
  std::vector<Block> blocks_;
  Tensor ln_g_, ln_b_;
};

// ---------------------------------------------------------------------------

struct DepthEncoderConfig {
  int input_size = 224;
  std::array<int, 5> channels = {8, 16, 16, 32, 32};
  int out_dim = 64;
  void validate(const std::string& path) const;
  /// Side length after each of the five stride-2 layers.
  std::array<int, 5> spatial_sizes() const;
};

/// Five stride-2 3x3 convolutions, each halving the map, then flatten and
/// linear projection.
class DepthEncoder {
 public:
  DepthEncoder(const std::string& name, const DepthEncoderConfig& cfg, ParameterSet& params, Rng& init);

  const DepthEncoderConfig& config() const { return cfg_; }
  Tensor prepare(const Image& depth) const;  // [1, S, S]
  /// [B, 1, S, S] -> [B, out_dim]. Intermediate shapes go to `trace` if given.
  Tensor forward(const Tensor& x, std::vector<Shape>* trace = nullptr) const;
  ModalityFeature encode(const std::optional<Image>& depth) const;

 private:
  DepthEncoderConfig cfg_;
  std::array<Tensor, 5> w_, b_;
  Tensor proj_w_, proj_b_;
};

}  // namespace emofuse
