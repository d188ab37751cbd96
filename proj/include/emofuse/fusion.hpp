#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "emofuse/categories.hpp"
#include "emofuse/encoders.hpp"

namespace emofuse {

/// Discrete head variant. Sigmoid26 scores every category independently;
/// Softmax4 is a single-label head over the four basic emotions.
enum class DiscreteHead { Sigmoid26, Softmax4 };

struct FusionConfig {
  int stream_dim = 64;            // width of every pre-fusion stream
  int embrace_dim = 64;           // D_e
  std::array<double, 2> modality_probs = {0.5, 0.5};  // body, pose
  int fused_dim = 256;
  int n_discrete = static_cast<int>(kNumDiscrete);
  int n_continuous = static_cast<int>(kNumContinuous);
  bool deterministic_eval = true;
  DiscreteHead head = DiscreteHead::Sigmoid26;

  void validate(const std::string& path) const;
  int discrete_outputs() const { return head == DiscreteHead::Softmax4 ? 4 : n_discrete; }
};

/// Per-coordinate modality choice of the last stochastic embracement,
/// [batch][D_e], holding 0 (body), 1 (pose) or -1 where no modality was
/// present or the output was an expectation.
struct EmbraceState {
  std::vector<std::vector<int>> selection;
};

/// Docking layers for body and pose plus the embracement step.
class Embrace {
 public:
  Embrace(const std::string& name, const FusionConfig& cfg, ParameterSet& params, Rng& init);

  /// Docked features relu(W f + b), [rows, D_e].
  Tensor dock(int modality, const Tensor& features) const;

  /// Stochastic selection when `training` (or when deterministic_eval is
  /// off), otherwise the probability-weighted expectation. Samples with
  /// neither input present get no output row.
  StreamBatch forward(const StreamBatch& body, const StreamBatch& pose, bool training, Rng& rng,
                      EmbraceState* state = nullptr) const;

  ModalityFeature embrace(const ModalityFeature& body, const ModalityFeature& pose, bool training, Rng& rng,
                          EmbraceState* state = nullptr) const;

 private:
  FusionConfig cfg_;
  std::array<Tensor, 2> w_, b_;
};

/// Concatenation of the five streams followed by the linear projection to
/// fused_dim. Absent streams take a learned per-stream embedding.
class Fusion {
 public:
  Fusion(const std::string& name, const FusionConfig& cfg, ParameterSet& params, Rng& init);

  /// Streams in Modality order. Throws if some sample has no stream.
  Tensor forward(const std::array<StreamBatch, kNumStreams>& streams) const;  // [B, fused_dim]
  /// The concatenation before projection, [B, 5 * stream_dim].
  Tensor concat(const std::array<StreamBatch, kNumStreams>& streams) const;

  Tensor fuse_concat(const std::array<ModalityFeature, kNumStreams>& bundle) const;  // [fused_dim]

  const Tensor& absent_embedding(Modality m) const { return absent_[static_cast<std::size_t>(m)]; }

 private:
  FusionConfig cfg_;
  std::array<Tensor, kNumStreams> absent_;
  Tensor proj_w_, proj_b_;
};

struct HeadOutput {
  Tensor disc;  // [B, 26] sigmoid scores, or [B, 4] softmax in the 4-class mode
  Tensor cont;  // [B, 3] sigmoid scores
};

class Heads {
 public:
  Heads(const std::string& name, const FusionConfig& cfg, ParameterSet& params, Rng& init);

  HeadOutput forward(const Tensor& fused) const;

 private:
  FusionConfig cfg_;
  Tensor disc_w_, disc_b_, cont_w_, cont_b_;
};

/// Converts single-sample features into one-row stream batches.
StreamBatch to_stream(const ModalityFeature& f);

}  // namespace emofuse
