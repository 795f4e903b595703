#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mus/dataset.hpp"
#include "mus/nn.hpp"

namespace mus {

inline constexpr int kFeatureDim = 256;

/// Five stride-2 3x3 convolutions, each followed by ReLU.
struct EncoderConfig {
  static constexpr int kLayers = 5;
  int input_size = 256;  // square input; must be a positive multiple of 2^kLayers
  std::array<int, kLayers + 1> channels{3, 16, 32, 64, 128, 256};

  int latent_size() const { return input_size >> kLayers; }
  /// Throws std::invalid_argument when the configuration breaks the shape chain.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Dense channel-major image: data[(c*height + y)*width + x].
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

struct AutoencoderWeights {
  EncoderConfig config;
  std::uint64_t seed = 0;
  nn::Network<float> net;

  /// Zero weights and biases in the configured shape.
  static AutoencoderWeights zeros(const EncoderConfig& config);
  /// Fan-in scaled uniform initialization driven by `seed`.
  static AutoencoderWeights initialized(const EncoderConfig& config, std::uint64_t seed);

  bool all_finite() const;
};

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 32;
  int max_epochs = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossHistory {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
  int best_epoch = -1;  // 0-based index into the curves
};

struct FeatureVector {
  std::array<float, kFeatureDim> values{};
};

/// Bilinear resize (half-pixel centres) of a slice to size x size, one channel.
std::vector<float> resize_slice(const SliceImage& slice, int size);

/// Resized slice replicated into the three encoder input channels.
Tensor3 to_encoder_input(const SliceImage& slice, int size);

Tensor3 encode(const Tensor3& image, const AutoencoderWeights& weights);
Tensor3 decode(const Tensor3& latent, const AutoencoderWeights& weights);

/// Post-ReLU output of every encoder layer, first to last.
std::vector<Tensor3> encode_layers(const Tensor3& image, const AutoencoderWeights& weights);

double reconstruction_loss(std::span<const float> x, std::span<const float> x_hat);
double reconstruction_loss(const Tensor3& x, const Tensor3& x_hat);

/// Spatial mean of each latent channel.
FeatureVector pool_latent(const Tensor3& latent);

FeatureVector extract_feature(const Tensor3& image, const AutoencoderWeights& weights);
FeatureVector extract_feature(const SliceImage& slice, const AutoencoderWeights& weights);

/// Batched extraction; same values as calling extract_feature per slice.
std::vector<FeatureVector> extract_features(std::span<const SliceImage* const> slices,
                                            const AutoencoderWeights& weights, int batch_size = 32);

/// Keeps the weights of the epoch with the lowest validation loss
/// (earliest epoch on ties).
class CheckpointSelector {
public:
  /// Returns true when `val_loss` became the new best.
  bool offer(int epoch, double val_loss, const AutoencoderWeights& weights);
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  const AutoencoderWeights& best() const;

private:
  int best_epoch_ = -1;
  double best_loss_ = 0.0;
  AutoencoderWeights best_;
};

struct TrainResult {
  AutoencoderWeights weights;  // min-validation checkpoint
  LossHistory history;
};

using EpochCallback = std::function<void(int epoch, double train_mse, double val_mse)>;

/// Adam on mean squared reconstruction error; deterministic given config.seed.
/// Throws on empty inputs or a non-finite loss.
TrainResult train_autoencoder(std::span<const SliceImage* const> train_slices,
                              std::span<const SliceImage* const> val_slices, const EncoderConfig& encoder,
                              const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean reconstruction MSE over a slice set.
double evaluate_reconstruction(std::span<const SliceImage* const> slices, const AutoencoderWeights& weights,
                               int batch_size = 32);

/// Binary checkpoint: magic, JSON header (config, seed, tensor shapes), float32 tensors.
void save_checkpoint(const AutoencoderWeights& weights, const std::filesystem::path& path);
/// Rejects checkpoints whose stored config differs from `expected`.
AutoencoderWeights load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected = {});

}  // namespace mus
