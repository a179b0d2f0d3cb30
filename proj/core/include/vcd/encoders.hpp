// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vcd/dataset.hpp"
#include "vcd/networks.hpp"

namespace vcd {

struct EncoderTrainConfig {
  int epochs = 30;
  int batch = 16;
  double lr = 1e-3;
  int crop = 64;
  // Scale of the cosine-softmax logits used for speaker classification.
  double cosine_scale = 10.0;
};

struct EpochLoss {
  int epoch = 0;
  double mean_loss = 0.0;
};

// Cosine-softmax speaker classification over the speakers present in `indices`.
std::vector<EpochLoss> train_speaker_encoder(SpeakerEncoder& enc, const Dataset& ds, std::span<const std::size_t> indices,
                                             const EncoderTrainConfig& cfg, std::uint64_t seed);
// Frame-level content classification when labels exist (n_classes > 0), otherwise mel reconstruction.
std::vector<EpochLoss> train_content_encoder(ContentEncoder& enc, const Dataset& ds,
                                             std::span<const std::size_t> indices, const EncoderTrainConfig& cfg,
                                             std::uint64_t seed);
// Fraction of frames whose argmax class matches the label.
double content_accuracy(const ContentEncoder& enc, const Dataset& ds, std::span<const std::size_t> indices);

Tensor speaker_embedding(const SpeakerEncoder& enc, const MelSpectrogram& mel);  // [embedding_dim]
Tensor content_embedding(const ContentEncoder& enc, const MelSpectrogram& mel);  // [bottleneck, frames]
double cosine(std::span<const double> a, std::span<const double> b);

// Frozen-encoder outputs for every dataset item, computed from the full utterance.
struct Conditioning {
  std::vector<Tensor> speaker;  // [speaker_dim]
  std::vector<Tensor> content;  // [content_dim, frames]
};
Conditioning compute_conditioning(const Dataset& ds, const SpeakerEncoder& spk, const ContentEncoder& content);

// Crops of x0, speaker and content conditioning for a minibatch.
struct Batch {
  Tensor x0;  // [B, n_mels, crop]
  Tensor s;   // [B, speaker_dim]
  Tensor p;   // [B, content_dim, crop]
  std::vector<std::size_t> items;
  std::vector<int> starts;
};
Batch make_batch(const Dataset& ds, const Conditioning& cond, std::span<const std::size_t> items, int crop, Rng& rng);

}  // namespace vcd
