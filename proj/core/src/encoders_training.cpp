// SPDX-License-Identifier: Apache-2.0
#include "vcd/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "vcd/error.hpp"
#include "vcd/optim.hpp"

namespace vcd {

namespace {

std::vector<std::size_t> shuffled(std::span<const std::size_t> idx, Rng& rng) {
  std::vector<std::size_t> v(idx.begin(), idx.end());
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  return v;
}

Tensor crop_batch(const Dataset& ds, std::span<const std::size_t> items, int crop, Rng& rng, std::vector<int>* starts) {
  std::vector<MelSpectrogram> mels;
  for (std::size_t i : items) {
    const auto& m = ds.items[i].mel;
    const int b = random_crop_start(m.frames, crop, rng);
    if (starts) starts->push_back(b);
    mels.push_back(crop_or_pad(m, b, crop));
  }
  return mels_to_tensor(mels);
}

void check_finite(double loss, const char* what, int epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(what) + " training diverged (non-finite loss) in epoch " + std::to_string(epoch));
  }
}

}  // namespace

std::vector<EpochLoss> train_speaker_encoder(SpeakerEncoder& enc, const Dataset& ds, std::span<const std::size_t> indices,
                                             const EncoderTrainConfig& cfg, std::uint64_t seed) {
  if (indices.empty()) throw DataError("no utterances for speaker-encoder training");
  std::map<int, int> class_of;
  for (std::size_t i : indices) class_of.emplace(ds.items[i].speaker, 0);
  int next = 0;
  for (auto& [_, c] : class_of) c = next++;
  Rng rng(seed);
  nn::ParamSet head_params;
  nn::Linear head(head_params, "classes", enc.config().embedding_dim, next, rng, false);
  auto params = enc.params().vars();
  params.push_back(head.weight);
  nn::Adam opt(params, {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  std::vector<EpochLoss> log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(indices, rng);
    double total = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::span<const std::size_t> items(order.data() + b, std::min<std::size_t>(cfg.batch, order.size() - b));
      const Tensor x = crop_batch(ds, items, cfg.crop, rng, nullptr);
      std::vector<int> labels;
      for (std::size_t i : items) labels.push_back(class_of.at(ds.items[i].speaker));
      opt.zero_grad();
      const Var e = enc.embed(ad::constant(x));
      const Var logits = ad::scale(ad::linear(e, ad::l2_normalize_rows(head.weight), Var()), cfg.cosine_scale);
      const Var loss = ad::softmax_cross_entropy(logits, labels);
      check_finite(loss.item(), "speaker encoder", epoch);
      loss.backward();
      opt.step();
      total += loss.item();
      ++steps;
    }
    log.push_back({epoch, total / steps});
  }
  return log;
}

std::vector<EpochLoss> train_content_encoder(ContentEncoder& enc, const Dataset& ds,
                                             std::span<const std::size_t> indices, const EncoderTrainConfig& cfg,
                                             std::uint64_t seed) {
  if (indices.empty()) throw DataError("no utterances for content-encoder training");
  const bool supervised = enc.config().n_classes > 0;
  Rng rng(seed);
  nn::Adam opt(enc.params().vars(), {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  std::vector<EpochLoss> log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(indices, rng);
    double total = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::span<const std::size_t> items(order.data() + b, std::min<std::size_t>(cfg.batch, order.size() - b));
      std::vector<int> starts;
      const Tensor x = crop_batch(ds, items, cfg.crop, rng, &starts);
      opt.zero_grad();
      const Var xv = ad::constant(x);
      const Var out = enc.head(enc.encode(xv));
      Var loss;
      if (supervised) {
        std::vector<int> labels;
        for (std::size_t k = 0; k < items.size(); ++k) {
          const auto& lab = ds.items[items[k]].labels;
          if (lab.empty()) throw DataError("content labels missing for " + ds.items[items[k]].id);
          for (int f = 0; f < cfg.crop; ++f) labels.push_back(lab[std::min<std::size_t>(starts[k] + f, lab.size() - 1)]);
        }
        loss = ad::frame_cross_entropy(out, labels);
      } else {
        loss = ad::l1_loss(out, xv);
      }
      check_finite(loss.item(), "content encoder", epoch);
      loss.backward();
      opt.step();
      total += loss.item();
      ++steps;
    }
    log.push_back({epoch, total / steps});
  }
  return log;
}

double content_accuracy(const ContentEncoder& enc, const Dataset& ds, std::span<const std::size_t> indices) {
  if (enc.config().n_classes <= 0) throw ParameterError("content accuracy needs a classification head");
  ad::NoGradGuard guard;
  long ok = 0, total = 0;
  for (std::size_t i : indices) {
    const auto& e = ds.items[i];
    const Tensor logits = enc.head(enc.encode(ad::constant(mel_to_tensor(e.mel)))).value();
    const int C = logits.dim(1), F = logits.dim(2);
    for (int f = 0; f < F; ++f) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (logits[static_cast<std::size_t>(c) * F + f] > logits[static_cast<std::size_t>(best) * F + f]) best = c;
      ok += best == e.labels[static_cast<std::size_t>(f)];
      ++total;
    }
  }
  return total ? static_cast<double>(ok) / total : 0.0;
}

Tensor speaker_embedding(const SpeakerEncoder& enc, const MelSpectrogram& mel) {
  ad::NoGradGuard guard;
  Tensor e = enc.embed(ad::constant(mel_to_tensor(mel))).value();
  e.reshape({e.dim(1)});
  return e;
}

Tensor content_embedding(const ContentEncoder& enc, const MelSpectrogram& mel) {
  ad::NoGradGuard guard;
  Tensor p = enc.encode(ad::constant(mel_to_tensor(mel))).value();
  p.reshape({p.dim(1), p.dim(2)});
  return p;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::max(std::sqrt(aa * bb), 1e-12);
}

Conditioning compute_conditioning(const Dataset& ds, const SpeakerEncoder& spk, const ContentEncoder& content) {
  Conditioning c;
  for (const auto& e : ds.items) {
    c.speaker.push_back(speaker_embedding(spk, e.mel));
    c.content.push_back(content_embedding(content, e.mel));
  }
  return c;
}

Batch make_batch(const Dataset& ds, const Conditioning& cond, std::span<const std::size_t> items, int crop, Rng& rng) {
  if (items.empty()) throw ShapeError("empty batch");
  Batch b;
  b.items.assign(items.begin(), items.end());
  const int B = static_cast<int>(items.size());
  const int S = cond.speaker.at(items[0]).dim(0);
  const int P = cond.content.at(items[0]).dim(0);
  std::vector<MelSpectrogram> mels;
  b.s = Tensor({B, S});
  b.p = Tensor({B, P, crop});
  for (int k = 0; k < B; ++k) {
    const std::size_t i = items[static_cast<std::size_t>(k)];
    const auto& mel = ds.items[i].mel;
    const int start = random_crop_start(mel.frames, crop, rng);
    b.starts.push_back(start);
    mels.push_back(crop_or_pad(mel, start, crop));
    std::copy_n(cond.speaker[i].data(), S, b.s.data() + static_cast<std::size_t>(k) * S);
    const Tensor& p = cond.content[i];
    const int F = p.dim(1);
    for (int c = 0; c < P; ++c)
      for (int f = 0; f < crop; ++f) {
        b.p[(static_cast<std::size_t>(k) * P + c) * crop + f] = p[static_cast<std::size_t>(c) * F + std::min(start + f, F - 1)];
      }
  }
  b.x0 = mels_to_tensor(mels);
  return b;
}

}  // namespace vcd
