#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bglab/checkpoint.hpp"
#include "bglab/datasets.hpp"
#include "bglab/gradcheck.hpp"
#include "bglab/image.hpp"
#include "bglab/manifest.hpp"
#include "bglab/ops.hpp"
#include "bglab/optim.hpp"
#include "bglab/rng.hpp"
#include "bglab/tensor.hpp"

namespace bglab {

enum class Variant { kBaseline, kSegmented, kDualBranchSum, kDualBranchStack, kWeightedFocus };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::kBaseline, Variant::kSegmented,
                                                     Variant::kDualBranchSum, Variant::kDualBranchStack,
                                                     Variant::kWeightedFocus};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kSegmented: return "segmented";
    case Variant::kDualBranchSum: return "dual-branch-sum";
    case Variant::kDualBranchStack: return "dual-branch-stack";
    case Variant::kWeightedFocus: return "weighted-focus";
  }
  return "unknown";
}

inline Variant parse_variant(const std::string& name) {
  for (const auto v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown model variant '" + name +
                              "' (expected baseline, segmented, dual-branch-sum, dual-branch-stack or weighted-focus)");
}

inline bool variant_needs_mask(Variant v) { return v != Variant::kBaseline; }

struct StageGeometry {
  std::array<std::size_t, 3> kernel{1, 3, 3};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 1, 1};

  friend bool operator==(const StageGeometry&, const StageGeometry&) = default;
};

/// Stem, four stages and a linear head. Stages 1-2 are spatial-only and
/// stages 3-4 add a temporal kernel.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_width = 8;
  std::array<std::size_t, 4> widths{8, 16, 32, 64};
  std::size_t frames = 8;
  std::size_t size = 32;
  std::size_t num_classes = 4;
  std::size_t alpha_width = 4;
  // stem, stage1, stage2, stage3, stage4
  std::array<StageGeometry, 5> schedule{
      StageGeometry{{1, 5, 5}, {1, 2, 2}, {0, 2, 2}}, StageGeometry{{1, 3, 3}, {1, 1, 1}, {0, 1, 1}},
      StageGeometry{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}}, StageGeometry{{3, 3, 3}, {1, 2, 2}, {1, 1, 1}},
      StageGeometry{{3, 3, 3}, {1, 2, 2}, {1, 1, 1}}};

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;

  void validate() const {
    if (in_channels == 0 || stem_width == 0 || alpha_width == 0)
      throw std::invalid_argument("backbone: channel widths must be positive");
    for (const auto w : widths)
      if (w == 0) throw std::invalid_argument("backbone: channel widths must be positive");
    if (num_classes < 2) throw std::invalid_argument("backbone: need at least two classes");
    if (frames == 0 || size == 0) throw std::invalid_argument("backbone: input geometry must be positive");
    Shape s{1, in_channels, frames, size, size};
    for (const auto& g : schedule) s = ops::conv3d_output_shape(s, 1, {g.kernel, g.stride, g.pad});
  }
};

/// Mask weighting with a fixed scalar: (1 + a) M + (1 - a)(1 - M).
inline Tensor weighted_mask(double alpha, const Tensor& mask) {
  if (!(std::abs(alpha) < 1)) throw std::invalid_argument("weighted_mask: |alpha| must be < 1");
  std::vector<double> out(mask.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = mask[i];
    if (m != 0 && m != 1) throw std::invalid_argument("weighted_mask: mask must be binary");
    out[i] = (1 + alpha) * m + (1 - alpha) * (1 - m);
  }
  return Tensor::from(mask.shape(), std::move(out));
}

/// Differentiable form: alpha is N x 1 (one scalar per sample), mask is
/// N x 1 x T x H x W or 1 x 1 x T x H x W. Output is N x 1 x T x H x W.
inline Tensor weighted_mask(const Tensor& alpha, const Tensor& mask) {
  if (alpha.rank() != 2 || alpha.dim(1) != 1)
    throw ShapeError("weighted_mask: alpha must be N x 1, got " + shape_str(alpha.shape()));
  if (mask.rank() != 5 || mask.dim(1) != 1)
    throw ShapeError("weighted_mask: mask must be N x 1 x T x H x W, got " + shape_str(mask.shape()));
  const std::size_t n = alpha.dim(0);
  if (mask.dim(0) != 1 && mask.dim(0) != n)
    throw ShapeError("weighted_mask: mask batch dimension (dim 0) is " + std::to_string(mask.dim(0)) +
                     " but alpha has " + std::to_string(n) + " samples");
  const std::size_t plane = mask.numel() / mask.dim(0);
  const bool per_sample = mask.dim(0) == n && n != 1;
  Shape out_shape = mask.shape();
  out_shape[0] = n;
  std::vector<double> out(n * plane);
  std::vector<double> sign(mask.numel());  // 2M - 1
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    const double m = mask[i];
    if (m != 0 && m != 1) throw std::invalid_argument("weighted_mask: mask must be binary");
    sign[i] = 2 * m - 1;
  }
  for (std::size_t s = 0; s < n; ++s) {
    const double a = alpha[s];
    const double* sg = sign.data() + (per_sample ? s * plane : 0);
    for (std::size_t i = 0; i < plane; ++i) out[s * plane + i] = 1 + a * sg[i];
  }
  return apply_op("weighted_mask", out_shape, std::move(out), {alpha, mask},
                  [=, sign = std::move(sign)](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    // the mask is data, never a parameter
                    if (!gin[0]) return;
                    for (std::size_t s = 0; s < n; ++s) {
                      const double* sg = sign.data() + (per_sample ? s * plane : 0);
                      double acc = 0;
                      for (std::size_t i = 0; i < plane; ++i) acc += g[s * plane + i] * sg[i];
                      (*gin[0])[s] += acc;
                    }
                  });
}

/// Nearest-neighbour downsampling of a N x 1 x T x H x W mask; output index i
/// reads source index floor(i * src / dst) on every axis.
inline Tensor downsample_mask(const Tensor& mask, std::size_t frames, std::size_t height, std::size_t width) {
  if (mask.rank() != 5 || mask.dim(1) != 1)
    throw ShapeError("downsample_mask: mask must be N x 1 x T x H x W, got " + shape_str(mask.shape()));
  if (frames == 0 || height == 0 || width == 0) throw std::invalid_argument("downsample_mask: zero-size target");
  const std::size_t st = mask.dim(2), sh = mask.dim(3), sw = mask.dim(4);
  if (frames > st || height > sh || width > sw)
    throw std::invalid_argument("downsample_mask: target " + shape_str({frames, height, width}) +
                                " exceeds source " + shape_str({st, sh, sw}));
  const std::size_t n = mask.dim(0);
  std::vector<double> out(n * frames * height * width);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const std::size_t src = ((b * st + t * st / frames) * sh + y * sh / height) * sw + x * sw / width;
          out[((b * frames + t) * height + y) * width + x] = mask[src];
        }
  return Tensor::from({n, 1, frames, height, width}, std::move(out));
}

inline bool is_binary(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0 || v == 1; });
}

/// Intermediate values of one forward pass, exposed for inspection.
struct ForwardTrace {
  Tensor logits;
  Tensor fused;                 // features entering stage 3
  std::optional<Tensor> alpha;  // weighted-focus only, N x 1 in (-1, 1)
};

class ActionModel {
 public:
  ActionModel(Variant variant, BackboneConfig config, std::uint64_t seed) : variant_(variant), cfg_(std::move(config)) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t branches =
        (variant_ == Variant::kDualBranchSum || variant_ == Variant::kDualBranchStack) ? 2 : 1;
    for (std::size_t b = 0; b < branches; ++b) {
      const std::string p = "branch" + std::to_string(b) + ".";
      prefixes_.push_back({make_block(p + "stem", cfg_.in_channels, cfg_.stem_width, cfg_.schedule[0], rng),
                           make_block(p + "stage1", cfg_.stem_width, cfg_.widths[0], cfg_.schedule[1], rng),
                           make_block(p + "stage2", cfg_.widths[0], cfg_.widths[1], cfg_.schedule[2], rng)});
    }
    const std::size_t stage3_in = variant_ == Variant::kDualBranchStack ? 2 * cfg_.widths[1] : cfg_.widths[1];
    stage3_ = make_block("stage3", stage3_in, cfg_.widths[2], cfg_.schedule[3], rng);
    stage4_ = make_block("stage4", cfg_.widths[2], cfg_.widths[3], cfg_.schedule[4], rng);
    head_weight_ = make_uniform("head.weight", {cfg_.num_classes, cfg_.widths[3]}, cfg_.widths[3], rng);
    head_bias_ = make_uniform("head.bias", {cfg_.num_classes}, cfg_.widths[3], rng);
    if (variant_ == Variant::kWeightedFocus) {
      alpha_conv_ = make_block("alpha.conv", cfg_.widths[0], cfg_.alpha_width,
                               StageGeometry{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}}, rng);
      alpha_weight_ = make_uniform("alpha.weight", {1, cfg_.alpha_width}, cfg_.alpha_width, rng);
      alpha_bias_ = make_uniform("alpha.bias", {1}, cfg_.alpha_width, rng);
    }
  }

  Variant variant() const { return variant_; }
  const BackboneConfig& config() const { return cfg_; }
  std::size_t stage3_in_channels() const { return stage3_.weight.tensor.dim(1); }

  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out;
    auto push_block = [&out](const ConvBlock& b) {
      out.push_back(b.weight);
      out.push_back(b.scale);
      out.push_back(b.shift);
    };
    for (const auto& p : prefixes_) {
      push_block(p.stem);
      push_block(p.stage1);
      push_block(p.stage2);
    }
    if (variant_ == Variant::kWeightedFocus) {
      push_block(*alpha_conv_);
      out.push_back(*alpha_weight_);
      out.push_back(*alpha_bias_);
    }
    push_block(stage3_);
    push_block(stage4_);
    out.push_back(head_weight_);
    out.push_back(head_bias_);
    return out;
  }

  /// Copies branch-0 prefix weights into branch 1 (dual-branch variants only).
  void tie_branches() {
    if (prefixes_.size() != 2) throw std::logic_error("tie_branches: model has a single branch");
    auto copy = [](const NamedTensor& src, NamedTensor& dst) {
      Tensor d = dst.tensor;
      std::copy(src.tensor.data().begin(), src.tensor.data().end(), d.mutable_data().begin());
    };
    for (auto [a, b] : {std::pair{&prefixes_[0].stem, &prefixes_[1].stem},
                        std::pair{&prefixes_[0].stage1, &prefixes_[1].stage1},
                        std::pair{&prefixes_[0].stage2, &prefixes_[1].stage2}}) {
      copy(a->weight, b->weight);
      copy(a->scale, b->scale);
      copy(a->shift, b->shift);
    }
  }

  /// Features after stage 2 of one branch.
  Tensor branch_features(std::size_t branch, const Tensor& video) const {
    const Prefix& p = prefixes_.at(branch);
    return p.stage2.forward(p.stage1.forward(p.stem.forward(video)));
  }

  ForwardTrace forward_trace(const Tensor& video, const std::optional<Tensor>& mask) const {
    check_input(video, mask);
    ForwardTrace trace;
    switch (variant_) {
      case Variant::kBaseline:
        trace.fused = branch_features(0, video);
        break;
      case Variant::kSegmented:
        trace.fused = branch_features(0, ops::mul_broadcast(video, *mask));
        break;
      case Variant::kDualBranchSum:
      case Variant::kDualBranchStack: {
        const Tensor original = branch_features(0, video);
        const Tensor segmented = branch_features(1, ops::mul_broadcast(video, *mask));
        trace.fused = variant_ == Variant::kDualBranchSum ? ops::add(original, segmented)
                                                          : ops::concat_channels({original, segmented});
        break;
      }
      case Variant::kWeightedFocus: {
        const Prefix& p = prefixes_[0];
        const Tensor early = p.stage1.forward(p.stem.forward(video));
        const Tensor raw = ops::linear(ops::global_avg_pool(alpha_conv_->forward(early)), alpha_weight_->tensor,
                                       alpha_bias_->tensor);
        trace.alpha = ops::scaled_sigmoid(raw);
        const Tensor features = p.stage2.forward(early);
        const Tensor small = downsample_mask(*mask, features.dim(2), features.dim(3), features.dim(4));
        trace.fused = ops::mul_broadcast(features, weighted_mask(*trace.alpha, small));
        break;
      }
    }
    const Tensor h = stage4_.forward(stage3_.forward(trace.fused));
    trace.logits = ops::linear(ops::global_avg_pool(h), head_weight_.tensor, head_bias_.tensor);
    return trace;
  }

  /// video: N x C x T x S x S. mask: N x 1 x T x S x S (or batch 1), binary;
  /// required by every variant except the baseline, which ignores it.
  Tensor forward(const Tensor& video, const std::optional<Tensor>& mask = std::nullopt) const {
    return forward_trace(video, mask).logits;
  }

 private:
  struct ConvBlock {
    NamedTensor weight, scale, shift;
    StageGeometry geo;

    Tensor forward(const Tensor& x) const {
      return ops::relu(ops::channel_affine(ops::conv3d(x, weight.tensor, std::nullopt, geo.stride, geo.pad),
                                           scale.tensor, shift.tensor));
    }
  };

  struct Prefix {
    ConvBlock stem, stage1, stage2;
  };

  static NamedTensor make_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    return {std::move(name), Tensor::uniform(std::move(shape), -bound, bound, rng, true)};
  }

  static ConvBlock make_block(const std::string& name, std::size_t in, std::size_t out, const StageGeometry& g,
                              Rng& rng) {
    const std::size_t fan_in = in * g.kernel[0] * g.kernel[1] * g.kernel[2];
    return {make_uniform(name + ".weight", {out, in, g.kernel[0], g.kernel[1], g.kernel[2]}, fan_in, rng),
            {name + ".scale", Tensor::full({out}, 1.0, true)},
            {name + ".shift", Tensor::zeros({out}, true)},
            g};
  }

  void check_input(const Tensor& video, const std::optional<Tensor>& mask) const {
    if (video.rank() != 5)
      throw ShapeError("forward: video must be N x C x T x H x W, got " + shape_str(video.shape()));
    if (video.dim(1) != cfg_.in_channels)
      throw ShapeError("forward: video channel dimension (dim 1) is " + std::to_string(video.dim(1)) +
                       ", model expects " + std::to_string(cfg_.in_channels));
    if (!variant_needs_mask(variant_)) return;
    if (!mask) throw std::invalid_argument("forward: variant " + variant_name(variant_) + " requires a mask");
    if (mask->rank() != 5 || mask->dim(1) != 1 || (mask->dim(0) != 1 && mask->dim(0) != video.dim(0)))
      throw ShapeError("forward: mask must be N x 1 x T x H x W, got " + shape_str(mask->shape()));
    for (std::size_t d = 2; d < 5; ++d)
      if (mask->dim(d) != video.dim(d))
        throw ShapeError("forward: mask dimension " + std::to_string(d) + " is " + std::to_string(mask->dim(d)) +
                         " but video has " + std::to_string(video.dim(d)));
    if (!is_binary(*mask)) throw std::invalid_argument("forward: mask must be binary");
  }

  Variant variant_;
  BackboneConfig cfg_;
  std::vector<Prefix> prefixes_;
  ConvBlock stage3_, stage4_;
  NamedTensor head_weight_, head_bias_;
  std::optional<ConvBlock> alpha_conv_;
  std::optional<NamedTensor> alpha_weight_, alpha_bias_;
};

/// Argmax with ties broken by the lowest index.
inline std::size_t argmax_lowest(std::span<const double> row) {
  if (row.empty()) throw std::invalid_argument("argmax: empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

/// One model input: video 1 x C x T x S x S in [0, 1], optional binary mask
/// 1 x 1 x T x S x S and the class index.
struct Example {
  Tensor video;
  std::optional<Tensor> mask;
  std::size_t label = 0;
};

/// Samples cfg.frames frames, resizes to cfg.size and scales pixels to [0, 1].
inline Example make_example(const FrameSequence& frames, const std::optional<MaskSequence>& masks, std::size_t label,
                            const BackboneConfig& cfg) {
  const FrameSequence sampled = resize_nearest(sample_frames(frames, cfg.frames), cfg.size, cfg.size);
  const std::size_t plane = cfg.size * cfg.size;
  std::vector<double> values(3 * cfg.frames * plane);
  for (std::size_t t = 0; t < cfg.frames; ++t)
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        values[(c * cfg.frames + t) * plane + i] = sampled.pixels[(t * plane + i) * 3 + c] / 255.0;
  Example ex{Tensor::from({1, 3, cfg.frames, cfg.size, cfg.size}, std::move(values)), std::nullopt, label};
  if (masks) {
    require_same_geometry(frames, *masks, "make_example");
    const MaskSequence sm = sample_masks(*masks, cfg.frames);
    std::vector<double> mv(cfg.frames * plane);
    for (std::size_t t = 0; t < cfg.frames; ++t)
      for (std::size_t y = 0; y < cfg.size; ++y)
        for (std::size_t x = 0; x < cfg.size; ++x)
          mv[(t * cfg.size + y) * cfg.size + x] = sm.at(t, y * sm.height / cfg.size, x * sm.width / cfg.size);
    ex.mask = Tensor::from({1, 1, cfg.frames, cfg.size, cfg.size}, std::move(mv));
  }
  return ex;
}

/// Stacks examples along the batch dimension.
inline std::pair<Tensor, std::optional<Tensor>> stack_batch(const std::vector<const Example*>& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_batch: empty batch");
  Shape vs = batch[0]->video.shape();
  vs[0] = batch.size();
  std::vector<double> video;
  video.reserve(shape_numel(vs));
  const bool masked = batch[0]->mask.has_value();
  std::vector<double> mask;
  for (const auto* ex : batch) {
    if (ex->video.shape() != batch[0]->video.shape()) throw ShapeError("stack_batch: inconsistent video shapes");
    video.insert(video.end(), ex->video.data().begin(), ex->video.data().end());
    if (masked) {
      if (!ex->mask) throw std::invalid_argument("stack_batch: mixed masked and unmasked examples");
      mask.insert(mask.end(), ex->mask->data().begin(), ex->mask->data().end());
    }
  }
  std::optional<Tensor> m;
  if (masked) {
    Shape ms = batch[0]->mask->shape();
    ms[0] = batch.size();
    m = Tensor::from(ms, std::move(mask));
  }
  return {Tensor::from(vs, std::move(video)), std::move(m)};
}

inline std::size_t predict_class(const ActionModel& model, const Example& ex) {
  const Tensor logits = model.forward(ex.video, ex.mask);
  return argmax_lowest(logits.data().subspan(0, logits.dim(1)));
}

/// Batched prediction; returns one class index per example.
inline std::vector<std::size_t> predict_classes(const ActionModel& model, const std::vector<Example>& examples,
                                                std::size_t batch_size = 20) {
  std::vector<std::size_t> out;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) batch.push_back(&examples[i]);
    const auto [video, mask] = stack_batch(batch);
    const Tensor logits = model.forward(video, variant_needs_mask(model.variant()) ? mask : std::nullopt);
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(argmax_lowest(logits.data().subspan(i * c, c)));
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 20;
  double lr = 1e-3;
  std::size_t patience = 40;
  double threshold = 1e-2;
  double lr_factor = 0.5;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<NamedTensor> best_weights;  // detached copies
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
};

inline double mean_loss(const ActionModel& model, const std::vector<Example>& examples, std::size_t batch_size) {
  double total = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<const Example*> batch;
    std::vector<std::size_t> labels;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
      batch.push_back(&examples[i]);
      labels.push_back(examples[i].label);
    }
    const auto [video, mask] = stack_batch(batch);
    const Tensor logits = model.forward(video, variant_needs_mask(model.variant()) ? mask : std::nullopt);
    total += ops::softmax_cross_entropy(logits, labels).item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(examples.size());
}

/// Seeded mini-batch Adam with reduce-on-plateau on validation loss (training
/// loss when `val` is empty). Leaves the model holding the best-validation
/// weights, which are also returned.
inline TrainResult train(ActionModel& model, const std::vector<Example>& train_set, const std::vector<Example>& val,
                         const TrainConfig& cfg) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  for (const auto& ex : train_set) {
    if (variant_needs_mask(model.variant()) && !ex.mask)
      throw std::invalid_argument("train: variant " + variant_name(model.variant()) + " needs a mask for every item");
    if (ex.label >= model.config().num_classes) throw std::out_of_range("train: label out of range");
  }
  const auto params = model.parameters();
  Adam adam(params, AdamOptions{.lr = cfg.lr});
  PlateauScheduler scheduler(PlateauOptions{.patience = cfg.patience, .threshold = cfg.threshold, .factor = cfg.lr_factor});
  Rng rng(derive_seed(cfg.seed, "train/order"));
  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  auto snapshot = [&params] {
    std::vector<NamedTensor> out;
    for (const auto& p : params) out.push_back({p.name, p.tensor.detach()});
    return out;
  };
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Example*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&train_set[order[i]]);
        labels.push_back(train_set[order[i]].label);
      }
      const auto [video, mask] = stack_batch(batch);
      adam.zero_grad();
      const Tensor loss = ops::softmax_cross_entropy(
          model.forward(video, variant_needs_mask(model.variant()) ? mask : std::nullopt), labels);
      backward(loss);
      adam.step();
      total += loss.item() * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train_set.size());
    rec.val_loss = val.empty() ? rec.train_loss : mean_loss(model, val, cfg.batch_size);
    rec.lr = adam.lr();
    result.history.push_back(rec);
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.best_weights = snapshot();
    }
    scheduler.observe(rec.val_loss, adam);
  }
  adam.zero_grad();
  if (!result.best_weights.empty()) assign_checkpoint(params, result.best_weights);
  return result;
}

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,train_loss,val_loss,lr\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    os << buf;
  }
}

}  // namespace bglab
