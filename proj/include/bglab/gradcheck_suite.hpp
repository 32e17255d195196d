#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bglab/gradcheck.hpp"
#include "bglab/models.hpp"
#include "bglab/ops.hpp"

namespace bglab {

struct SuiteCheck {
  std::string name;
  GradCheckReport report;
};

/// Miniature backbone used for full-coordinate model checks.
inline BackboneConfig miniature_backbone() {
  BackboneConfig c;
  c.stem_width = 2;
  c.widths = {2, 3, 4, 4};
  c.frames = 4;
  c.size = 8;
  c.num_classes = 3;
  c.alpha_width = 2;
  return c;
}

namespace suite_detail {

inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, Tensor::uniform(y.shape(), -1, 1, rng)));
}

}  // namespace suite_detail

/// Every primitive plus all five model variants end to end, all coordinates.
inline std::vector<SuiteCheck> run_gradcheck_suite(const GradCheckOptions& opts = {}) {
  using suite_detail::weighted_sum;
  std::vector<SuiteCheck> out;
  auto check = [&](std::string name, const std::vector<NamedTensor>& params, const std::function<Tensor()>& f) {
    out.push_back({std::move(name), grad_check(params, f, opts)});
  };
  Rng rng(1);
  auto x = Tensor::uniform({2, 2, 3, 5, 5}, -1, 1, rng, true);
  auto w = Tensor::uniform({3, 2, 2, 3, 3}, -1, 1, rng, true);
  auto b = Tensor::uniform({3}, -1, 1, rng, true);
  check("conv3d", {{"x", x}, {"w", w}, {"b", b}},
        [&] { return weighted_sum(ops::conv3d(x, w, b, {1, 2, 2}, {1, 1, 1}), 1); });
  ops::Window3d win{{1, 2, 2}, {1, 2, 2}, {0, 0, 0}};
  ops::Window3d padded{{2, 3, 3}, {1, 2, 2}, {1, 1, 1}};
  check("pool3d_max", {{"x", x}}, [&] { return weighted_sum(ops::pool3d(x, ops::PoolKind::kMax, win), 2); });
  check("pool3d_avg", {{"x", x}}, [&] { return weighted_sum(ops::pool3d(x, ops::PoolKind::kAvg, padded), 3); });

  auto in = Tensor::uniform({3, 5}, -1, 1, rng, true);
  auto lw = Tensor::uniform({4, 5}, -1, 1, rng, true);
  auto lb = Tensor::uniform({4}, -1, 1, rng, true);
  check("linear", {{"x", in}, {"w", lw}, {"b", lb}}, [&] { return weighted_sum(ops::linear(in, lw, lb), 4); });

  auto a = Tensor::uniform({2, 3, 4}, -2, 2, rng, true);
  auto c = Tensor::uniform({2, 3, 4}, -2, 2, rng, true);
  check("relu", {{"a", a}}, [&] { return weighted_sum(ops::relu(a), 5); });
  check("scaled_sigmoid", {{"a", a}}, [&] { return weighted_sum(ops::scaled_sigmoid(a), 6); });
  check("add", {{"a", a}, {"b", c}}, [&] { return weighted_sum(ops::add(a, c), 7); });
  check("mul", {{"a", a}, {"b", c}}, [&] { return weighted_sum(ops::mul(a, c), 8); });

  auto v = Tensor::uniform({2, 3, 2, 3, 3}, -1, 1, rng, true);
  auto u = Tensor::uniform({2, 2, 2, 3, 3}, -1, 1, rng, true);
  auto m = Tensor::uniform({2, 1, 2, 3, 3}, -1, 1, rng, true);
  auto scale = Tensor::uniform({3}, 0.5, 1.5, rng, true);
  auto shift = Tensor::uniform({3}, -1, 1, rng, true);
  check("concat_channels", {{"x", v}, {"y", u}}, [&] { return weighted_sum(ops::concat_channels({v, u}), 9); });
  check("global_avg_pool", {{"x", v}}, [&] { return weighted_sum(ops::global_avg_pool(v), 10); });
  check("mul_broadcast", {{"x", v}, {"m", m}}, [&] { return weighted_sum(ops::mul_broadcast(v, m), 11); });
  check("channel_affine", {{"x", v}, {"scale", scale}, {"shift", shift}},
        [&] { return weighted_sum(ops::channel_affine(v, scale, shift), 12); });

  auto logits = Tensor::uniform({4, 6}, -2, 2, rng, true);
  const std::vector<std::size_t> targets{0, 5, 2, 2};
  check("softmax_cross_entropy", {{"logits", logits}}, [&] { return ops::softmax_cross_entropy(logits, targets); });

  auto alpha = Tensor::uniform({2, 1}, -2, 2, rng, true);
  std::vector<double> bits(2 * 2 * 3 * 3);
  for (auto& bit : bits) bit = rng.bernoulli(0.5) ? 1 : 0;
  const Tensor mask = Tensor::from({2, 1, 2, 3, 3}, std::move(bits));
  check("weighted_mask", {{"alpha", alpha}},
        [&] { return weighted_sum(weighted_mask(ops::scaled_sigmoid(alpha), mask), 13); });

  const BackboneConfig cfg = miniature_backbone();
  for (const Variant variant : kAllVariants) {
    ActionModel model(variant, cfg, 11);
    Rng shift_rng(13);
    for (const auto& p : model.parameters()) {
      if (!p.name.ends_with(".shift")) continue;
      Tensor t = p.tensor;
      for (auto& value : t.mutable_data()) value = shift_rng.uniform(0.05, 0.3);
    }
    Rng data_rng(12);
    const Tensor video = Tensor::uniform({2, cfg.in_channels, cfg.frames, cfg.size, cfg.size}, 0, 1, data_rng);
    std::vector<double> mbits(2 * cfg.frames * cfg.size * cfg.size);
    for (auto& bit : mbits) bit = data_rng.bernoulli(0.4) ? 1 : 0;
    const Tensor vmask = Tensor::from({2, 1, cfg.frames, cfg.size, cfg.size}, std::move(mbits));
    const std::vector<std::size_t> labels{0, 2};
    check("model/" + variant_name(variant), model.parameters(),
          [&] { return ops::softmax_cross_entropy(model.forward(video, vmask), labels); });
  }
  return out;
}

}  // namespace bglab
