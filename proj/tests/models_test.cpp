#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "bglab/models.hpp"
#include "bglab/sandbox.hpp"

using namespace bglab;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.stem_width = 2;
  c.widths = {2, 3, 4, 4};
  c.frames = 4;
  c.size = 8;
  c.num_classes = 3;
  c.alpha_width = 2;
  return c;
}

Tensor random_video(std::size_t n, const BackboneConfig& c, Rng& rng) {
  return Tensor::uniform({n, c.in_channels, c.frames, c.size, c.size}, 0, 1, rng);
}

Tensor random_mask(std::size_t n, const BackboneConfig& c, Rng& rng) {
  std::vector<double> v(n * c.frames * c.size * c.size);
  for (auto& x : v) x = rng.bernoulli(0.4) ? 1 : 0;
  return Tensor::from({n, 1, c.frames, c.size, c.size}, std::move(v));
}

// Moves affine shifts off zero so no ReLU input sits exactly on the kink.
void offset_shifts(const ActionModel& model, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : model.parameters()) {
    if (!p.name.ends_with(".shift")) continue;
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v = rng.uniform(0.05, 0.3);
  }
}

class VariantTest : public ::testing::TestWithParam<Variant> {};

}  // namespace

TEST(WeightedMask, ZeroAlphaIsIdentity) {
  Rng rng(1);
  const Tensor m = random_mask(1, tiny_config(), rng);
  const Tensor w = weighted_mask(0.0, m);
  for (const double v : w.data()) EXPECT_EQ(v, 1.0);
}

TEST(WeightedMask, ForegroundAndBackgroundValues) {
  const Tensor m = Tensor::from({1, 1, 1, 1, 2}, {1, 0});
  for (const double a : {-0.9, -0.3, 0.25, 0.75}) {
    const Tensor w = weighted_mask(a, m);
    EXPECT_DOUBLE_EQ(w[0], 1 + a);
    EXPECT_DOUBLE_EQ(w[1], 1 - a);
  }
}

TEST(WeightedMask, AlphaNearOneDoublesHumanAndDropsBackground) {
  const Tensor m = Tensor::from({1, 1, 1, 2, 2}, {1, 0, 0, 1});
  const Tensor w = weighted_mask(0.999999, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(w[i], 2 * m[i], 1e-5);
}

TEST(WeightedMask, RejectsOutOfRangeAlphaAndNonBinaryMask) {
  const Tensor m = Tensor::from({1, 1, 1, 1, 2}, {1, 0});
  EXPECT_THROW(weighted_mask(1.0, m), std::invalid_argument);
  EXPECT_THROW(weighted_mask(-1.0, m), std::invalid_argument);
  EXPECT_THROW(weighted_mask(0.5, Tensor::from({1, 1, 1, 1, 2}, {0.5, 0})), std::invalid_argument);
}

TEST(WeightedMask, TensorFormMatchesScalarFormPerSample) {
  Rng rng(2);
  const auto c = tiny_config();
  const Tensor m = random_mask(3, c, rng);
  const Tensor alpha = Tensor::from({3, 1}, {-0.4, 0.0, 0.6});
  const Tensor w = weighted_mask(alpha, m);
  const std::size_t plane = m.numel() / 3;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<double> one(m.data().begin() + s * plane, m.data().begin() + (s + 1) * plane);
    const Tensor ref = weighted_mask(alpha[s], Tensor::from({1, 1, c.frames, c.size, c.size}, one));
    for (std::size_t i = 0; i < plane; ++i) EXPECT_DOUBLE_EQ(w[s * plane + i], ref[i]);
  }
}

TEST(WeightedMask, BroadcastsSingleMaskOverBatch) {
  const Tensor m = Tensor::from({1, 1, 1, 1, 2}, {1, 0});
  const Tensor w = weighted_mask(Tensor::from({2, 1}, {0.5, -0.5}), m);
  EXPECT_EQ(w.shape(), (Shape{2, 1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(w[0], 1.5);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
  EXPECT_DOUBLE_EQ(w[2], 0.5);
  EXPECT_DOUBLE_EQ(w[3], 1.5);
}

TEST(WeightedMask, AlphaGradientChecks) {
  Rng rng(3);
  const Tensor m = random_mask(2, tiny_config(), rng);
  const Tensor alpha = Tensor::from({2, 1}, {0.3, -0.2}, true);
  const Tensor x = Tensor::uniform(m.shape(), -1, 1, rng);
  const auto report = grad_check({{"alpha", alpha}}, [&] { return ops::sum(ops::mul(weighted_mask(alpha, m), x)); });
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(DownsampleMask, NearestTopLeftOfBlock) {
  std::vector<double> v(16, 0);
  v[0] = 1;   // (0,0)
  v[2] = 1;   // (0,2)
  v[5] = 1;   // (1,1), not a block corner
  v[10] = 1;  // (2,2)
  const Tensor m = Tensor::from({1, 1, 1, 4, 4}, v);
  const Tensor d = downsample_mask(m, 1, 2, 2);
  EXPECT_EQ(d.shape(), (Shape{1, 1, 1, 2, 2}));
  EXPECT_EQ(std::vector<double>(d.data().begin(), d.data().end()), (std::vector<double>{1, 1, 0, 1}));
}

TEST(DownsampleMask, TemporalAndIdentity) {
  Rng rng(4);
  const auto c = tiny_config();
  const Tensor m = random_mask(2, c, rng);
  const Tensor same = downsample_mask(m, c.frames, c.size, c.size);
  EXPECT_TRUE(std::equal(m.data().begin(), m.data().end(), same.data().begin()));
  const Tensor half = downsample_mask(m, 2, 4, 4);
  EXPECT_EQ(half[0], m[0]);
  EXPECT_TRUE(is_binary(half));
}

TEST(DownsampleMask, RejectsBadTargets) {
  const Tensor m = Tensor::zeros({1, 1, 2, 4, 4});
  EXPECT_THROW(downsample_mask(m, 0, 2, 2), std::invalid_argument);
  EXPECT_THROW(downsample_mask(m, 2, 8, 2), std::invalid_argument);
  EXPECT_THROW(downsample_mask(Tensor::zeros({1, 2, 2, 4, 4}), 1, 2, 2), ShapeError);
}

TEST(Variants, NamesRoundTrip) {
  for (const auto v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("resnet"), std::invalid_argument);
}

TEST_P(VariantTest, GradientsMatchFiniteDifferences) {
  const auto c = tiny_config();
  ActionModel model(GetParam(), c, 11);
  offset_shifts(model, 13);
  Rng rng(12);
  const Tensor video = random_video(2, c, rng);
  const Tensor mask = random_mask(2, c, rng);
  const std::vector<std::size_t> targets{0, 2};
  const auto report = grad_check(model.parameters(), [&] {
    return ops::softmax_cross_entropy(model.forward(video, mask), targets);
  });
  EXPECT_TRUE(report.passed) << variant_name(GetParam()) << " max rel error " << report.max_rel_error;
  for (const auto& p : report.params) EXPECT_GT(p.coords_checked, 0u) << p.name;
}

TEST_P(VariantTest, SampledGradientsAtDefaultGeometry) {
  BackboneConfig c;
  ActionModel model(GetParam(), c, 21);
  offset_shifts(model, 23);
  Rng rng(22);
  const Tensor video = random_video(1, c, rng);
  const Tensor mask = random_mask(1, c, rng);
  const std::vector<std::size_t> targets{1};
  GradCheckOptions opts;
  opts.max_coords_per_param = 3;
  opts.seed = 5;
  opts.epsilon = 1e-6;  // large nets have ReLU inputs within 1e-5 of zero
  const auto report = grad_check(
      model.parameters(), [&] { return ops::softmax_cross_entropy(model.forward(video, mask), targets); }, opts);
  EXPECT_TRUE(report.passed) << variant_name(GetParam()) << " max rel error " << report.max_rel_error;
}

TEST_P(VariantTest, LogitShapeAndDeterministicInit) {
  const auto c = tiny_config();
  Rng rng(5);
  const Tensor video = random_video(3, c, rng);
  const Tensor mask = random_mask(3, c, rng);
  const Tensor a = ActionModel(GetParam(), c, 7).forward(video, mask);
  const Tensor b = ActionModel(GetParam(), c, 7).forward(video, mask);
  EXPECT_EQ(a.shape(), (Shape{3, c.num_classes}));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  const Tensor other = ActionModel(GetParam(), c, 8).forward(video, mask);
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), other.data().begin()));
}

TEST_P(VariantTest, ParameterNamesAreUnique) {
  const ActionModel model(GetParam(), tiny_config(), 1);
  std::set<std::string> names;
  for (const auto& p : model.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, VariantTest, ::testing::ValuesIn(kAllVariants),
                         [](const auto& info) {
                           std::string n = variant_name(info.param);
                           for (auto& ch : n)
                             if (ch == '-') ch = '_';
                           return n;
                         });

TEST(ActionModel, MaskRequirements) {
  const auto c = tiny_config();
  Rng rng(6);
  const Tensor video = random_video(1, c, rng);
  EXPECT_NO_THROW(ActionModel(Variant::kBaseline, c, 1).forward(video));
  for (const auto v : {Variant::kSegmented, Variant::kDualBranchSum, Variant::kDualBranchStack,
                       Variant::kWeightedFocus}) {
    const ActionModel model(v, c, 1);
    EXPECT_THROW(model.forward(video), std::invalid_argument) << variant_name(v);
    Tensor bad = random_mask(1, c, rng);
    bad.mutable_data()[0] = 0.5;
    EXPECT_THROW(model.forward(video, bad), std::invalid_argument) << variant_name(v);
    EXPECT_THROW(model.forward(video, Tensor::zeros({1, 1, c.frames, c.size, c.size - 1})), ShapeError);
  }
}

TEST(ActionModel, RejectsWrongChannelCount) {
  const auto c = tiny_config();
  const ActionModel model(Variant::kBaseline, c, 1);
  try {
    model.forward(Tensor::zeros({1, 2, c.frames, c.size, c.size}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dim 1"), std::string::npos);
  }
}

TEST(ActionModel, BaselineIgnoresMask) {
  const auto c = tiny_config();
  Rng rng(7);
  const Tensor video = random_video(2, c, rng);
  const ActionModel model(Variant::kBaseline, c, 3);
  const Tensor a = model.forward(video);
  const Tensor b = model.forward(video, random_mask(2, c, rng));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(ActionModel, ZeroVideoGivesHeadBias) {
  const auto c = tiny_config();
  const ActionModel model(Variant::kBaseline, c, 3);
  const Tensor logits = model.forward(Tensor::zeros({1, 3, c.frames, c.size, c.size}));
  const auto params = model.parameters();
  const Tensor bias = params.back().tensor;
  ASSERT_EQ(params.back().name, "head.bias");
  for (std::size_t k = 0; k < c.num_classes; ++k) EXPECT_DOUBLE_EQ(logits[k], bias[k]);
}

TEST(ActionModel, SegmentedIsBlindToBackgroundPixels) {
  const auto c = tiny_config();
  Rng rng(8);
  const Tensor video = random_video(2, c, rng);
  const Tensor mask = random_mask(2, c, rng);
  Tensor other = video.clone();
  const std::size_t plane = c.frames * c.size * c.size;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < plane; ++i)
        if (mask[n * plane + i] == 0) other.mutable_data()[(n * 3 + ch) * plane + i] = rng.uniform();
  const ActionModel seg(Variant::kSegmented, c, 9);
  const Tensor a = seg.forward(video, mask), b = seg.forward(other, mask);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
  const ActionModel base(Variant::kBaseline, c, 9);
  EXPECT_NE(base.forward(video)[0], base.forward(other)[0]);
}

TEST(ActionModel, DualBranchFusion) {
  const auto c = tiny_config();
  Rng rng(9);
  const Tensor video = random_video(1, c, rng);
  const Tensor ones = Tensor::full({1, 1, c.frames, c.size, c.size}, 1.0);
  ActionModel sum(Variant::kDualBranchSum, c, 4);
  ActionModel stack(Variant::kDualBranchStack, c, 4);
  EXPECT_EQ(sum.stage3_in_channels(), c.widths[1]);
  EXPECT_EQ(stack.stage3_in_channels(), 2 * c.widths[1]);
  sum.tie_branches();
  stack.tie_branches();
  // With tied branches and a full mask both branches see the same input.
  const Tensor f = sum.branch_features(0, video);
  const Tensor fused = sum.forward_trace(video, ones).fused;
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_DOUBLE_EQ(fused[i], 2 * f[i]);
  const Tensor stacked = stack.forward_trace(video, ones).fused;
  EXPECT_EQ(stacked.dim(1), 2 * c.widths[1]);
  const std::size_t half = stacked.numel() / 2;
  for (std::size_t i = 0; i < half; ++i) EXPECT_DOUBLE_EQ(stacked[i], stacked[half + i]);
  EXPECT_THROW(ActionModel(Variant::kBaseline, c, 1).tie_branches(), std::logic_error);
}

TEST(ActionModel, WeightedFocusAlphaIsPerSampleAndBounded) {
  const auto c = tiny_config();
  Rng rng(10);
  const ActionModel model(Variant::kWeightedFocus, c, 5);
  const auto trace = model.forward_trace(random_video(4, c, rng), random_mask(4, c, rng));
  ASSERT_TRUE(trace.alpha);
  EXPECT_EQ(trace.alpha->shape(), (Shape{4, 1}));
  for (const double a : trace.alpha->data()) {
    EXPECT_GT(a, -1);
    EXPECT_LT(a, 1);
  }
  EXPECT_FALSE(ActionModel(Variant::kBaseline, c, 5).forward_trace(random_video(1, c, rng), std::nullopt).alpha);
}

TEST(ActionModel, DefaultGeometryShapes) {
  const BackboneConfig c;
  EXPECT_NO_THROW(c.validate());
  const ActionModel model(Variant::kWeightedFocus, c, 1);
  Rng rng(1);
  const auto trace = model.forward_trace(random_video(1, c, rng), random_mask(1, c, rng));
  EXPECT_EQ(trace.fused.shape(), (Shape{1, 16, 8, 8, 8}));
  EXPECT_EQ(trace.logits.shape(), (Shape{1, 4}));
}

TEST(ActionModel, InvalidConfig) {
  BackboneConfig c = tiny_config();
  c.num_classes = 1;
  EXPECT_THROW(ActionModel(Variant::kBaseline, c, 1), std::invalid_argument);
  c = tiny_config();
  c.widths[2] = 0;
  EXPECT_THROW(ActionModel(Variant::kBaseline, c, 1), std::invalid_argument);
}

TEST(Predict, ArgmaxTiesGoToLowestIndex) {
  const std::vector<double> row{0.5, 2.0, 2.0, -1};
  EXPECT_EQ(argmax_lowest(row), 1u);
  const std::vector<double> flat{1, 1, 1};
  EXPECT_EQ(argmax_lowest(flat), 0u);
  EXPECT_THROW(argmax_lowest(std::span<const double>{}), std::invalid_argument);
}

TEST(Example, PixelScalingAndLayout) {
  BackboneConfig c = tiny_config();
  c.frames = 2;
  c.size = 2;
  FrameSequence f = FrameSequence::blank(4, 2, 2);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = static_cast<std::uint8_t>(i % 256);
  MaskSequence m = MaskSequence::filled(4, 2, 2, 1);
  const Example ex = make_example(f, m, 2, c);
  EXPECT_EQ(ex.video.shape(), (Shape{1, 3, 2, 2, 2}));
  // sampled frames are 1 and 3; channel 1 of frame 1 pixel 0 is byte 12 + 1
  EXPECT_DOUBLE_EQ(ex.video[(1 * 2 + 0) * 4 + 0], 13 / 255.0);
  ASSERT_TRUE(ex.mask);
  EXPECT_EQ(ex.label, 2u);
  EXPECT_EQ(ex.mask->shape(), (Shape{1, 1, 2, 2, 2}));
}

namespace {

std::vector<Example> sandbox_examples(const BackboneConfig& c, std::size_t per_class, std::uint64_t seed) {
  SandboxConfig sc;
  sc.num_classes = c.num_classes;
  sc.frames = c.frames;
  sc.size = c.size;
  sc.sprite_size = 5;
  const auto data = generate_synthetic_sandbox(sc, per_class, seed);
  std::vector<Example> out;
  for (const auto& item : data.manifest.items) {
    const auto& clip = data.clips.at(item.video_id);
    out.push_back(make_example(clip.frames, clip.masks, data.manifest.class_index(item.human_class), c));
  }
  return out;
}

BackboneConfig small_config() {
  BackboneConfig c;
  c.stem_width = 4;
  c.widths = {4, 8, 8, 8};
  c.frames = 4;
  c.size = 16;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST(Train, ReducesLossAndIsDeterministic) {
  const auto c = small_config();
  const auto train_set = sandbox_examples(c, 6, 1);
  const auto val = sandbox_examples(c, 2, 2);
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 6;
  tc.lr = 1e-2;
  tc.seed = 3;
  ActionModel a(Variant::kWeightedFocus, c, 1), b(Variant::kWeightedFocus, c, 1);
  const auto ra = train(a, train_set, val, tc);
  const auto rb = train(b, train_set, val, tc);
  ASSERT_EQ(ra.history.size(), 12u);
  EXPECT_LT(ra.history.back().train_loss, ra.history.front().train_loss);
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].val_loss, rb.history[i].val_loss);
  }
  // the model holds the best-validation weights
  EXPECT_DOUBLE_EQ(mean_loss(a, val, 4), ra.best_val_loss);
  EXPECT_EQ(ra.history[ra.best_epoch - 1].val_loss, ra.best_val_loss);
  for (const auto& p : a.parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST(Train, BaselineFitsSandboxTrainingSet) {
  const auto c = small_config();
  const auto train_set = sandbox_examples(c, 6, 4);
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 6;
  tc.lr = 1e-2;
  ActionModel model(Variant::kBaseline, c, 2);
  train(model, train_set, {}, tc);
  const auto pred = predict_classes(model, train_set, 7);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == train_set[i].label;
  EXPECT_GE(correct * 10, pred.size() * 9);
  EXPECT_EQ(predict_class(model, train_set[0]), pred[0]);
}

TEST(Train, RejectsBadInputs) {
  const auto c = tiny_config();
  ActionModel model(Variant::kSegmented, c, 1);
  EXPECT_THROW(train(model, {}, {}, {}), std::invalid_argument);
  Rng rng(1);
  std::vector<Example> no_mask{{random_video(1, c, rng), std::nullopt, 0}};
  EXPECT_THROW(train(model, no_mask, {}, {}), std::invalid_argument);
  std::vector<Example> bad_label{{random_video(1, c, rng), random_mask(1, c, rng), 7}};
  EXPECT_THROW(train(model, bad_label, {}, {}), std::out_of_range);
}

TEST(Train, PlateauHalvesLearningRateOnFlatValidation) {
  const auto c = tiny_config();
  Rng rng(2);
  std::vector<Example> data{{random_video(1, c, rng), std::nullopt, 0}};
  TrainConfig tc;
  tc.epochs = 6;
  tc.lr = 1e-12;  // loss effectively constant
  tc.patience = 2;
  ActionModel model(Variant::kBaseline, c, 1);
  const auto r = train(model, data, data, tc);
  EXPECT_DOUBLE_EQ(r.history[0].lr, 1e-12);
  EXPECT_DOUBLE_EQ(r.history.back().lr, 0.25e-12);
}

TEST(Train, HistoryCsv) {
  std::ostringstream os;
  write_history_csv(os, {{1, 0.5, 0.25, 1e-3}});
  EXPECT_EQ(os.str(), "epoch,train_loss,val_loss,lr\n1,0.5,0.25,0.001\n");
}

TEST(WeightedMask, PartitionAndMonotonicity) {
  Rng rng(30);
  const Tensor m = random_mask(1, tiny_config(), rng);
  for (int k = 0; k < 50; ++k) {
    const double a = rng.uniform(-0.99, 0.99);
    const double b = std::min(0.99, a + rng.uniform(0.001, 0.5));
    const Tensor wa = weighted_mask(a, m), wn = weighted_mask(-a, m), wb = weighted_mask(b, m);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      EXPECT_DOUBLE_EQ(wa[i] + wn[i], 2.0);
      if (b > a) {
        if (m[i] == 1) EXPECT_GT(wb[i], wa[i]);
        else EXPECT_LT(wb[i], wa[i]);
      }
    }
  }
}

TEST(DownsampleMask, CheckerboardMatchesIndexMapOracleAndOnesStayOnes) {
  const std::size_t t = 2, h = 8, w = 8;
  std::vector<double> v(t * h * w);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) v[(f * h + y) * w + x] = (y + x + f) % 2;
  const Tensor m = Tensor::from({1, 1, t, h, w}, v);
  const Tensor d = downsample_mask(m, t, h / 2, w / 2);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t x = 0; x < w / 2; ++x)
        EXPECT_EQ(d[(f * (h / 2) + y) * (w / 2) + x], v[(f * h + 2 * y) * w + 2 * x]);
  const Tensor ones = downsample_mask(Tensor::full({1, 1, 4, 8, 8}, 1.0), 3, 5, 2);
  for (const double x : ones.data()) EXPECT_EQ(x, 1.0);
}

TEST(Predict, ArgmaxExamplesAndMonotoneInvariance) {
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.1, 0.9, 0.3}), 1u);
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.5, 0.5}), 0u);
  Rng rng(31);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> row(5), mapped(5);
    for (auto& x : row) x = std::round(rng.uniform(-3, 3) * 4) / 4;  // frequent ties
    for (std::size_t i = 0; i < 5; ++i) mapped[i] = std::exp(2 * row[i]) + 7;
    EXPECT_EQ(argmax_lowest(row), argmax_lowest(mapped));
  }
}

TEST(Train, SeparableTwoClassSandbox) {
  BackboneConfig c = small_config();
  c.num_classes = 2;
  const auto data = sandbox_examples(c, 10, 40);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 20;
  tc.lr = 1e-2;
  tc.seed = 41;
  ActionModel a(Variant::kBaseline, c, 42), b(Variant::kBaseline, c, 42);
  train(a, data, {}, tc);
  train(b, data, {}, tc);
  const auto pred = predict_classes(a, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data[i].label;
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(pred.size()), 0.95);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()))
        << pa[i].name;
}

TEST(Train, SegmentedFollowsSpriteOnSwappedVideos) {
  BackboneConfig c = small_config();
  SandboxConfig sc;
  sc.num_classes = c.num_classes;
  sc.frames = c.frames;
  sc.size = c.size;
  sc.sprite_size = 5;
  const auto data = generate_synthetic_sandbox(sc, 12, 50);
  std::vector<Example> train_set;
  for (const auto& item : data.manifest.items) {
    const auto& clip = data.clips.at(item.video_id);
    train_set.push_back(make_example(clip.frames, clip.masks, data.manifest.class_index(item.human_class), c));
  }
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 12;
  tc.lr = 1e-2;
  ActionModel model(Variant::kSegmented, c, 51);
  train(model, train_set, {}, tc);

  const auto swaps = build_mini_action_swap(data.manifest, 52, 50);
  std::vector<Example> probe;
  for (std::size_t k = 0; k < swaps.jobs.size(); ++k) {
    const auto& job = swaps.jobs[k];
    const auto& human = data.clips.at(job.human_item);
    probe.push_back(make_example(render_swap(job, data.clips, data.clips), human.masks,
                                 data.manifest.class_index(swaps.manifest.items[k].human_class), c));
  }
  const auto pred = predict_classes(model, probe);
  std::size_t follows_sprite = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) follows_sprite += pred[i] == probe[i].label;
  EXPECT_GT(follows_sprite * 2, pred.size());
}
