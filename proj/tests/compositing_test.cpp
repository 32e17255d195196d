#include <algorithm>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "bglab/compositing.hpp"
#include "bglab/image.hpp"

using namespace bglab;

namespace {

FrameSequence random_frames(Rng& rng, std::size_t t, std::size_t h, std::size_t w) {
  FrameSequence f = FrameSequence::blank(t, h, w);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
  return f;
}

MaskSequence random_mask(Rng& rng, std::size_t t, std::size_t h, std::size_t w) {
  MaskSequence m = MaskSequence::filled(t, h, w, 0);
  for (auto& v : m.values) v = static_cast<std::uint8_t>(rng.uniform_index(2));
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bglab_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(SelectPersonBox, FiltersByLabel) {
  const std::vector<DetectionRecord> d{{0, "person", 0.9, 0, 0, 5, 5}, {0, "dog", 0.99, 1, 1, 4, 4}};
  const auto best = select_person_box(d);
  EXPECT_EQ(best.label, "person");
  EXPECT_DOUBLE_EQ(best.confidence, 0.9);
}

TEST(SelectPersonBox, TiesGoToEarliestFrameThenSmallestX) {
  const std::vector<DetectionRecord> d{{3, "person", 0.7, 0, 0, 5, 5},
                                       {1, "person", 0.7, 4, 0, 9, 5},
                                       {1, "person", 0.7, 2, 0, 9, 5}};
  const auto best = select_person_box(d);
  EXPECT_EQ(best.frame, 1u);
  EXPECT_DOUBLE_EQ(best.x0, 2);
}

TEST(SelectPersonBox, NoPersonSignalsNoHuman) {
  EXPECT_THROW(select_person_box({{0, "car", 0.8, 0, 0, 1, 1}}), NoHumanFound);
  EXPECT_THROW(select_person_box({}), std::invalid_argument);
}

TEST(SelectPersonBox, MatchesFullScanOracle) {
  Rng rng(17);
  const char* labels[] = {"person", "dog", "car"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DetectionRecord> d;
    for (int i = 0; i < 100; ++i) {
      DetectionRecord r;
      r.frame = rng.uniform_index(10);
      r.label = labels[rng.uniform_index(3)];
      r.confidence = static_cast<double>(rng.uniform_index(20)) / 20.0;  // coarse grid forces ties
      r.x0 = static_cast<double>(rng.uniform_index(50));
      r.y0 = 0;
      r.x1 = r.x0 + 10;
      r.y1 = 10;
      d.push_back(r);
    }
    d[0].label = "person";
    std::vector<DetectionRecord> persons;
    std::copy_if(d.begin(), d.end(), std::back_inserter(persons), [](auto& r) { return r.label == "person"; });
    std::stable_sort(persons.begin(), persons.end(), [](const auto& a, const auto& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      if (a.frame != b.frame) return a.frame < b.frame;
      return a.x0 < b.x0;
    });
    EXPECT_EQ(select_person_box(d), persons.front());
  }
}

TEST(Detections, ValidatesBoxes) {
  EXPECT_THROW(validate_detection({0, "person", 0.5, 5, 0, 5, 4}), std::invalid_argument);
  EXPECT_THROW(validate_detection({0, "person", 1.5, 0, 0, 5, 4}), std::invalid_argument);
  EXPECT_THROW(validate_detection({0, "person", 0.5, 0, 0, 50, 4}, 32, 32), std::invalid_argument);
  EXPECT_NO_THROW(validate_detection({0, "person", 0.5, 0, 0, 32, 32}, 32, 32));
}

TEST(Detections, LoadsJsonList) {
  const auto dir = temp_dir("detections");
  std::ofstream(dir / "d.json")
      << R"([{"frame":0,"label":"dog","confidence":0.9,"box":[0,0,4,4]},)"
      << R"({"frame":2,"label":"person","confidence":0.8,"box":[1,2,6,9]}])";
  const auto d = load_detections(dir / "d.json");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(select_person_box(d).frame, 2u);
  EXPECT_DOUBLE_EQ(d[1].y1, 9);
}

TEST(ApplyMask, OnesKeepZerosBlack) {
  Rng rng(1);
  const auto f = random_frames(rng, 3, 4, 5);
  EXPECT_EQ(apply_mask(f, MaskSequence::filled(3, 4, 5, 1)), f);
  const auto black = apply_mask(f, MaskSequence::filled(3, 4, 5, 0));
  EXPECT_TRUE(std::all_of(black.pixels.begin(), black.pixels.end(), [](auto v) { return v == 0; }));
}

TEST(ApplyMask, MatchesPerPixelOracleAndIsIdempotent) {
  Rng rng(2);
  const auto f = random_frames(rng, 4, 6, 7);
  const auto m = random_mask(rng, 4, 6, 7);
  const auto out = apply_mask(f, m);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 7; ++x)
        for (int c = 0; c < 3; ++c)
          EXPECT_EQ(out.at(t, y, x)[c], m.at(t, y, x) ? f.at(t, y, x)[c] : 0);
  EXPECT_EQ(apply_mask(out, m), out);
}

TEST(ApplyMask, RejectsDimensionMismatch) {
  EXPECT_THROW(apply_mask(FrameSequence::blank(2, 4, 4), MaskSequence::filled(2, 4, 5, 1)), std::invalid_argument);
}

TEST(CompositeSwap, MaskExtremes) {
  Rng rng(3);
  const auto h = random_frames(rng, 4, 5, 6);
  const auto b = random_frames(rng, 4, 5, 6);
  EXPECT_EQ(composite_swap(h, MaskSequence::filled(4, 5, 6, 1), b), h);
  EXPECT_EQ(composite_swap(h, MaskSequence::filled(4, 5, 6, 0), b), b);
}

TEST(CompositeSwap, NormalizesBackgroundGeometryAndLength) {
  Rng rng(4);
  const auto h = random_frames(rng, 5, 4, 4);
  const auto b = random_frames(rng, 2, 8, 8);  // shorter and larger
  const auto out = composite_swap(h, MaskSequence::filled(5, 4, 4, 0), b);
  ASSERT_EQ(out.frames, 5u);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(t, y, x)[c], b.at(t % 2, 2 * y, 2 * x)[c]);
  const auto longer = random_frames(rng, 9, 4, 4);
  const auto cut = composite_swap(h, MaskSequence::filled(5, 4, 4, 0), longer);
  EXPECT_TRUE(std::equal(cut.pixels.begin(), cut.pixels.end(), longer.pixels.begin()));
  EXPECT_THROW(composite_swap(h, MaskSequence::filled(5, 4, 4, 0), FrameSequence{}), std::invalid_argument);
}

TEST(CompositeSwap, HumanPixelsAreBitIdentical) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = random_frames(rng, 3, 6, 6);
    const auto m = random_mask(rng, 3, 6, 6);
    const auto b = random_frames(rng, 3, 6, 6);
    const auto out = composite_swap(h, m, b);
    for (std::size_t i = 0; i < m.values.size(); ++i)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out.pixels[3 * i + c], (m.values[i] ? h : b).pixels[3 * i + c]);
  }
}

TEST(ImageIo, PpmAndPgmRoundTrip) {
  Rng rng(6);
  const auto dir = temp_dir("imageio");
  const auto f = random_frames(rng, 3, 5, 7);
  const auto m = random_mask(rng, 3, 5, 7);
  save_frames(dir / "frames", f);
  save_masks(dir / "masks", m);
  EXPECT_TRUE(std::filesystem::exists(dir / "frames" / "frame_00002.ppm"));
  EXPECT_EQ(load_frames(dir / "frames"), f);
  EXPECT_EQ(load_masks(dir / "masks"), m);
}

TEST(ImageIo, RejectsNonBinaryMaskValues) {
  const auto dir = temp_dir("badmask");
  std::ofstream(dir / "frame_00000.pgm", std::ios::binary) << "P5\n2 1\n255\n" << '\x00' << '\x80';
  EXPECT_THROW(load_masks(dir), ImageIoError);
}

namespace {

DatasetManifest manifest_of(std::size_t n, bool masks = true) {
  DatasetManifest m;
  m.classes = {"a", "b"};
  for (std::size_t i = 0; i < n; ++i) {
    ManifestItem item;
    item.video_id = "v" + std::to_string(i);
    item.human_class = i % 2 ? "a" : "b";
    item.frames_dir = "f/" + item.video_id;
    if (masks) item.masks_dir = "m/" + item.video_id;
    m.items.push_back(item);
  }
  return m;
}

DatasetManifest pool_of(std::size_t n) {
  DatasetManifest p;
  p.classes = {"beach", "forest", "kitchen"};
  for (std::size_t i = 0; i < n; ++i) {
    ManifestItem item;
    item.video_id = "p" + std::to_string(i);
    item.human_class = p.classes[i % 3];
    item.background_class = item.human_class;
    item.frames_dir = "pool/" + item.video_id;
    p.items.push_back(item);
  }
  return p;
}

}  // namespace

TEST(AugmentedSet, DoublesMaskBearingItems) {
  const auto out = build_augmented_set(manifest_of(10), pool_of(5), 7);
  EXPECT_EQ(out.manifest.items.size(), 20u);
  EXPECT_EQ(out.jobs.size(), 10u);
  EXPECT_NO_THROW(out.manifest.validate());
  for (const auto& job : out.jobs) EXPECT_EQ(out.manifest.find(job.video_id).human_class,
                                             out.manifest.find(job.human_item).human_class);
}

TEST(AugmentedSet, EmptyInputGivesEmptyManifest) {
  EXPECT_TRUE(build_augmented_set(manifest_of(0), pool_of(3), 1).manifest.items.empty());
}

TEST(AugmentedSet, SkipsItemsWithoutMasks) {
  auto m = manifest_of(6);
  m.items[2].masks_dir.reset();
  const auto out = build_augmented_set(m, pool_of(2), 3);
  EXPECT_EQ(out.manifest.items.size(), 10u);
  ASSERT_EQ(out.skipped.size(), 1u);
  EXPECT_EQ(out.skipped[0], "v2");
  EXPECT_THROW(out.manifest.find("v2"), ManifestError);
}

TEST(AugmentedSet, SeedDeterminesBackgrounds) {
  const auto a = build_augmented_set(manifest_of(30), pool_of(9), 11);
  const auto b = build_augmented_set(manifest_of(30), pool_of(9), 11);
  const auto c = build_augmented_set(manifest_of(30), pool_of(9), 12);
  std::vector<std::string> ba, bb, bc;
  for (std::size_t i = 0; i < a.jobs.size(); ++i) {
    ba.push_back(a.jobs[i].background_item);
    bb.push_back(b.jobs[i].background_item);
    bc.push_back(c.jobs[i].background_item);
  }
  EXPECT_EQ(ba, bb);
  EXPECT_NE(ba, bc);
  EXPECT_THROW(build_augmented_set(manifest_of(2), pool_of(0), 1), std::invalid_argument);
}
