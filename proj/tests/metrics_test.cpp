#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <sstream>

#include "bglab/metrics.hpp"

using namespace bglab;

namespace {

std::vector<PredictionRecord> records_with(std::size_t human, std::size_t background, std::size_t n,
                                           const std::string& bg = "bg") {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::string> pred = "other";
    if (i < human) pred = "human";
    else if (i < human + background) pred = bg;
    out.push_back({"v" + std::to_string(i), "human", bg, pred});
  }
  return out;
}

// Smallest N (and counts) whose half-up two-decimal percentages match the targets.
std::optional<std::tuple<std::size_t, std::size_t, std::size_t>> smallest_consistent(const std::string& shacc,
                                                                                      const std::string& sberr,
                                                                                      std::size_t max_n) {
  for (std::size_t n = 1; n <= max_n; ++n)
    for (std::size_t h = 0; h <= n; ++h) {
      if (format_percent(h, n) != shacc) continue;
      for (std::size_t b = 0; h + b <= n; ++b)
        if (format_percent(b, n) == sberr) return std::tuple{n, h, b};
    }
  return std::nullopt;
}

std::vector<PredictionRecord> random_records(std::size_t n, Rng& rng) {
  const std::vector<std::string> classes{"a", "b", "c", "d", "e", "f"};
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = rng.uniform_index(classes.size());
    std::size_t b = rng.uniform_index(classes.size() - 1);
    if (b >= h) ++b;
    std::optional<std::string> pred;
    if (!rng.bernoulli(0.1)) pred = classes[rng.uniform_index(classes.size())];
    out.push_back({"v" + std::to_string(i), classes[h], classes[b], pred});
  }
  return out;
}

}  // namespace

TEST(FormatPercent, HalfUpTwoDecimals) {
  EXPECT_EQ(format_percent(2, 55), "3.64");
  EXPECT_EQ(format_percent(1, 8), "12.50");
  EXPECT_EQ(format_percent(1, 800), "0.13");  // exactly 0.125
  EXPECT_EQ(format_percent(3, 1600), "0.19");  // exactly 0.1875
  EXPECT_EQ(format_percent(0, 7), "0.00");
  EXPECT_EQ(format_percent(7, 7), "100.00");
  EXPECT_THROW(format_percent(1, 0), std::invalid_argument);
}

TEST(ComputeMetrics, AllBackground) {
  const auto c = compute_metrics(records_with(0, 10, 10));
  EXPECT_EQ(c.shacc(), 0);
  EXPECT_EQ(c.sberr(), 100);
}

TEST(ComputeMetrics, TableRowCountsAreSmallestConsistent) {
  const auto found = smallest_consistent("3.64", "89.09", 200);
  ASSERT_TRUE(found);
  EXPECT_EQ(*found, (std::tuple<std::size_t, std::size_t, std::size_t>{55, 2, 49}));
  const auto c = compute_metrics(records_with(2, 49, 55));
  EXPECT_EQ(format_percent(c.human, c.n), "3.64");
  EXPECT_EQ(format_percent(c.background, c.n), "89.09");
}

TEST(ComputeMetrics, AbstainStaysInDenominator) {
  auto recs = records_with(1, 1, 4);
  recs[2].predicted.reset();
  const auto c = compute_metrics(recs);
  EXPECT_EQ(c.n, 4u);
  EXPECT_EQ(c.abstain, 1u);
  EXPECT_EQ(c.other, 1u);
  EXPECT_DOUBLE_EQ(c.shacc(), 25);
  EXPECT_DOUBLE_EQ(c.sberr(), 25);
  EXPECT_DOUBLE_EQ(c.abstain_pct(), 25);
}

TEST(ComputeMetrics, Rejections) {
  EXPECT_THROW(compute_metrics({}), std::invalid_argument);
  EXPECT_THROW(compute_metrics({{"v", "x", "x", "x"}}), std::invalid_argument);
}

TEST(ComputeMetrics, MatchesCountingOracle) {
  Rng rng(1);
  const auto recs = random_records(1000, rng);
  std::size_t h = 0, b = 0, a = 0;
  for (const auto& r : recs) {
    if (!r.predicted) ++a;
    else if (*r.predicted == r.human_class) ++h;
    else if (*r.predicted == r.background_class) ++b;
  }
  const auto c = compute_metrics(recs);
  EXPECT_EQ(c.human, h);
  EXPECT_EQ(c.background, b);
  EXPECT_EQ(c.abstain, a);
  EXPECT_EQ(c.human + c.background + c.abstain + c.other, c.n);
  EXPECT_NEAR(c.shacc() + c.sberr() + c.abstain_pct() + c.other_pct(), 100.0, 1e-9);
}

TEST(Breakdown, TableRowForSingleClass) {
  const auto found = smallest_consistent("4.62", "75.38", 200);
  ASSERT_TRUE(found);
  EXPECT_EQ(*found, (std::tuple<std::size_t, std::size_t, std::size_t>{65, 3, 49}));
  const auto recs = records_with(3, 49, 65, "tree");
  const auto b = per_background_breakdown(recs);
  ASSERT_EQ(b.rows.size(), 1u);
  EXPECT_EQ(b.rows[0].counts, compute_metrics(recs));
  EXPECT_EQ(format_percent(b.rows[0].counts.human, 65), "4.62");
  EXPECT_EQ(format_percent(b.rows[0].counts.background, 65), "75.38");
}

TEST(Breakdown, GroupByOracleAndWeightedAverage) {
  Rng rng(2);
  const auto recs = random_records(700, rng);
  const auto b = per_background_breakdown(recs, 100);
  std::map<std::string, BiasCounts> oracle;
  for (const auto& r : recs) {
    auto& c = oracle[r.background_class];
    ++c.n;
    if (!r.predicted) ++c.abstain;
    else if (*r.predicted == r.human_class) ++c.human;
    else if (*r.predicted == r.background_class) ++c.background;
    else ++c.other;
  }
  ASSERT_EQ(b.rows.size(), oracle.size());
  std::size_t h = 0, bg = 0, n = 0;
  for (const auto& row : b.rows) {
    EXPECT_EQ(row.counts, oracle.at(row.background_class));
    h += row.counts.human;
    bg += row.counts.background;
    n += row.counts.n;
  }
  const auto overall = compute_metrics(recs);
  EXPECT_EQ(h, overall.human);
  EXPECT_EQ(bg, overall.background);
  EXPECT_EQ(n, overall.n);
}

TEST(Breakdown, SortOrdersAndTies) {
  std::vector<PredictionRecord> recs;
  auto add = [&](const std::string& bg, std::size_t human, std::size_t background, std::size_t n) {
    auto part = records_with(human, background, n, bg);
    for (auto& r : part) r.video_id = bg + r.video_id;
    recs.insert(recs.end(), part.begin(), part.end());
  };
  add("zeta", 1, 5, 10);   // SBErr 50, SHAcc 10
  add("alpha", 2, 5, 10);  // SBErr 50, SHAcc 20
  add("mid", 0, 1, 4);     // SBErr 25, SHAcc 0
  add("low", 3, 0, 6);     // SBErr 0
  add("beta", 1, 10, 20);  // SBErr 50, SHAcc 5
  const auto b = per_background_breakdown(recs, 3);
  ASSERT_EQ(b.high_bias.size(), 3u);
  EXPECT_EQ(b.high_bias[0].background_class, "alpha");
  EXPECT_EQ(b.high_bias[1].background_class, "beta");
  EXPECT_EQ(b.high_bias[2].background_class, "zeta");
  EXPECT_EQ(b.low_bias[0].background_class, "low");
  EXPECT_EQ(b.low_bias[1].background_class, "mid");
  EXPECT_EQ(b.low_bias[2].background_class, "beta");  // SBErr tie broken by lower SHAcc
  EXPECT_EQ(b.rows.size(), 5u);
}

TEST(BuildMcq, VocabularyOfFive) {
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
  const auto item = build_mcq("v", "a", "b", vocab, 3);
  std::vector<std::string> sorted = item.choices;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, vocab);
  EXPECT_EQ(item.human_class(), "a");
  EXPECT_EQ(item.background_class(), "b");
  EXPECT_EQ(item.distractor_indices.size(), 3u);
  EXPECT_EQ(build_mcq("v", "a", "b", vocab, 3), item);
}

TEST(BuildMcq, Rejections) {
  EXPECT_THROW(build_mcq("v", "a", "b", {"a", "b", "c", "d"}, 1), std::invalid_argument);
  EXPECT_THROW(build_mcq("v", "a", "z", {"a", "b", "c", "d", "e"}, 1), std::invalid_argument);
  EXPECT_THROW(build_mcq("v", "a", "a", {"a", "b", "c", "d", "e"}, 1), std::invalid_argument);
  EXPECT_THROW(build_mcq("v", "a", "b", {"a", "b", "c", "d", "d"}, 1), std::invalid_argument);
}

TEST(BuildMcq, DistractorsUniformAndDistinct) {
  std::vector<std::string> vocab;
  for (int i = 0; i < 50; ++i) vocab.push_back("class_" + std::to_string(i));
  std::map<std::string, std::size_t> counts;
  std::array<std::size_t, 5> human_pos{};
  const std::size_t trials = 10000;
  for (std::size_t s = 0; s < trials; ++s) {
    const auto item = build_mcq("v", vocab[0], vocab[1], vocab, s);
    const std::set<std::string> distinct(item.choices.begin(), item.choices.end());
    ASSERT_EQ(distinct.size(), 5u);
    for (const auto d : item.distractor_indices) {
      EXPECT_NE(item.choices[d], vocab[0]);
      EXPECT_NE(item.choices[d], vocab[1]);
      ++counts[item.choices[d]];
    }
    ++human_pos[item.human_index];
  }
  ASSERT_EQ(counts.size(), 48u);
  const double expected = trials * 3.0 / 48.0;
  double chi2 = 0;
  for (const auto& [k, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 47 degrees of freedom: mean 47, sd sqrt(94)
  EXPECT_LT(chi2, 47 + 3 * std::sqrt(94.0));
  for (const auto c : human_pos) EXPECT_NEAR(static_cast<double>(c), trials / 5.0, 3 * std::sqrt(trials * 0.16));
}

TEST(BuildMcq, UniformRandomAnswererNearTwentyPercent) {
  std::vector<std::string> vocab;
  for (int i = 0; i < 50; ++i) vocab.push_back("class_" + std::to_string(i));
  Rng rng(9);
  std::vector<PredictionRecord> recs;
  for (std::size_t s = 0; s < 5000; ++s) {
    const std::size_t h = rng.uniform_index(50);
    std::size_t b = rng.uniform_index(49);
    if (b >= h) ++b;
    const auto item = build_mcq("v" + std::to_string(s), vocab[h], vocab[b], vocab, s);
    recs.push_back({item.video_id, vocab[h], vocab[b], item.choices[rng.uniform_index(5)]});
  }
  const auto c = compute_metrics(recs);
  EXPECT_NEAR(c.shacc(), 20, 2);
  EXPECT_NEAR(c.sberr(), 20, 2);
}

TEST(SplitTuneEval, Sizes) {
  std::vector<int> items(2366);
  for (int i = 0; i < 2366; ++i) items[i] = i;
  const auto [eval, tune] = split_tune_eval(items, 0.25, 4);
  EXPECT_EQ(tune.size(), 591u);
  EXPECT_EQ(eval.size(), 1775u);
  std::set<int> all(eval.begin(), eval.end());
  all.insert(tune.begin(), tune.end());
  EXPECT_EQ(all.size(), 2366u);
  EXPECT_EQ(split_tune_eval(items, 0.25, 4), split_tune_eval(items, 0.25, 4));
  EXPECT_NE(split_tune_eval(items, 0.25, 4), split_tune_eval(items, 0.25, 5));
  const auto small = split_tune_eval(std::vector<int>{1, 2, 3, 4}, 0.25, 1);
  EXPECT_EQ(small.first.size(), 3u);
  EXPECT_EQ(small.second.size(), 1u);
  EXPECT_THROW(split_tune_eval(std::vector<int>{}, 0.25, 1), std::invalid_argument);
  EXPECT_THROW(split_tune_eval(items, 1.0, 1), std::invalid_argument);
}

TEST(Report, JsonRoundTripAndFormatting) {
  Rng rng(5);
  const auto report = make_report(random_records(300, rng), {"model-x", "P1", 8, 42});
  const auto j = to_json(report);
  EXPECT_EQ(report_from_json(nlohmann::json::parse(j.dump())), report);
  const auto row = make_report(records_with(2, 49, 55));
  EXPECT_EQ(to_json(row)["overall"]["shacc"], "3.64");
  EXPECT_EQ(to_json(row)["overall"]["sberr"], "89.09");
  // stable field order
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"metadata", "overall", "per_background_class"}));
}

TEST(Report, CsvAndFiles) {
  BiasReport empty;
  std::ostringstream os;
  write_report_csv(os, empty);
  EXPECT_EQ(os.str(), "background_class,n,shacc,sberr\n");
  const auto r = make_report(records_with(2, 49, 55, "weather, forecast"));
  std::ostringstream os2;
  write_report_csv(os2, r);
  EXPECT_EQ(os2.str(), "background_class,n,shacc,sberr\n\"weather, forecast\",55,3.64,89.09\n");
  const auto dir = std::filesystem::temp_directory_path() / "bglab_metrics_test";
  std::filesystem::create_directories(dir);
  emit_report(r, ReportFormat::kJson, dir / "r.json");
  std::ifstream is(dir / "r.json");
  EXPECT_EQ(report_from_json(nlohmann::json::parse(is)), r);
  EXPECT_THROW(emit_report(r, ReportFormat::kCsv, dir / "missing" / "r.csv"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Predictions, CsvRoundTrip) {
  std::vector<PredictionRecord> recs{{"v1", "run, fast", "swim", std::nullopt},
                                     {"v2", "say \"hi\"", "swim", "swim"}};
  std::stringstream ss;
  write_predictions_csv(ss, recs);
  EXPECT_NE(ss.str().find("ABSTAIN"), std::string::npos);
  EXPECT_EQ(read_predictions_csv(ss), recs);
  std::istringstream bad("id,h,b,p\n");
  EXPECT_THROW(read_predictions_csv(bad), std::invalid_argument);
  std::istringstream short_row("video_id,human_class,background_class,predicted\nv,a,b\n");
  EXPECT_THROW(read_predictions_csv(short_row), std::invalid_argument);
}

TEST(Sweep, SortingFlagsAndDuplicates) {
  auto rep = [](std::size_t h, std::size_t b) { return make_report(records_with(h, b, 20)); };
  const auto single = sweep_series({{8, rep(1, 1)}});
  EXPECT_EQ(single.points.size(), 1u);
  const auto s = sweep_series({{32, rep(5, 2)}, {8, rep(2, 6)}, {16, rep(4, 4)}});
  ASSERT_EQ(s.points.size(), 3u);
  EXPECT_EQ(s.points[0].x, 8);
  EXPECT_EQ(s.points[2].x, 32);
  EXPECT_TRUE(s.shacc_nondecreasing);
  EXPECT_FALSE(s.sberr_nondecreasing);
  std::ostringstream os;
  write_sweep_csv(os, s);
  EXPECT_EQ(os.str(), "x,shacc,sberr\n8,10.00,30.00\n16,20.00,20.00\n32,25.00,10.00\n");
  EXPECT_THROW(sweep_series({{8, rep(1, 1)}, {8, rep(2, 2)}}), std::invalid_argument);

  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<double, BiasReport>> in;
    for (int i = 0; i < 6; ++i) {
      const std::size_t h = rng.uniform_index(10), b = rng.uniform_index(10);
      in.push_back({static_cast<double>(i * 7 % 6), rep(h, b)});
    }
    const auto series = sweep_series(in);
    bool oracle = true;
    for (std::size_t i = 0; i < series.points.size(); ++i)
      for (std::size_t j = i + 1; j < series.points.size(); ++j)
        if (series.points[j].counts.shacc() < series.points[i].counts.shacc()) oracle = false;
    EXPECT_EQ(series.shacc_nondecreasing, oracle);
  }
}
