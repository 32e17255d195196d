#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bglab/rng.hpp"

namespace bglab {

inline constexpr const char* kAbstain = "ABSTAIN";

struct PredictionRecord {
  std::string video_id;
  std::string human_class;
  std::string background_class;
  std::optional<std::string> predicted;  // nullopt = ABSTAIN

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Raw counts; every percentage is derived from these.
struct BiasCounts {
  std::size_t n = 0;
  std::size_t human = 0;       // predicted == human_class
  std::size_t background = 0;  // predicted == background_class
  std::size_t abstain = 0;
  std::size_t other = 0;

  double shacc() const { return pct(human); }
  double sberr() const { return pct(background); }
  double accuracy() const { return pct(human); }
  double abstain_pct() const { return pct(abstain); }
  double other_pct() const { return pct(other); }

  friend bool operator==(const BiasCounts&, const BiasCounts&) = default;

 private:
  double pct(std::size_t k) const { return n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0; }
};

/// count/n as a percentage rounded half-up to two decimals, computed exactly.
inline std::string format_percent(std::size_t count, std::size_t n) {
  if (n == 0) throw std::invalid_argument("format_percent: zero denominator");
  const std::uint64_t hundredths = (20000ULL * count + n) / (2ULL * n);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%llu.%02llu", static_cast<unsigned long long>(hundredths / 100),
                static_cast<unsigned long long>(hundredths % 100));
  return buf;
}

inline void validate_record(const PredictionRecord& r) {
  if (r.human_class == r.background_class)
    throw std::invalid_argument("prediction record " + r.video_id + ": human and background class are both '" +
                                r.human_class + "'");
}

inline BiasCounts compute_metrics(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("compute_metrics: no records");
  BiasCounts c;
  for (const auto& r : records) {
    validate_record(r);
    ++c.n;
    if (!r.predicted) ++c.abstain;
    else if (*r.predicted == r.human_class) ++c.human;
    else if (*r.predicted == r.background_class) ++c.background;
    else ++c.other;
  }
  return c;
}

struct BackgroundRow {
  std::string background_class;
  BiasCounts counts;

  friend bool operator==(const BackgroundRow&, const BackgroundRow&) = default;
};

struct Breakdown {
  std::vector<BackgroundRow> rows;      // by class name
  std::vector<BackgroundRow> high_bias;  // SBErr descending
  std::vector<BackgroundRow> low_bias;   // SBErr ascending, then SHAcc ascending
};

namespace metrics_detail {

// a.k/a.n < b.k/b.n without floating point
inline bool ratio_less(std::size_t ak, std::size_t an, std::size_t bk, std::size_t bn) {
  return static_cast<unsigned __int128>(ak) * bn < static_cast<unsigned __int128>(bk) * an;
}

}  // namespace metrics_detail

inline Breakdown per_background_breakdown(const std::vector<PredictionRecord>& records, std::size_t top_k = 10) {
  using metrics_detail::ratio_less;
  std::map<std::string, std::vector<PredictionRecord>> groups;
  for (const auto& r : records) groups[r.background_class].push_back(r);
  Breakdown b;
  for (const auto& [cls, group] : groups) b.rows.push_back({cls, compute_metrics(group)});
  b.high_bias = b.rows;
  std::stable_sort(b.high_bias.begin(), b.high_bias.end(), [](const BackgroundRow& x, const BackgroundRow& y) {
    const auto &a = x.counts, &c = y.counts;
    if (ratio_less(c.background, c.n, a.background, a.n)) return true;
    if (ratio_less(a.background, a.n, c.background, c.n)) return false;
    return x.background_class < y.background_class;
  });
  b.low_bias = b.rows;
  std::stable_sort(b.low_bias.begin(), b.low_bias.end(), [](const BackgroundRow& x, const BackgroundRow& y) {
    const auto &a = x.counts, &c = y.counts;
    if (ratio_less(a.background, a.n, c.background, c.n)) return true;
    if (ratio_less(c.background, c.n, a.background, a.n)) return false;
    if (ratio_less(a.human, a.n, c.human, c.n)) return true;
    if (ratio_less(c.human, c.n, a.human, a.n)) return false;
    return x.background_class < y.background_class;
  });
  if (b.high_bias.size() > top_k) b.high_bias.resize(top_k);
  if (b.low_bias.size() > top_k) b.low_bias.resize(top_k);
  return b;
}

struct ReportMetadata {
  std::string model_id;
  std::string prompt_id;
  std::size_t frames = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const ReportMetadata&, const ReportMetadata&) = default;
};

struct BiasReport {
  BiasCounts overall;
  std::vector<BackgroundRow> per_class;
  ReportMetadata metadata;

  friend bool operator==(const BiasReport&, const BiasReport&) = default;
};

inline BiasReport make_report(const std::vector<PredictionRecord>& records, ReportMetadata metadata = {}) {
  return {compute_metrics(records), per_background_breakdown(records).rows, std::move(metadata)};
}

inline nlohmann::ordered_json counts_json(const BiasCounts& c) {
  nlohmann::ordered_json j;
  j["n"] = c.n;
  j["shacc"] = format_percent(c.human, c.n);
  j["sberr"] = format_percent(c.background, c.n);
  j["accuracy"] = format_percent(c.human, c.n);
  j["abstain"] = format_percent(c.abstain, c.n);
  j["counts"] = {{"human", c.human}, {"background", c.background}, {"abstain", c.abstain}, {"other", c.other}};
  return j;
}

inline nlohmann::ordered_json to_json(const BiasReport& r) {
  nlohmann::ordered_json j;
  j["metadata"] = {{"model_id", r.metadata.model_id},
                   {"prompt_id", r.metadata.prompt_id},
                   {"frames", r.metadata.frames},
                   {"seed", r.metadata.seed}};
  j["overall"] = counts_json(r.overall);
  j["per_background_class"] = nlohmann::ordered_json::array();
  for (const auto& row : r.per_class) {
    auto jr = counts_json(row.counts);
    jr["background_class"] = row.background_class;
    j["per_background_class"].push_back(jr);
  }
  return j;
}

inline BiasCounts counts_from_json(const nlohmann::json& j) {
  BiasCounts c;
  c.n = j.at("n").get<std::size_t>();
  const auto& k = j.at("counts");
  c.human = k.at("human").get<std::size_t>();
  c.background = k.at("background").get<std::size_t>();
  c.abstain = k.at("abstain").get<std::size_t>();
  c.other = k.at("other").get<std::size_t>();
  if (c.human + c.background + c.abstain + c.other != c.n)
    throw std::invalid_argument("report: counts do not sum to n");
  return c;
}

inline BiasReport report_from_json(const nlohmann::json& j) {
  BiasReport r;
  const auto& m = j.at("metadata");
  r.metadata.model_id = m.at("model_id").get<std::string>();
  r.metadata.prompt_id = m.at("prompt_id").get<std::string>();
  r.metadata.frames = m.at("frames").get<std::size_t>();
  r.metadata.seed = m.at("seed").get<std::uint64_t>();
  r.overall = counts_from_json(j.at("overall"));
  for (const auto& jr : j.at("per_background_class"))
    r.per_class.push_back({jr.at("background_class").get<std::string>(), counts_from_json(jr)});
  return r;
}

namespace csv {

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw std::invalid_argument("csv: unterminated quote");
  return fields;
}

}  // namespace csv

/// Per-class table: background_class,n,shacc,sberr.
inline void write_report_csv(std::ostream& os, const BiasReport& r) {
  os << "background_class,n,shacc,sberr\n";
  for (const auto& row : r.per_class)
    os << csv::quote(row.background_class) << ',' << row.counts.n << ','
       << format_percent(row.counts.human, row.counts.n) << ',' << format_percent(row.counts.background, row.counts.n)
       << '\n';
}

enum class ReportFormat { kJson, kCsv };

inline void emit_report(const BiasReport& r, ReportFormat format, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report " + path.string());
  if (format == ReportFormat::kJson) os << to_json(r).dump(2) << '\n';
  else write_report_csv(os, r);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline void write_predictions_csv(std::ostream& os, const std::vector<PredictionRecord>& records) {
  os << "video_id,human_class,background_class,predicted\n";
  for (const auto& r : records)
    os << csv::quote(r.video_id) << ',' << csv::quote(r.human_class) << ',' << csv::quote(r.background_class) << ','
       << csv::quote(r.predicted.value_or(kAbstain)) << '\n';
}

inline std::vector<PredictionRecord> read_predictions_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || csv::split(line) != std::vector<std::string>{"video_id", "human_class",
                                                                            "background_class", "predicted"})
    throw std::invalid_argument("predictions csv: expected header video_id,human_class,background_class,predicted");
  std::vector<PredictionRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = csv::split(line);
    if (f.size() != 4)
      throw std::invalid_argument("predictions csv line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                  std::to_string(f.size()));
    PredictionRecord r{f[0], f[1], f[2], std::nullopt};
    if (f[3] != kAbstain) r.predicted = f[3];
    out.push_back(std::move(r));
  }
  return out;
}

struct SweepPoint {
  double x = 0;
  BiasCounts counts;
};

struct SweepSeries {
  std::vector<SweepPoint> points;  // ascending x
  bool shacc_nondecreasing = true;
  bool sberr_nondecreasing = true;
};

inline SweepSeries sweep_series(std::vector<std::pair<double, BiasReport>> results) {
  SweepSeries s;
  for (auto& [x, r] : results) s.points.push_back({x, r.overall});
  std::sort(s.points.begin(), s.points.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.x < b.x; });
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    const auto &a = s.points[i - 1], &b = s.points[i];
    if (a.x == b.x) throw std::invalid_argument("sweep_series: duplicate x value " + std::to_string(a.x));
    using metrics_detail::ratio_less;
    if (ratio_less(b.counts.human, b.counts.n, a.counts.human, a.counts.n)) s.shacc_nondecreasing = false;
    if (ratio_less(b.counts.background, b.counts.n, a.counts.background, a.counts.n)) s.sberr_nondecreasing = false;
  }
  return s;
}

inline void write_sweep_csv(std::ostream& os, const SweepSeries& s) {
  os << "x,shacc,sberr\n";
  char buf[64];
  for (const auto& p : s.points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.x);
    os << buf << ',' << format_percent(p.counts.human, p.counts.n) << ','
       << format_percent(p.counts.background, p.counts.n) << '\n';
  }
}

/// A five-way multiple-choice question built from a swap item.
struct McqItem {
  std::string video_id;
  std::vector<std::string> choices;  // A..E in order
  std::size_t human_index = 0;
  std::size_t background_index = 0;
  std::vector<std::size_t> distractor_indices;
  std::uint64_t seed = 0;

  friend bool operator==(const McqItem&, const McqItem&) = default;

  const std::string& human_class() const { return choices.at(human_index); }
  const std::string& background_class() const { return choices.at(background_index); }
};

inline char choice_letter(std::size_t i) { return static_cast<char>('A' + i); }

inline McqItem build_mcq(const std::string& video_id, const std::string& human_class,
                         const std::string& background_class, const std::vector<std::string>& vocabulary,
                         std::uint64_t seed) {
  const std::set<std::string> unique(vocabulary.begin(), vocabulary.end());
  if (unique.size() != vocabulary.size()) throw std::invalid_argument("build_mcq: vocabulary has duplicates");
  if (vocabulary.size() < 5) throw std::invalid_argument("build_mcq: vocabulary needs at least 5 classes");
  if (human_class == background_class) throw std::invalid_argument("build_mcq: human and background class coincide");
  if (!unique.count(human_class)) throw std::invalid_argument("build_mcq: unknown human class '" + human_class + "'");
  if (!unique.count(background_class))
    throw std::invalid_argument("build_mcq: unknown background class '" + background_class + "'");
  Rng rng(seed);
  std::vector<std::string> pool;
  for (const auto& v : vocabulary)
    if (v != human_class && v != background_class) pool.push_back(v);
  // partial Fisher-Yates: three draws without replacement
  for (std::size_t i = 0; i < 3; ++i) std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  std::vector<std::string> choices{human_class, background_class, pool[0], pool[1], pool[2]};
  std::vector<std::size_t> order{0, 1, 2, 3, 4};
  rng.shuffle(order);
  McqItem item;
  item.video_id = video_id;
  item.seed = seed;
  for (std::size_t pos = 0; pos < 5; ++pos) {
    item.choices.push_back(choices[order[pos]]);
    if (order[pos] == 0) item.human_index = pos;
    else if (order[pos] == 1) item.background_index = pos;
    else item.distractor_indices.push_back(pos);
  }
  return item;
}

/// Seeded shuffle, then the first floor(N * fraction) items form the tune set.
/// Returns (eval, tune).
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_tune_eval(std::vector<T> items, double tune_fraction,
                                                          std::uint64_t seed) {
  if (items.empty()) throw std::invalid_argument("split_tune_eval: no items");
  if (!(tune_fraction > 0 && tune_fraction < 1))
    throw std::invalid_argument("split_tune_eval: fraction must be in (0, 1)");
  Rng rng(derive_seed(seed, "tune-eval"));
  rng.shuffle(items);
  const auto n_tune = static_cast<std::size_t>(static_cast<double>(items.size()) * tune_fraction);
  std::vector<T> tune(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_tune));
  std::vector<T> eval(items.begin() + static_cast<std::ptrdiff_t>(n_tune), items.end());
  return {std::move(eval), std::move(tune)};
}

}  // namespace bglab
