#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "bglab/checkpoint.hpp"
#include "bglab/compositing.hpp"
#include "bglab/config.hpp"
#include "bglab/datasets.hpp"
#include "bglab/gradcheck_suite.hpp"
#include "bglab/metrics.hpp"
#include "bglab/models.hpp"
#include "bglab/prompt_loop.hpp"
#include "bglab/sandbox.hpp"

namespace bglab {

/// Bad input from the user: missing files, invalid arguments. Exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli {

namespace fs = std::filesystem;

struct Context {
  RunConfig cfg;
  fs::path out;
  std::ostream& log;    // human-readable progress
  std::ostream& trace;  // run.log sidecar
};

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline fs::path require_file(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError(key, 0, "required for this subcommand");
  if (!fs::exists(value)) throw ConfigError(key, 0, "no such file: " + value);
  return value;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Re-expresses every directory entry of `m` relative to `to`, except the
/// frames of items listed in `generated`, which already live under `to`.
inline DatasetManifest rebase(DatasetManifest m, const fs::path& from, const fs::path& to,
                              const std::set<std::string>& generated = {}) {
  auto move = [&](std::string& entry) { entry = relative_entry(resolve_dir(from, entry), to); };
  for (auto& item : m.items) {
    if (!generated.count(item.video_id)) move(item.frames_dir);
    if (item.masks_dir) move(*item.masks_dir);
    if (item.background_dir) move(*item.background_dir);
  }
  return m;
}

inline std::string manifest_dir(const fs::path& manifest_path) {
  return manifest_path.has_parent_path() ? manifest_path.parent_path().string() : ".";
}

inline void render_jobs(const Context& ctx, const std::vector<SwapJob>& jobs, const std::string& subdir,
                        const ClipStore& humans, const ClipStore& backgrounds) {
  parallel_for(jobs.size(), ctx.cfg.jobs, [&](std::size_t i) {
    save_frames(ctx.out / subdir / jobs[i].video_id, render_swap(jobs[i], humans, backgrounds));
  });
}

inline BackboneConfig backbone_for(const RunConfig& cfg, const DatasetManifest& m) {
  BackboneConfig bb = cfg.backbone;
  bb.num_classes = m.classes.size();
  bb.validate();
  return bb;
}

inline std::vector<Example> load_examples(const fs::path& manifest_path, const DatasetManifest& m,
                                          const BackboneConfig& bb, Variant variant) {
  std::vector<Example> out;
  for (const auto& item : m.items) {
    if (variant_needs_mask(variant) && !item.masks_dir)
      throw UsageError("variant " + variant_name(variant) + " needs masks; item " + item.video_id + " has none");
    const VideoClip clip = load_clip(manifest_dir(manifest_path), item);
    out.push_back(make_example(clip.frames, clip.masks, m.class_index(item.human_class), bb));
  }
  return out;
}

inline int gen_sandbox(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto data = generate_synthetic_sandbox(c.sandbox, c.per_class, static_cast<std::uint64_t>(c.seed));
  write_clips(ctx.out, data.manifest, data.clips);
  save_manifest(ctx.out / "manifest.json", data.manifest);
  write_text(ctx.out / "sandbox.json", to_json(c.sandbox).dump(2) + "\n");
  ctx.log << "wrote " << data.manifest.items.size() << " videos to " << (ctx.out / "manifest.json").string() << '\n';
  return 0;
}

inline int build_dataset(const Context& ctx) {
  const auto path = require_file(ctx.cfg.data.manifest, "data.manifest");
  DatasetManifest m = load_manifest(path);
  m.validate();
  for (const auto& item : m.items) {
    for (const auto* dir : {&item.frames_dir, item.masks_dir ? &*item.masks_dir : nullptr,
                            item.background_dir ? &*item.background_dir : nullptr}) {
      if (dir && !fs::is_directory(resolve_dir(manifest_dir(path), *dir)))
        throw UsageError("item " + item.video_id + ": missing directory " + *dir);
    }
  }
  auto [train, val] = split_train_val(m, ctx.cfg.train_fraction, static_cast<std::uint64_t>(ctx.cfg.seed));
  save_manifest(ctx.out / "train.json", rebase(train, manifest_dir(path), ctx.out));
  save_manifest(ctx.out / "val.json", rebase(val, manifest_dir(path), ctx.out));
  nlohmann::ordered_json summary;
  summary["items"] = m.items.size();
  summary["train"] = train.items.size();
  summary["val"] = val.items.size();
  for (const auto& label : m.classes) {
    const auto count = [&](const DatasetManifest& d) {
      return std::count_if(d.items.begin(), d.items.end(), [&](const ManifestItem& i) { return i.human_class == label; });
    };
    summary["per_class"][label] = {{"train", count(train)}, {"val", count(val)}};
  }
  write_text(ctx.out / "split.json", summary.dump(2) + "\n");
  ctx.log << "split " << m.items.size() << " items into " << train.items.size() << " train and "
          << val.items.size() << " val\n";
  return 0;
}

inline int augment(const Context& ctx) {
  const auto dpath = require_file(ctx.cfg.data.manifest, "data.manifest");
  const auto ppath = require_file(ctx.cfg.data.pool, "data.pool");
  const DatasetManifest dataset = load_manifest(dpath), pool = load_manifest(ppath);
  const auto result = build_augmented_set(dataset, pool, static_cast<std::uint64_t>(ctx.cfg.seed), "augmented");
  std::set<std::string> generated;
  for (const auto& job : result.jobs) generated.insert(job.video_id);
  if (ctx.cfg.render) {
    DatasetManifest needed_humans, needed_backgrounds;
    std::set<std::string> hid, bid;
    for (const auto& job : result.jobs) {
      if (hid.insert(job.human_item).second) needed_humans.items.push_back(dataset.find(job.human_item));
      if (bid.insert(job.background_item).second) needed_backgrounds.items.push_back(pool.find(job.background_item));
    }
    render_jobs(ctx, result.jobs, "augmented", load_clips(manifest_dir(dpath), needed_humans),
                load_clips(manifest_dir(ppath), needed_backgrounds));
  }
  save_manifest(ctx.out / "augmented.json", rebase(result.manifest, manifest_dir(dpath), ctx.out, generated));
  std::ostringstream skipped;
  for (const auto& id : result.skipped) skipped << id << '\n';
  write_text(ctx.out / "skipped.txt", skipped.str());
  ctx.log << "augmented " << dataset.items.size() << " items to " << result.manifest.items.size() << " ("
          << result.skipped.size() << " skipped without masks)\n";
  return 0;
}

inline int swap(const Context& ctx) {
  const auto path = require_file(ctx.cfg.data.manifest, "data.manifest");
  const DatasetManifest m = load_manifest(path);
  const auto seed = static_cast<std::uint64_t>(ctx.cfg.seed);
  const auto set = ctx.cfg.swap_count ? build_mini_action_swap(m, seed, ctx.cfg.swap_count, "swaps")
                                      : build_mini_action_swap(m, seed, std::nullopt, "swaps");
  std::set<std::string> generated;
  for (const auto& job : set.jobs) generated.insert(job.video_id);
  if (ctx.cfg.render) {
    const ClipStore clips = load_clips(manifest_dir(path), m);
    render_jobs(ctx, set.jobs, "swaps", clips, clips);
  }
  save_manifest(ctx.out / "swap.json", rebase(set.manifest, manifest_dir(path), ctx.out, generated));
  ctx.log << "built " << set.jobs.size() << " swap videos\n";
  return 0;
}

inline int train_cmd(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto tpath = require_file(c.data.train, "data.train");
  const DatasetManifest train_m = load_manifest(tpath);
  std::optional<DatasetManifest> val_m;
  if (!c.data.val.empty()) val_m = load_manifest(require_file(c.data.val, "data.val"));
  if (val_m && val_m->classes != train_m.classes) throw UsageError("train and val manifests have different classes");
  const BackboneConfig bb = backbone_for(c, train_m);
  const auto train_set = load_examples(tpath, train_m, bb, c.variant);
  const auto val_set = val_m ? load_examples(c.data.val, *val_m, bb, c.variant) : std::vector<Example>{};
  ActionModel model(c.variant, bb, derive_seed(static_cast<std::uint64_t>(c.seed), "model/init"));
  const auto result = train(model, train_set, val_set, c.train_config());
  save_checkpoint(ctx.out / "weights.blab", model.parameters());
  std::ostringstream history;
  write_history_csv(history, result.history);
  write_text(ctx.out / "history.csv", history.str());
  nlohmann::ordered_json summary;
  summary["variant"] = variant_name(c.variant);
  summary["classes"] = train_m.classes;
  summary["epochs_run"] = result.history.size();
  summary["best_epoch"] = result.best_epoch;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", result.best_val_loss);
  summary["best_val_loss"] = buf;
  write_text(ctx.out / "train.json", summary.dump(2) + "\n");
  ctx.log << "trained " << variant_name(c.variant) << " for " << result.history.size() << " epochs; best epoch "
          << result.best_epoch << '\n';
  return 0;
}

inline int eval_cmd(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto mpath = require_file(c.data.manifest, "data.manifest");
  const auto wpath = require_file(c.data.weights, "data.weights");
  const DatasetManifest m = load_manifest(mpath);
  for (const auto& item : m.items)
    if (!item.background_class) throw UsageError("item " + item.video_id + " has no background_class");
  const BackboneConfig bb = backbone_for(c, m);
  const auto examples = load_examples(mpath, m, bb, c.variant);
  ActionModel model(c.variant, bb, 0);
  assign_checkpoint(model.parameters(), load_checkpoint(wpath));

  constexpr std::size_t kBatch = 20;
  std::vector<std::size_t> predicted(examples.size());
  const std::size_t batches = (examples.size() + kBatch - 1) / kBatch;
  parallel_for(batches, c.jobs, [&](std::size_t b) {
    const std::size_t lo = b * kBatch, hi = std::min(examples.size(), lo + kBatch);
    const std::vector<Example> chunk(examples.begin() + static_cast<std::ptrdiff_t>(lo),
                                     examples.begin() + static_cast<std::ptrdiff_t>(hi));
    const auto labels = predict_classes(model, chunk, kBatch);
    std::copy(labels.begin(), labels.end(), predicted.begin() + static_cast<std::ptrdiff_t>(lo));
  });
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < m.items.size(); ++i)
    records.push_back({m.items[i].video_id, m.items[i].human_class, *m.items[i].background_class,
                       m.classes[predicted[i]]});
  std::ostringstream preds;
  write_predictions_csv(preds, records);
  write_text(ctx.out / "predictions.csv", preds.str());
  const auto report = make_report(records, {variant_name(c.variant), "", bb.frames, static_cast<std::uint64_t>(c.seed)});
  const bool json = c.report_format == "json";
  emit_report(report, json ? ReportFormat::kJson : ReportFormat::kCsv, ctx.out / (json ? "report.json" : "report.csv"));
  ctx.log << "SHAcc " << format_percent(report.overall.human, report.overall.n) << "%, SBErr "
          << format_percent(report.overall.background, report.overall.n) << "% over " << report.overall.n
          << " videos\n";
  return 0;
}

inline int mcq_cmd(const Context& ctx) {
  const auto path = require_file(ctx.cfg.data.manifest, "data.manifest");
  const DatasetManifest m = load_manifest(path);
  std::vector<std::string> vocab = m.classes;
  std::set<std::string> extra;
  for (const auto& item : m.items)
    if (item.background_class && std::find(vocab.begin(), vocab.end(), *item.background_class) == vocab.end())
      extra.insert(*item.background_class);
  vocab.insert(vocab.end(), extra.begin(), extra.end());
  const auto seed = static_cast<std::uint64_t>(ctx.cfg.seed);
  std::vector<McqItem> items;
  for (const auto& item : m.items) {
    if (!item.background_class) throw UsageError("item " + item.video_id + " has no background_class");
    items.push_back(build_mcq(item.video_id, item.human_class, *item.background_class, vocab,
                              derive_seed(seed, "mcq/" + item.video_id)));
  }
  const auto [eval_items, tune_items] = split_tune_eval(items, ctx.cfg.tune_fraction, seed);
  std::ostringstream e, t;
  write_mcq_items(e, eval_items);
  write_mcq_items(t, tune_items);
  write_text(ctx.out / "eval_items.jsonl", e.str());
  write_text(ctx.out / "tune_items.jsonl", t.str());
  ctx.log << "built " << items.size() << " questions: " << eval_items.size() << " eval, " << tune_items.size()
          << " tune\n";
  return 0;
}

inline std::string percent_pair(const BiasCounts& c) {
  return format_percent(c.human, c.n) + "," + format_percent(c.background, c.n);
}

inline int prompt_tune(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto items = load_mcq_items(require_file(c.data.items, "data.items"));
  std::optional<std::vector<McqItem>> eval_items;
  std::vector<PromptSpec> manual;
  if (!c.data.suite.empty() || !c.data.eval_items.empty()) {
    manual = manual_prompts_from_json(load_json_file(require_file(c.data.suite, "data.suite")));
    eval_items = load_mcq_items(require_file(c.data.eval_items, "data.eval_items"));
  }

  std::unique_ptr<ChatClient> engineer, solver;
  std::ostringstream engineer_log, solver_log;
  std::unique_ptr<ChatClient> live_engineer, live_solver;
  if (!c.data.replay.empty()) {
    auto replay = std::make_shared<ReplayChatClient>(ReplayChatClient::from_file(require_file(c.data.replay, "data.replay")));
    engineer = std::make_unique<FunctionChatClient>([replay](const ChatRequest& r) { return replay->complete(r); });
    solver = std::make_unique<FunctionChatClient>([replay](const ChatRequest& r) { return replay->complete(r); });
  } else {
    live_engineer = std::make_unique<HttpChatClient>(c.prompt.engineer);
    live_solver = std::make_unique<HttpChatClient>(c.prompt.solver);
    engineer = std::make_unique<RecordingChatClient>(*live_engineer, engineer_log);
    solver = std::make_unique<RecordingChatClient>(*live_solver, solver_log);
  }

  EvalOptions eval_opts{c.prompt.solver.model, c.prompt.solver.temperature, c.jobs};
  if (eval_items) {
    const auto suite = run_manual_suite(manual, *eval_items, *solver, eval_opts);
    std::ostringstream csv;
    csv << "prompt_id,shacc,sberr,abstain,errors\n";
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    for (const auto& r : suite) {
      csv << csv::quote(r.spec.id) << ',' << percent_pair(r.report.overall) << ','
          << format_percent(r.report.overall.abstain, r.report.overall.n) << ',' << r.errors.size() << '\n';
      reports.push_back(to_json(r.report));
      ctx.log << r.spec.id << ": SHAcc " << format_percent(r.report.overall.human, r.report.overall.n)
              << "%, SBErr " << format_percent(r.report.overall.background, r.report.overall.n) << "%\n";
    }
    write_text(ctx.out / "manual.csv", csv.str());
    write_text(ctx.out / "manual_reports.json", reports.dump(2) + "\n");
  }

  AutoLoopConfig loop;
  loop.iterations = c.prompt.iterations;
  loop.engineer_model = c.prompt.engineer.model;
  loop.engineer_temperature = c.prompt.engineer.temperature;
  loop.solver = eval_opts;
  loop.choice_prefix = c.prompt.choice_prefix;
  const fs::path checkpoint = ctx.out / "loop_state.json";
  fs::create_directories(ctx.out);
  LoopState resume;
  if (fs::exists(checkpoint)) {
    resume = load_loop_state(checkpoint);
    if (resume.iterations.size() > loop.iterations)
      throw UsageError("checkpoint has more iterations than requested");
    ctx.trace << "resuming from iteration " << resume.iterations.size() + 1 << '\n';
  }
  const auto state = run_auto_loop(loop, *engineer, *solver, items, checkpoint, std::move(resume));
  std::ostringstream csv;
  write_iterations_csv(csv, state.iterations);
  write_text(ctx.out / "iterations.csv", csv.str());
  if (!state.iterations.empty()) {
    const auto& best = select_best(state.iterations);
    nlohmann::ordered_json j;
    j["index"] = best.index;
    j["prompt"] = best.prompt;
    j["shacc"] = format_percent(best.counts.human, best.counts.n);
    j["sberr"] = format_percent(best.counts.background, best.counts.n);
    write_text(ctx.out / "best.json", j.dump(2) + "\n");
    ctx.log << "best prompt: iteration " << best.index << " (SHAcc " << j["shacc"].get<std::string>() << "%, SBErr "
            << j["sberr"].get<std::string>() << "%)\n";
  }
  if (c.data.replay.empty()) {
    std::vector<std::string> lines;
    for (const auto* log : {&engineer_log, &solver_log}) {
      std::istringstream is(log->str());
      for (std::string line; std::getline(is, line);) lines.push_back(line);
    }
    std::sort(lines.begin(), lines.end());
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_text(ctx.out / "transcript.jsonl", text);
  }
  return 0;
}

inline std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open predictions " + path.string());
  return read_predictions_csv(is);
}

inline int report_cmd(const Context& ctx) {
  const auto& c = ctx.cfg;
  if (c.data.predictions.empty() && c.sweep.empty())
    throw ConfigError("data.predictions", 0, "report needs predictions or a sweep");
  if (!c.data.predictions.empty()) {
    const auto records = load_predictions(require_file(c.data.predictions, "data.predictions"));
    const auto report = make_report(records, {"", "", 0, static_cast<std::uint64_t>(c.seed)});
    const bool json = c.report_format == "json";
    emit_report(report, json ? ReportFormat::kJson : ReportFormat::kCsv, ctx.out / (json ? "report.json" : "report.csv"));
    const auto breakdown = per_background_breakdown(records, c.top_k);
    std::ostringstream os;
    os << "table,rank,background_class,n,shacc,sberr\n";
    for (const auto& [name, rows] : {std::pair{"high", &breakdown.high_bias}, std::pair{"low", &breakdown.low_bias}})
      for (std::size_t i = 0; i < rows->size(); ++i)
        os << name << ',' << i + 1 << ',' << csv::quote((*rows)[i].background_class) << ',' << (*rows)[i].counts.n
           << ',' << percent_pair((*rows)[i].counts) << '\n';
    write_text(ctx.out / "bias_extremes.csv", os.str());
    ctx.log << "SHAcc " << format_percent(report.overall.human, report.overall.n) << "%, SBErr "
            << format_percent(report.overall.background, report.overall.n) << "%\n";
  }
  if (!c.sweep.empty()) {
    std::vector<std::pair<double, BiasReport>> points;
    std::istringstream is(c.sweep);
    for (std::string entry; std::getline(is, entry, ',');) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos) throw ConfigError("metrics.sweep", 0, "expected x=path, got '" + entry + "'");
      double x = 0;
      try {
        std::size_t used = 0;
        x = std::stod(entry.substr(0, eq), &used);
        if (used != eq) throw std::invalid_argument(entry);
      } catch (const std::exception&) {
        throw ConfigError("metrics.sweep", 0, "bad x value in '" + entry + "'");
      }
      points.emplace_back(x, make_report(load_predictions(require_file(entry.substr(eq + 1), "metrics.sweep"))));
    }
    std::ostringstream os;
    write_sweep_csv(os, sweep_series(points));
    write_text(ctx.out / "sweep.csv", os.str());
  }
  return 0;
}

inline int gradcheck_cmd(const Context& ctx) {
  const auto checks = run_gradcheck_suite();
  std::ostringstream csv;
  csv << "check,parameter,coords,max_rel_error,passed\n";
  bool all = true;
  for (const auto& check : checks) {
    all = all && check.report.passed;
    for (const auto& p : check.report.params) {
      char err[32];
      std::snprintf(err, sizeof err, "%.3e", p.max_rel_error);
      csv << check.name << ',' << p.name << ',' << p.coords_checked << ',' << err << ','
          << (p.max_rel_error < 1e-4 ? "yes" : "no") << '\n';
    }
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", check.report.max_rel_error);
    ctx.log << (check.report.passed ? "PASS " : "FAIL ") << check.name << " (max rel error " << err << ")\n";
  }
  write_text(ctx.out / "gradcheck.csv", csv.str());
  return all ? 0 : 2;
}

struct Subcommand {
  const char* name;
  const char* help;
  int (*fn)(const Context&);
};

inline const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> list{
      {"gen-sandbox", "generate a synthetic bias sandbox (videos, masks, manifest)", gen_sandbox},
      {"build-dataset", "validate a manifest and split it into train/val", build_dataset},
      {"augment", "double a training set with background-swapped copies", augment},
      {"swap", "build and render a human/background swap test set", swap},
      {"train", "train an action model", train_cmd},
      {"eval", "predict on a swap set and report SHAcc/SBErr", eval_cmd},
      {"mcq", "build five-way multiple-choice questions and the tune/eval split", mcq_cmd},
      {"prompt-tune", "manual prompt suite and automated prompt tuning", prompt_tune},
      {"report", "bias report, top-k tables and sweep plot data from predictions", report_cmd},
      {"gradcheck", "finite-difference checks of every primitive and model variant", gradcheck_cmd},
  };
  return list;
}

/// Splits leftover arguments into (key, value) overrides.
inline std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) throw UsageError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw UsageError("option '" + a + "' needs a value");
      out.emplace_back(a.substr(2), args[++i]);
    }
  }
  return out;
}

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace cli

/// Entry point of the bglab executable. 0 success, 1 user error, 2 internal error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Background-bias lab: sandbox data, action models, swap evaluation and prompt tuning.\n"
               "Any config key can be overridden with --key value (leaf name or dotted path).",
               "bglab"};
  app.require_subcommand(1);
  std::map<std::string, std::string> config_paths;
  for (const auto& s : cli::subcommands()) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_paths[s.name], "JSON run config");
    sub->allow_extras();
  }
  if (argc > 1 && argv[1][0] != '-' &&
      std::none_of(cli::subcommands().begin(), cli::subcommands().end(),
                   [&](const cli::Subcommand& s) { return std::string(argv[1]) == s.name; })) {
    err << "bglab: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "bglab: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  CLI::App* sub = app.get_subcommands().front();
  const auto it = std::find_if(cli::subcommands().begin(), cli::subcommands().end(),
                               [&](const cli::Subcommand& s) { return sub->get_name() == s.name; });

  std::ostringstream trace;
  std::optional<std::filesystem::path> out_dir;
  int code = 0;
  try {
    const auto overrides = cli::parse_overrides(sub->remaining());
    const auto& cfg_path = config_paths[it->name];
    RunConfig cfg = cfg_path.empty() ? parse_config("", overrides) : load_config(cfg_path, overrides);
    out_dir = cfg.out;
    std::filesystem::create_directories(cfg.out);
    trace << "started " << cli::timestamp() << '\n' << "command";
    for (int i = 1; i < argc; ++i) trace << ' ' << argv[i];
    trace << "\nconfig " << to_json(cfg).dump() << '\n';
    code = it->fn({cfg, cfg.out, out, trace});
  } catch (const ConfigError& e) {
    err << "bglab " << it->name << ": " << e.what() << '\n';
    code = 1;
  } catch (const UsageError& e) {
    err << "bglab " << it->name << ": " << e.what() << '\n';
    code = 1;
  } catch (const ManifestError& e) {
    err << "bglab " << it->name << ": " << e.what() << '\n';
    code = 1;
  } catch (const std::invalid_argument& e) {
    err << "bglab " << it->name << ": " << e.what() << '\n';
    code = 1;
  } catch (const std::exception& e) {
    err << "bglab " << it->name << ": internal error: " << e.what() << '\n';
    code = 2;
  }
  if (out_dir && std::filesystem::is_directory(*out_dir)) {
    trace << "finished " << cli::timestamp() << " exit " << code << '\n';
    std::ofstream(*out_dir / "run.log", std::ios::app) << trace.str();
  }
  return code;
}

}  // namespace bglab
