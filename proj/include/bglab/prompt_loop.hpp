#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bglab/chat.hpp"
#include "bglab/metrics.hpp"
#include "bglab/prompt.hpp"

namespace bglab {

struct EvalOptions {
  std::string model = "gpt-4o-mini";
  double temperature = 0;
  std::size_t jobs = 1;  // concurrent solver calls

  friend bool operator==(const EvalOptions&, const EvalOptions&) = default;
};

struct EvalResult {
  std::vector<PredictionRecord> records;  // item order
  BiasCounts counts;
  std::vector<std::string> errors;  // one line per item mapped to ABSTAIN by an endpoint failure
};

/// Asks the solver every item and scores the parsed answers. Endpoint
/// failures become ABSTAIN; any other exception aborts the evaluation.
inline EvalResult evaluate_prompt(const PromptSpec& spec, const std::vector<McqItem>& items, ChatClient& solver,
                                  const EvalOptions& opts = {}) {
  if (items.empty()) throw std::invalid_argument("evaluate_prompt: no items");
  spec.validate();
  EvalResult result;
  result.records.resize(items.size());
  std::vector<std::string> item_errors(items.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      const McqItem& item = items[i];
      PredictionRecord rec{item.video_id, item.human_class(), item.background_class(), std::nullopt};
      try {
        const auto answer = solver.complete({opts.model, render_prompt(spec, item), opts.temperature});
        if (const auto idx = parse_answer(answer, item)) rec.predicted = item.choices[*idx];
      } catch (const ChatError& e) {
        item_errors[i] = item.video_id + ": " + e.what();
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = items.size();
        return;
      }
      result.records[i] = std::move(rec);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, items.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (auto& e : item_errors)
    if (!e.empty()) result.errors.push_back(std::move(e));
  result.counts = compute_metrics(result.records);
  return result;
}

struct SuiteResult {
  PromptSpec spec;
  BiasReport report;
  std::vector<std::string> errors;
};

inline std::vector<SuiteResult> run_manual_suite(const std::vector<PromptSpec>& specs,
                                                 const std::vector<McqItem>& items, ChatClient& solver,
                                                 const EvalOptions& opts = {}) {
  if (items.empty()) throw std::invalid_argument("run_manual_suite: no items");
  if (specs.empty()) throw std::invalid_argument("run_manual_suite: no prompts");
  std::vector<SuiteResult> out;
  for (const auto& spec : specs) {
    auto eval = evaluate_prompt(spec, items, solver, opts);
    BiasReport report{eval.counts, per_background_breakdown(eval.records).rows, {opts.model, spec.id, 0, 0}};
    out.push_back({spec, std::move(report), std::move(eval.errors)});
  }
  return out;
}

struct PromptIteration {
  std::size_t index = 0;  // 1-based
  std::string prompt;
  bool failed = false;
  BiasCounts counts;  // meaningful when !failed
  std::string note;

  double shacc() const { return counts.shacc(); }
  double sberr() const { return counts.sberr(); }

  friend bool operator==(const PromptIteration&, const PromptIteration&) = default;
};

struct LoopState {
  std::vector<ChatMessage> history;
  std::vector<PromptIteration> iterations;

  friend bool operator==(const LoopState&, const LoopState&) = default;
};

struct AutoLoopConfig {
  std::size_t iterations = 20;
  std::string engineer_model = "gpt-4.1";
  double engineer_temperature = 0;
  EvalOptions solver;
  std::string choice_prefix;
  std::string system_message =
      "You are a prompt engineer. You write instructions for a vision-language model that watches a video and "
      "answers a five-way multiple-choice question about the action a person performs.";
  std::string seed_instruction =
      "Design a prompt for this task that improves accuracy and reduces background bias, so that the model "
      "identifies the action from the person rather than from the scene. The answer choices are appended after "
      "your prompt. Reply with the prompt in double quotes.";
  std::string reask_message = "Your reply did not contain a usable prompt. Reply with only the prompt, in double quotes.";
};

inline std::string feedback_message(const PromptIteration& it) {
  if (it.failed)
    return "Your previous reply did not contain a usable prompt. Propose a prompt that improves accuracy and "
           "reduces background bias. Reply with the prompt in double quotes.";
  return "On the tuning set that prompt scored SHAcc: " + format_percent(it.counts.human, it.counts.n) +
         "%, SBErr: " + format_percent(it.counts.background, it.counts.n) +
         "%. Propose an improved prompt that raises SHAcc and lowers SBErr. Reply with the prompt in double quotes.";
}

inline nlohmann::json to_json(const PromptIteration& it) {
  nlohmann::json j{{"index", it.index}, {"prompt", it.prompt}, {"status", it.failed ? "failed" : "ok"}};
  if (!it.failed)
    j["counts"] = {{"n", it.counts.n},
                   {"human", it.counts.human},
                   {"background", it.counts.background},
                   {"abstain", it.counts.abstain},
                   {"other", it.counts.other}};
  if (!it.note.empty()) j["note"] = it.note;
  return j;
}

inline PromptIteration prompt_iteration_from_json(const nlohmann::json& j) {
  PromptIteration it;
  it.index = j.at("index").get<std::size_t>();
  it.prompt = j.at("prompt").get<std::string>();
  it.failed = j.at("status").get<std::string>() == "failed";
  if (!it.failed) {
    const auto& c = j.at("counts");
    it.counts = {c.at("n").get<std::size_t>(), c.at("human").get<std::size_t>(),
                 c.at("background").get<std::size_t>(), c.at("abstain").get<std::size_t>(),
                 c.at("other").get<std::size_t>()};
  }
  it.note = j.value("note", "");
  return it;
}

inline nlohmann::json to_json(const LoopState& s) {
  nlohmann::json j{{"history", nlohmann::json::array()}, {"iterations", nlohmann::json::array()}};
  for (const auto& m : s.history) j["history"].push_back(to_json(m));
  for (const auto& it : s.iterations) j["iterations"].push_back(to_json(it));
  return j;
}

inline LoopState loop_state_from_json(const nlohmann::json& j) {
  LoopState s;
  for (const auto& m : j.at("history")) s.history.push_back(chat_message_from_json(m));
  for (const auto& it : j.at("iterations")) s.iterations.push_back(prompt_iteration_from_json(it));
  if (s.history.size() != 1 + 2 * s.iterations.size())
    throw std::invalid_argument("loop checkpoint: history length does not match iteration count");
  for (std::size_t i = 0; i < s.iterations.size(); ++i)
    if (s.iterations[i].index != i + 1) throw std::invalid_argument("loop checkpoint: iteration indices not contiguous");
  return s;
}

inline void save_loop_state(const std::filesystem::path& path, const LoopState& s) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os << to_json(s).dump(2) << '\n';
    if (!os) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline LoopState load_loop_state(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return loop_state_from_json(nlohmann::json::parse(is));
}

/// Engineer proposes, solver is scored on the tune items, scores are fed
/// back. Each iteration appends one user and one assistant message. Pass a
/// previously saved state to resume.
inline LoopState run_auto_loop(const AutoLoopConfig& cfg, ChatClient& engineer, ChatClient& solver,
                               const std::vector<McqItem>& tune_items,
                               const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                               LoopState state = {}) {
  if (tune_items.empty()) throw std::invalid_argument("run_auto_loop: no tune items");
  if (state.history.empty()) {
    if (!state.iterations.empty()) throw std::invalid_argument("run_auto_loop: iterations without history");
    state.history.push_back({"system", cfg.system_message, std::nullopt});
  } else if (state.history.front().role != "system" || state.history.size() != 1 + 2 * state.iterations.size()) {
    throw std::invalid_argument("run_auto_loop: inconsistent resume state");
  }
  for (std::size_t index = state.iterations.size() + 1; index <= cfg.iterations; ++index) {
    const ChatMessage user{"user", index == 1 ? cfg.seed_instruction : feedback_message(state.iterations.back()),
                           std::nullopt};
    std::vector<ChatMessage> messages = state.history;
    messages.push_back(user);
    PromptIteration it;
    it.index = index;
    std::string reply;
    std::optional<std::string> prompt;
    try {
      reply = engineer.complete({cfg.engineer_model, messages, cfg.engineer_temperature});
      prompt = extract_prompt(reply);
      if (!prompt) {
        auto reask = messages;
        reask.push_back({"assistant", reply, std::nullopt});
        reask.push_back({"user", cfg.reask_message, std::nullopt});
        reply = engineer.complete({cfg.engineer_model, reask, cfg.engineer_temperature});
        prompt = extract_prompt(reply);
        if (!prompt) it.note = "no prompt in reply after re-ask";
      }
    } catch (const ChatError& e) {
      it.note = std::string("engineer request failed: ") + e.what();
    }
    if (prompt) {
      it.prompt = *prompt;
      try {
        char id[32];
        std::snprintf(id, sizeof id, "auto_%02zu", index);
        const auto spec = make_prompt_spec(id, *prompt, cfg.choice_prefix, PromptOrigin::kAuto);
        auto eval = evaluate_prompt(spec, tune_items, solver, cfg.solver);
        it.counts = eval.counts;
        if (!eval.errors.empty()) it.note = std::to_string(eval.errors.size()) + " solver requests failed";
      } catch (const std::invalid_argument& e) {
        it.note = e.what();
        prompt.reset();
      }
    }
    it.failed = !prompt;
    state.history.push_back(user);
    state.history.push_back({"assistant", reply, std::nullopt});
    state.iterations.push_back(std::move(it));
    if (checkpoint) save_loop_state(*checkpoint, state);
  }
  return state;
}

/// Lowest SBErr, then highest SHAcc, then lowest index. Compared exactly on counts.
inline const PromptIteration& select_best(const std::vector<PromptIteration>& iterations) {
  const PromptIteration* best = nullptr;
  auto cmp = [](std::size_t ak, std::size_t an, std::size_t bk, std::size_t bn) {
    const auto l = static_cast<unsigned __int128>(ak) * bn, r = static_cast<unsigned __int128>(bk) * an;
    return l < r ? -1 : (l > r ? 1 : 0);
  };
  for (const auto& it : iterations) {
    if (it.failed) continue;
    if (!best) {
      best = &it;
      continue;
    }
    const int sb = cmp(it.counts.background, it.counts.n, best->counts.background, best->counts.n);
    const int sh = cmp(it.counts.human, it.counts.n, best->counts.human, best->counts.n);
    if (sb < 0 || (sb == 0 && (sh > 0 || (sh == 0 && it.index < best->index)))) best = &it;
  }
  if (!best) throw std::invalid_argument("select_best: no successful iterations");
  return *best;
}

/// index,prompt,shacc,sberr,status
inline void write_iterations_csv(std::ostream& os, const std::vector<PromptIteration>& iterations) {
  os << "index,prompt,shacc,sberr,status\n";
  for (const auto& it : iterations) {
    os << it.index << ',' << csv::quote(it.prompt) << ',';
    if (it.failed) os << ",,failed\n";
    else
      os << format_percent(it.counts.human, it.counts.n) << ',' << format_percent(it.counts.background, it.counts.n)
         << ",ok\n";
  }
}

}  // namespace bglab
