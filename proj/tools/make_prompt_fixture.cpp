// Builds the offline prompt-tuning fixture: MCQ item files plus a recorded
// chat transcript whose replay reproduces the scores in a prompt-suite file.
//
// usage: make_prompt_fixture <prompt-suite.json> <out-dir>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bglab/prompt_loop.hpp"

using namespace bglab;

namespace {

struct Target {
  std::size_t human = 0;
  std::size_t background = 0;
};

// Smallest counts whose two-decimal rendering over n matches the listed scores.
Target counts_for(const std::string& shacc, const std::string& sberr, std::size_t n) {
  Target t;
  bool found_h = false, found_b = false;
  for (std::size_t k = 0; k <= n && !(found_h && found_b); ++k) {
    if (!found_h && format_percent(k, n) == shacc) t.human = k, found_h = true;
    if (!found_b && format_percent(k, n) == sberr) t.background = k, found_b = true;
  }
  if (!found_h || !found_b || t.human + t.background > n)
    throw std::runtime_error("no counts over " + std::to_string(n) + " items give " + shacc + " / " + sberr);
  return t;
}

std::vector<McqItem> make_items(const std::string& prefix, std::size_t count, const std::vector<std::string>& vocab,
                                std::uint64_t seed) {
  std::vector<McqItem> items;
  for (std::size_t k = 0; k < count; ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "%s_%05zu", prefix.c_str(), k);
    Rng rng(derive_seed(seed, std::string("items/") + id));
    const std::size_t h = rng.uniform_index(vocab.size());
    std::size_t b = rng.uniform_index(vocab.size() - 1);
    if (b >= h) ++b;
    items.push_back(build_mcq(id, vocab[h], vocab[b], vocab, derive_seed(seed, std::string("mcq/") + id)));
  }
  return items;
}

std::string format_answer(const McqItem& item, std::size_t idx, std::uint64_t style) {
  const char L = choice_letter(idx);
  const std::string l(1, static_cast<char>(L - 'A' + 'a'));
  const std::string& label = item.choices[idx];
  switch (style % 8) {
    case 0: return std::string(1, L);
    case 1: return "(" + std::string(1, L) + ")";
    case 2: return "Answer: " + std::string(1, L);
    case 3: return std::string(1, L) + ". " + label;
    case 4: return "The answer is " + std::string(1, L) + ".";
    case 5: return label;
    case 6: return "The person appears to be doing " + label + ", so " + std::string(1, L) + ").";
    default: return l;
  }
}

std::string abstain_answer(const McqItem& item, std::uint64_t style) {
  switch (style % 3) {
    case 0: return "I cannot tell which action is shown.";
    case 1: return "Unable to determine from this clip.";
    default: return "It is either " + item.choices[0] + " or " + item.choices[1] + ".";
  }
}

// What a scripted solver answers for each (prompt, item) pair.
struct Script {
  std::map<std::string, std::map<std::string, std::string>> answers;  // prompt key -> video id -> answer
};

std::string prompt_key(const std::string& question, const std::string& prefix) { return question + "\x1f" + prefix; }

void script_prompt(Script& script, const std::string& key, const std::vector<McqItem>& items, Target target,
                   std::uint64_t seed) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "order/" + key));
  rng.shuffle(order);
  auto& answers = script.answers[key];
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const McqItem& item = items[order[rank]];
    Rng style_rng(derive_seed(seed, "style/" + key + "/" + item.video_id));
    const std::uint64_t style = style_rng.next_u64();
    std::string answer;
    if (rank < target.human) {
      answer = format_answer(item, item.human_index, style);
    } else if (rank < target.human + target.background) {
      answer = format_answer(item, item.background_index, style);
    } else if (style_rng.bernoulli(0.85)) {
      answer = format_answer(item, item.distractor_indices[style_rng.uniform_index(3)], style);
    } else {
      answer = abstain_answer(item, style);
    }
    answers[item.video_id] = answer;
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: make_prompt_fixture <prompt-suite.json> <out-dir>\n";
    return 1;
  }
  try {
    const auto suite = load_json_file(argv[1]);
    const std::filesystem::path out = argv[2];
    std::filesystem::create_directories(out);
    const auto& fx = suite.at("fixture");
    const auto seed = fx.at("seed").get<std::uint64_t>();
    std::vector<std::string> vocab;
    for (std::size_t k = 0; k < fx.at("vocabulary_size").get<std::size_t>(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "action_%02zu", k);
      vocab.push_back(name);
    }
    const auto eval_items = make_items("eval", fx.at("eval_items").get<std::size_t>(), vocab, seed);
    const auto tune_items = make_items("tune", fx.at("tune_items").get<std::size_t>(), vocab, seed);

    Script script;
    const auto manual = manual_prompts_from_json(suite);
    for (std::size_t i = 0; i < manual.size(); ++i) {
      const auto& row = suite["manual"][i];
      script_prompt(script, prompt_key(row.at("question").get<std::string>(), manual[i].prefix), eval_items,
                    counts_for(row.at("shacc").get<std::string>(), row.at("sberr").get<std::string>(), eval_items.size()), seed);
    }
    std::vector<std::string> auto_prompts;
    for (const auto& row : suite.at("auto")) {
      auto_prompts.push_back(row.at("prompt").get<std::string>());
      script_prompt(script, prompt_key(auto_prompts.back(), ""), tune_items,
                    counts_for(row.at("shacc").get<std::string>(), row.at("sberr").get<std::string>(), tune_items.size()), seed);
    }

    const AutoLoopConfig loop_cfg;
    const EvalOptions eval_opts;
    FunctionChatClient responder([&](const ChatRequest& req) -> std::string {
      if (req.model == loop_cfg.engineer_model) {
        const bool reask = req.messages.back().content == loop_cfg.reask_message;
        const std::size_t index = (reask ? req.messages.size() - 2 : req.messages.size()) / 2;
        const std::string& p = auto_prompts.at(index - 1);
        if (index == 7 && !reask) return "Sure, here is a new prompt: \"" + p.substr(0, 30);
        switch (index % 3) {
          case 0: return "Here is a refined prompt:\n\n\"" + p + "\"";
          case 1: return "\"" + p + "\"";
          default: return p;
        }
      }
      const ChatMessage& m = req.messages.back();
      const auto& text = m.content;
      const auto split = text.find("\nA. ");
      const std::string question = text.substr(0, split);
      const std::string first_choice = text.substr(split + 4, text.find('\n', split + 4) - split - 4);
      std::string prefix;
      if (const auto sp = first_choice.rfind(' '); sp != std::string::npos) prefix = first_choice.substr(0, sp);
      const auto& answers = script.answers.at(prompt_key(question, prefix));
      return answers.at(m.media->substr(std::string("video://").size()));
    });

    std::ofstream transcript(out / "transcript.jsonl");
    RecordingChatClient recorder(responder, transcript);
    const auto manual_results = run_manual_suite(manual, eval_items, recorder, eval_opts);
    AutoLoopConfig cfg = loop_cfg;
    cfg.iterations = auto_prompts.size();
    const auto state = run_auto_loop(cfg, recorder, recorder, tune_items);
    transcript.close();

    std::ofstream(out / "eval_items.jsonl") << [&] {
      std::ostringstream os;
      write_mcq_items(os, eval_items);
      return os.str();
    }();
    std::ofstream(out / "tune_items.jsonl") << [&] {
      std::ostringstream os;
      write_mcq_items(os, tune_items);
      return os.str();
    }();

    int mismatches = 0;
    for (std::size_t i = 0; i < manual_results.size(); ++i) {
      const auto& c = manual_results[i].report.overall;
      const auto& row = suite["manual"][i];
      if (format_percent(c.human, c.n) != row["shacc"] || format_percent(c.background, c.n) != row["sberr"]) {
        std::cerr << "manual prompt " << manual_results[i].spec.id << " does not reproduce its scores\n";
        ++mismatches;
      }
    }
    for (std::size_t i = 0; i < state.iterations.size(); ++i) {
      const auto& it = state.iterations[i];
      const auto& row = suite["auto"][i];
      if (it.failed || it.prompt != row["prompt"] || format_percent(it.counts.human, it.counts.n) != row["shacc"] ||
          format_percent(it.counts.background, it.counts.n) != row["sberr"]) {
        std::cerr << "iteration " << it.index << " does not reproduce its scores\n";
        ++mismatches;
      }
    }
    if (mismatches) return 1;
    std::cout << "wrote " << eval_items.size() << " eval items, " << tune_items.size() << " tune items to "
              << out.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "make_prompt_fixture: " << e.what() << '\n';
    return 2;
  }
}
