#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bglab/chat.hpp"
#include "bglab/metrics.hpp"

namespace bglab {

inline constexpr std::string_view kChoicesPlaceholder = "{choices}";

enum class PromptOrigin { kManual, kAuto };

struct PromptSpec {
  std::string id;
  std::string template_text;  // contains {choices} exactly once
  std::string prefix;         // prepended to every choice label when non-empty
  PromptOrigin origin = PromptOrigin::kManual;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;

  void validate() const {
    const auto first = template_text.find(kChoicesPlaceholder);
    if (first == std::string::npos)
      throw std::invalid_argument("prompt '" + id + "': template has no {choices} placeholder");
    if (template_text.find(kChoicesPlaceholder, first + 1) != std::string::npos)
      throw std::invalid_argument("prompt '" + id + "': template has more than one {choices} placeholder");
  }
};

/// A question followed by the choice block on the next line.
inline PromptSpec make_prompt_spec(std::string id, const std::string& question, std::string prefix = "",
                                   PromptOrigin origin = PromptOrigin::kManual) {
  PromptSpec spec{std::move(id), question + "\n" + std::string(kChoicesPlaceholder), std::move(prefix), origin};
  spec.validate();
  return spec;
}

inline std::string origin_name(PromptOrigin o) { return o == PromptOrigin::kManual ? "manual" : "auto"; }

inline nlohmann::json to_json(const PromptSpec& s) {
  return {{"id", s.id}, {"template", s.template_text}, {"prefix", s.prefix}, {"origin", origin_name(s.origin)}};
}

inline PromptSpec prompt_spec_from_json(const nlohmann::json& j) {
  PromptSpec s;
  s.id = j.at("id").get<std::string>();
  if (j.contains("template")) s.template_text = j.at("template").get<std::string>();
  else s.template_text = j.at("question").get<std::string>() + "\n" + std::string(kChoicesPlaceholder);
  s.prefix = j.value("prefix", "");
  const auto origin = j.value("origin", "manual");
  if (origin == "manual") s.origin = PromptOrigin::kManual;
  else if (origin == "auto") s.origin = PromptOrigin::kAuto;
  else throw std::invalid_argument("prompt '" + s.id + "': unknown origin '" + origin + "'");
  s.validate();
  return s;
}

/// Prompt specs listed under "manual" in a prompt-suite file.
inline std::vector<PromptSpec> manual_prompts_from_json(const nlohmann::json& j) {
  std::vector<PromptSpec> out;
  for (const auto& entry : j.at("manual")) out.push_back(prompt_spec_from_json(entry));
  return out;
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(is);
}

inline std::string render_choices(const PromptSpec& spec, const McqItem& item) {
  std::string out;
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    if (i) out += '\n';
    out += choice_letter(i);
    out += ". ";
    if (!spec.prefix.empty()) out += spec.prefix + " ";
    out += item.choices[i];
  }
  return out;
}

/// One user message: the template with its placeholder replaced by lettered choices.
inline std::vector<ChatMessage> render_prompt(const PromptSpec& spec, const McqItem& item) {
  spec.validate();
  if (item.choices.size() != 5) throw std::invalid_argument("render_prompt: item must have 5 choices");
  std::string text = spec.template_text;
  text.replace(text.find(kChoicesPlaceholder), kChoicesPlaceholder.size(), render_choices(spec, item));
  return {ChatMessage{"user", std::move(text), "video://" + item.video_id}};
}

namespace prompt_detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace prompt_detail

/// Index of the first answer letter in `text`, if any. A letter A-E (either
/// case) standing alone between non-alphanumeric characters counts when it is
/// an upper-case B-E, or when it is opened by '(' or '[', or when it is
/// followed by one of . ) ] : , ; - or by a line end.
inline std::optional<std::size_t> find_answer_letter(std::string_view text) {
  using prompt_detail::is_alnum;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (up < 'A' || up > 'E') continue;
    if (i > 0 && is_alnum(text[i - 1])) continue;
    if (i + 1 < text.size() && is_alnum(text[i + 1])) continue;
    const bool opened = i > 0 && (text[i - 1] == '(' || text[i - 1] == '[');
    const bool closed = i + 1 == text.size() || std::string_view(".)]:,;-\n\r").find(text[i + 1]) != std::string_view::npos;
    const bool bare_upper = c >= 'B' && c <= 'E';
    if (opened || closed || bare_upper) return static_cast<std::size_t>(up - 'A');
  }
  return std::nullopt;
}

/// Choice index named by a model response, or nullopt for ABSTAIN.
/// Letters win; otherwise exactly one choice label must occur in the text.
inline std::optional<std::size_t> parse_answer(std::string_view response, const McqItem& item) {
  if (const auto letter = find_answer_letter(response); letter && *letter < item.choices.size()) return letter;
  const std::string text = prompt_detail::lower(response);
  std::optional<std::size_t> match;
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    const std::string label = prompt_detail::lower(item.choices[i]);
    if (label.empty() || text.find(label) == std::string::npos) continue;
    if (match) return std::nullopt;
    match = i;
  }
  return match;
}

inline nlohmann::json to_json(const McqItem& item) {
  return {{"video_id", item.video_id},
          {"choices", item.choices},
          {"human_index", item.human_index},
          {"background_index", item.background_index},
          {"distractor_indices", item.distractor_indices},
          {"seed", item.seed}};
}

inline McqItem mcq_item_from_json(const nlohmann::json& j) {
  McqItem item;
  item.video_id = j.at("video_id").get<std::string>();
  item.choices = j.at("choices").get<std::vector<std::string>>();
  item.human_index = j.at("human_index").get<std::size_t>();
  item.background_index = j.at("background_index").get<std::size_t>();
  item.distractor_indices = j.at("distractor_indices").get<std::vector<std::size_t>>();
  item.seed = j.at("seed").get<std::uint64_t>();
  if (item.choices.size() != 5 || item.human_index >= 5 || item.background_index >= 5 ||
      item.human_index == item.background_index || item.distractor_indices.size() != 3)
    throw std::invalid_argument("mcq item " + item.video_id + ": malformed");
  return item;
}

inline void write_mcq_items(std::ostream& os, const std::vector<McqItem>& items) {
  for (const auto& item : items) os << to_json(item).dump() << '\n';
}

inline std::vector<McqItem> read_mcq_items(std::istream& is) {
  std::vector<McqItem> out;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(mcq_item_from_json(nlohmann::json::parse(line)));
  return out;
}

inline std::vector<McqItem> load_mcq_items(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open items " + path.string());
  return read_mcq_items(is);
}

/// The engineer's proposed prompt: the first double-quoted span, else the
/// whole reply trimmed. Empty results and unbalanced quotes yield nullopt.
inline std::optional<std::string> extract_prompt(std::string_view reply) {
  const auto open = reply.find('"');
  std::string_view body;
  if (open != std::string_view::npos) {
    const auto close = reply.find('"', open + 1);
    if (close == std::string_view::npos) return std::nullopt;
    body = reply.substr(open + 1, close - open - 1);
  } else {
    body = reply;
  }
  const auto first = body.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return std::nullopt;
  const auto last = body.find_last_not_of(" \t\r\n");
  return std::string(body.substr(first, last - first + 1));
}

}  // namespace bglab
