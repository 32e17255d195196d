#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "bglab/rng.hpp"

namespace bglab {

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
  std::optional<std::string> media;  // reference to the video the question is about

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0;
};

/// Chat-completions request body; key order is fixed so the bytes are stable.
inline nlohmann::ordered_json request_body(const ChatRequest& req) {
  nlohmann::ordered_json body;
  body["model"] = req.model;
  body["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) {
    nlohmann::ordered_json jm;
    jm["role"] = m.role;
    if (m.media) {
      nlohmann::ordered_json text;
      text["type"] = "text";
      text["text"] = m.content;
      nlohmann::ordered_json image;
      image["type"] = "image_url";
      image["image_url"] = {{"url", *m.media}};
      jm["content"] = nlohmann::ordered_json::array({text, image});
    } else {
      jm["content"] = m.content;
    }
    body["messages"].push_back(jm);
  }
  body["temperature"] = req.temperature;
  return body;
}

inline std::string request_hash(const ChatRequest& req) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(request_body(req).dump())));
  return buf;
}

inline nlohmann::json to_json(const ChatMessage& m) {
  nlohmann::json j{{"role", m.role}, {"content", m.content}};
  if (m.media) j["media"] = *m.media;
  return j;
}

inline ChatMessage chat_message_from_json(const nlohmann::json& j) {
  ChatMessage m{j.at("role").get<std::string>(), j.at("content").get<std::string>(), std::nullopt};
  if (j.contains("media")) m.media = j.at("media").get<std::string>();
  return m;
}

/// Endpoint failures: the request could not be answered.
class ChatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Connection failures, timeouts and non-success HTTP statuses.
class TransportError : public ChatError {
 public:
  using ChatError::ChatError;
};

/// A response arrived but does not follow the chat-completions schema.
class ProtocolError : public ChatError {
 public:
  using ChatError::ChatError;
};

/// A replayed transcript has no answer for this request.
class ReplayMiss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const ChatRequest& req) = 0;
};

/// Extracts choices[0].message.content from a response body.
inline std::string parse_completion(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("chat response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw ProtocolError("chat response has no choices");
  const auto& first = j["choices"][0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object() ||
      !first["message"].contains("content") || !first["message"]["content"].is_string())
    throw ProtocolError("chat response choice has no message content");
  return first["message"]["content"].get<std::string>();
}

struct ChatEndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60;
  int max_retries = 3;
  double temperature = 0;
  double backoff_s = 1;  // first retry delay; doubles each retry

  friend bool operator==(const ChatEndpointConfig&, const ChatEndpointConfig&) = default;

  void validate() const {
    if (max_retries < 0) throw std::invalid_argument("endpoint: max_retries must be >= 0");
    if (!(timeout_s > 0)) throw std::invalid_argument("endpoint: timeout must be > 0");
    if (!(backoff_s >= 0)) throw std::invalid_argument("endpoint: backoff must be >= 0");
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0)
      throw std::invalid_argument("endpoint: base_url must start with http:// or https://");
  }
};

/// OpenAI-compatible client: POST {base}/chat/completions.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(ChatEndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto scheme_end = cfg_.base_url.find("://") + 3;
    const auto path_start = cfg_.base_url.find('/', scheme_end);
    origin_ = cfg_.base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  const ChatEndpointConfig& config() const { return cfg_; }

  std::string complete(const ChatRequest& req) override {
    if (req.messages.empty()) throw std::invalid_argument("send_chat: no messages");
    const std::string body = request_body(req).dump();
    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.backoff_s * (1 << (attempt - 1))));
      }
      httplib::Client client(origin_);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(cfg_.timeout_s));
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      const auto res = client.Post(prefix_ + "/chat/completions", headers, body, "application/json");
      if (!res) {
        last_error = "request to " + origin_ + " failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status) + " from " + origin_;
        continue;
      }
      if (res->status != 200)
        throw TransportError("HTTP " + std::to_string(res->status) + " from " + origin_ + ": " + res->body);
      return parse_completion(res->body);
    }
    throw TransportError(last_error + " (after " + std::to_string(cfg_.max_retries) + " retries)");
  }

 private:
  ChatEndpointConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

/// Answers from a JSONL transcript of {request_hash, response} lines.
class ReplayChatClient : public ChatClient {
 public:
  explicit ReplayChatClient(std::istream& is) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("transcript line " + std::to_string(line_no) + ": " + e.what());
      }
      auto hash = j.at("request_hash").get<std::string>();
      if (!answers_.emplace(hash, j.at("response").get<std::string>()).second)
        throw std::invalid_argument("transcript line " + std::to_string(line_no) + ": duplicate request hash " +
                                    hash);
    }
  }

  static ReplayChatClient from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open transcript " + path.string());
    return ReplayChatClient(is);
  }

  std::size_t size() const { return answers_.size(); }

  std::string complete(const ChatRequest& req) override {
    const auto hash = request_hash(req);
    const auto it = answers_.find(hash);
    if (it == answers_.end()) throw ReplayMiss("replay miss: no recorded response for request " + hash);
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::string> answers_;
};

/// Forwards to another client and appends every new exchange to a transcript.
class RecordingChatClient : public ChatClient {
 public:
  RecordingChatClient(ChatClient& inner, std::ostream& os) : inner_(inner), os_(os) {}

  std::string complete(const ChatRequest& req) override {
    std::string response = inner_.complete(req);
    const auto hash = request_hash(req);
    std::lock_guard lock(mu_);
    if (seen_.insert(hash).second) {
      os_ << nlohmann::json{{"request_hash", hash}, {"response", response}}.dump() << '\n';
      if (!os_) throw std::runtime_error("transcript write failed");
    }
    return response;
  }

 private:
  ChatClient& inner_;
  std::ostream& os_;
  std::mutex mu_;
  std::unordered_set<std::string> seen_;
};

/// Client backed by a callable; used for scripted responders.
class FunctionChatClient : public ChatClient {
 public:
  explicit FunctionChatClient(std::function<std::string(const ChatRequest&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const ChatRequest& req) override { return fn_(req); }

 private:
  std::function<std::string(const ChatRequest&)> fn_;
};

}  // namespace bglab
