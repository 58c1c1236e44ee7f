#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fk/errors.hpp"
#include "json.hpp"

namespace fk {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
};

/// Transport or lookup failure (as opposed to a malformed model answer).
class ClientError : public Error {
 public:
  using Error::Error;
};

/// Chat-completions request body: {"model", "messages": [{"role", "content"}], "temperature", "seed"?}.
nlohmann::ordered_json request_body(const ChatRequest& req);

/// SHA-256 of the compact request body. Keys replay files.
std::string request_hash(const ChatRequest& req);

class ChatClient {
 public:
  virtual ~ChatClient() = default;

  /// Returns the assistant message text. Implementations must be safe to call
  /// from several threads at once.
  virtual std::string complete(const ChatRequest& req) = 0;
};

/// Replays canned responses from a directory of `<request-hash>.txt` files.
class ReplayClient : public ChatClient {
 public:
  explicit ReplayClient(const std::filesystem::path& dir);
  explicit ReplayClient(std::map<std::string, std::string> responses);

  std::string complete(const ChatRequest& req) override;
  std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
};

/// Wraps another client and stores every exchange as `<request-hash>.txt` in `dir`.
class RecordingClient : public ChatClient {
 public:
  RecordingClient(ChatClient& inner, std::filesystem::path dir);

  std::string complete(const ChatRequest& req) override;

 private:
  ChatClient& inner_;
  std::filesystem::path dir_;
  std::mutex mu_;
};

struct HttpClientConfig {
  std::string endpoint;  // full URL, e.g. https://api.openai.com/v1/chat/completions
  std::string api_key;
  int timeout_seconds = 120;

  /// Reads FK_API_ENDPOINT and FK_API_KEY; nullopt when the endpoint is unset.
  static std::optional<HttpClientConfig> from_env();
};

/// POSTs the chat-completions body and returns choices[0].message.content.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpClientConfig cfg);

  std::string complete(const ChatRequest& req) override;

 private:
  HttpClientConfig cfg_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

}  // namespace fk
