#include "fk/chat_client.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fk/hashing.hpp"
#include "httplib.h"

namespace fk {

nlohmann::ordered_json request_body(const ChatRequest& req) {
  nlohmann::ordered_json body;
  body["model"] = req.model;
  auto msgs = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  body["messages"] = std::move(msgs);
  body["temperature"] = req.temperature;
  if (req.seed) body["seed"] = *req.seed;
  return body;
}

std::string request_hash(const ChatRequest& req) { return sha256_hex(request_body(req).dump()); }

ReplayClient::ReplayClient(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("replay directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    responses_[entry.path().stem().string()] = ss.str();
  }
}

ReplayClient::ReplayClient(std::map<std::string, std::string> responses) : responses_(std::move(responses)) {}

std::string ReplayClient::complete(const ChatRequest& req) {
  const std::string h = request_hash(req);
  auto it = responses_.find(h);
  if (it == responses_.end()) throw ClientError("no recorded response for request " + h);
  return it->second;
}

RecordingClient::RecordingClient(ChatClient& inner, std::filesystem::path dir)
    : inner_(inner), dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string RecordingClient::complete(const ChatRequest& req) {
  std::string text = inner_.complete(req);
  std::lock_guard lock(mu_);
  std::ofstream out(dir_ / (request_hash(req) + ".txt"), std::ios::binary);
  out << text;
  return text;
}

std::optional<HttpClientConfig> HttpClientConfig::from_env() {
  const char* endpoint = std::getenv("FK_API_ENDPOINT");
  if (!endpoint || !*endpoint) return std::nullopt;
  const char* key = std::getenv("FK_API_KEY");
  return HttpClientConfig{endpoint, key ? key : "", 120};
}

HttpChatClient::HttpChatClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint must be an absolute URL: " + cfg_.endpoint);
  const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  base_ = cfg_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
}

std::string HttpChatClient::complete(const ChatRequest& req) {
  httplib::Client cli(base_);
  cli.set_connection_timeout(cfg_.timeout_seconds);
  cli.set_read_timeout(cfg_.timeout_seconds);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  auto res = cli.Post(path_, headers, request_body(req).dump(), "application/json");
  if (!res) throw ClientError("request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ClientError("endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const auto body = nlohmann::json::parse(res->body);
    return body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ClientError(std::string("unexpected response body: ") + e.what());
  }
}

}  // namespace fk
