#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "madroid/errors.hpp"
#include "madroid/gateway.hpp"

namespace madroid {
namespace {

using nlohmann::json;

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // /v1/chat/completions
};

SplitUrl split_url(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw BadConfig("endpoint_url must start with http:// or https://: " + url);
  }
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

const char* chat_role(Speaker s) {
  switch (s) {
    case Speaker::system: return "system";
    case Speaker::prompt: return "user";
    case Speaker::reply: return "assistant";
  }
  return "user";
}

bool retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(const BackendConfig& config) : config_(config) {
    if (config_.endpoint_url.empty() || config_.model_name.empty()) {
      throw BadConfig("remote backend requires endpoint_url and model_name");
    }
    url_ = split_url(config_.endpoint_url);
  }

  std::string complete(const SessionInfo&, const std::vector<ChatEntry>& history,
                       const std::string& prompt) override {
    json messages = json::array();
    for (const auto& entry : history) {
      messages.push_back({{"role", chat_role(entry.speaker)}, {"content", entry.text}});
    }
    messages.push_back({{"role", "user"}, {"content", prompt}});
    json payload = {{"model", config_.model_name}, {"messages", messages}};
    const std::string body = payload.dump();

    std::string api_key;
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key = key;

    std::string last_error = "no attempt made";
    bool last_was_timeout = false;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        auto delay = std::chrono::milliseconds(config_.retry_base_ms) * (1 << (attempt - 1));
        std::this_thread::sleep_for(delay);
      }
      httplib::Client client(url_.base);
      client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_s));
      client.set_read_timeout(std::chrono::duration<double>(config_.timeout_s));
      client.set_write_timeout(std::chrono::duration<double>(config_.timeout_s));
      httplib::Headers headers;
      if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (!res) {
        httplib::Error err = res.error();
        last_was_timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                           err == httplib::Error::Write;
        last_error = "transport error: " + httplib::to_string(err);
        continue;
      }
      if (res->status != 200) {
        last_was_timeout = res->status == 408;
        last_error = "http status " + std::to_string(res->status);
        if (retryable_status(res->status)) continue;
        throw RemoteError("chat endpoint rejected request: " + last_error);
      }
      try {
        json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw RemoteError("malformed chat completion response: " + std::string(e.what()));
      }
    }
    if (last_was_timeout) {
      throw TimeoutError("chat endpoint timed out after " + std::to_string(config_.max_retries + 1) +
                         " attempts: " + last_error);
    }
    throw RemoteError("chat endpoint unreachable after " + std::to_string(config_.max_retries + 1) +
                      " attempts: " + last_error);
  }

 private:
  BackendConfig config_;
  SplitUrl url_;
};

}  // namespace

std::shared_ptr<Backend> make_remote_backend(const BackendConfig& config) {
  return std::make_shared<RemoteBackend>(config);
}

}  // namespace madroid
