#include "distill/llm_gateway.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "distill/digest.hpp"
#include "distill/parallel.hpp"
#include "distill/simulator.hpp"

namespace distill::llm {

namespace fs = std::filesystem;

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "user") return Role::User;
    if (s == "assistant") return Role::Assistant;
    fail(Errc::InvalidArgument, "unknown message role '" + std::string(s) + "'");
}

std::string_view to_string(FinishReason r) noexcept {
    switch (r) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "error";
}

namespace {

FinishReason parse_finish_reason(std::string_view s) {
    if (s == "stop") return FinishReason::Stop;
    if (s == "length") return FinishReason::Length;
    return FinishReason::Error;
}

std::string format_temperature(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", t);
    return buf;
}

// CRLF -> LF and trailing whitespace per line removed; nothing else changes.
std::string canonical_content(std::string_view content) {
    std::string out;
    out.reserve(content.size());
    std::size_t start = 0;
    while (true) {
        std::size_t end = content.find('\n', start);
        std::string_view line = content.substr(start, end == std::string_view::npos
                                                          ? std::string_view::npos
                                                          : end - start);
        std::size_t last = line.find_last_not_of(" \t\r");
        out.append(last == std::string_view::npos ? std::string_view{} : line.substr(0, last + 1));
        if (end == std::string_view::npos) break;
        out.push_back('\n');
        start = end + 1;
    }
    while (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
}

}  // namespace

void ChatRequest::validate() const {
    if (model_name.empty()) fail(Errc::InvalidArgument, "request model_name is empty");
    if (messages.empty()) fail(Errc::InvalidArgument, "request has no messages");
    for (const auto& m : messages) {
        if (m.content.empty()) fail(Errc::InvalidArgument, "request message content is empty");
    }
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        fail(Errc::InvalidArgument, "request temperature must be >= 0");
    }
    if (max_tokens <= 0) fail(Errc::InvalidArgument, "request max_tokens must be positive");
}

std::string ChatRequest::canonical() const {
    ordered_json j;
    j["model"] = model_name;
    ordered_json msgs = ordered_json::array();
    for (const auto& m : messages) {
        ordered_json mj;
        mj["role"] = to_string(m.role);
        mj["content"] = canonical_content(m.content);
        msgs.push_back(std::move(mj));
    }
    j["messages"] = std::move(msgs);
    j["temperature"] = format_temperature(temperature);
    j["max_tokens"] = max_tokens;
    j["rng_seed"] = rng_seed ? ordered_json(*rng_seed) : ordered_json(nullptr);
    return j.dump(-1, ' ', false, nlohmann::detail::error_handler_t::replace);
}

ordered_json ChatRequest::to_json() const {
    ordered_json j;
    j["model"] = model_name;
    ordered_json msgs = ordered_json::array();
    for (const auto& m : messages) {
        msgs.push_back(ordered_json{{"role", to_string(m.role)}, {"content", m.content}});
    }
    j["messages"] = std::move(msgs);
    j["temperature"] = temperature;
    j["max_tokens"] = max_tokens;
    j["rng_seed"] = rng_seed ? ordered_json(*rng_seed) : ordered_json(nullptr);
    return j;
}

ChatRequest ChatRequest::from_json(const json& j) {
    try {
        ChatRequest r;
        r.model_name = j.at("model").get<std::string>();
        for (const auto& m : j.at("messages")) {
            r.messages.push_back(
                {parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
        }
        r.temperature = j.value("temperature", 0.0);
        r.max_tokens = j.value("max_tokens", 1024);
        if (j.contains("rng_seed") && !j.at("rng_seed").is_null()) {
            r.rng_seed = j.at("rng_seed").get<std::int64_t>();
        }
        return r;
    } catch (const json::exception& e) {
        fail(Errc::InvalidArgument, std::string("bad request JSON: ") + e.what());
    }
}

const std::string& ChatRequest::last_user_content() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User) return it->content;
    }
    fail(Errc::InvalidArgument, "request has no user message");
}

std::string ChatRequest::system_content() const {
    for (const auto& m : messages) {
        if (m.role == Role::System) return m.content;
    }
    return {};
}

ordered_json ChatResponse::to_json() const {
    ordered_json j;
    j["content"] = content;
    j["finish_reason"] = to_string(finish_reason);
    j["prompt_units"] = prompt_units;
    j["completion_units"] = completion_units;
    j["attempts"] = attempts;
    return j;
}

ChatResponse ChatResponse::from_json(const json& j) {
    try {
        ChatResponse r;
        r.content = j.at("content").get<std::string>();
        r.finish_reason = parse_finish_reason(j.value("finish_reason", std::string("stop")));
        r.prompt_units = j.value("prompt_units", std::int64_t{0});
        r.completion_units = j.value("completion_units", std::int64_t{0});
        r.attempts = j.value("attempts", 1);
        return r;
    } catch (const json::exception& e) {
        fail(Errc::MalformedResponse, std::string("bad response JSON: ") + e.what());
    }
}

std::string cache_key(const ChatRequest& request) { return sha256_hex(request.canonical()); }

void BackendConfig::validate() const {
    if (max_in_flight < 1) fail(Errc::InvalidArgument, "max_in_flight must be >= 1");
    if (retry_limit < 0) fail(Errc::InvalidArgument, "retry_limit must be >= 0");
    if ((kind == BackendKind::Http) != endpoint.has_value()) {
        fail(Errc::InvalidArgument, "endpoint is required iff backend kind is http");
    }
    if (kind == BackendKind::Replay && !fixtures_dir) {
        fail(Errc::InvalidArgument, "replay backend needs a fixtures directory");
    }
}

// ---------------------------------------------------------------------------
// HTTP

HttpBackend::HttpBackend(const BackendConfig& config) : timeout_(config.request_timeout) {
    if (!config.endpoint) fail(Errc::InvalidArgument, "http backend needs an endpoint");
    const std::string& url = *config.endpoint;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        fail(Errc::InvalidArgument, "endpoint must be an http(s) URL: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? std::string{} : url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
    if (config.credential_env_var) {
        const char* value = std::getenv(config.credential_env_var->c_str());
        if (value != nullptr) credential_ = value;
        else credential_.clear();
        if (credential_.empty()) {
            fail(Errc::AuthError,
                 "credential variable " + *config.credential_env_var + " is not set");
        }
    }
}

json HttpBackend::build_payload(const ChatRequest& request) {
    json payload;
    payload["model"] = request.model_name;
    payload["messages"] = json::array();
    for (const auto& m : request.messages) {
        payload["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    payload["temperature"] = request.temperature;
    payload["max_tokens"] = request.max_tokens;
    if (request.rng_seed) payload["seed"] = *request.rng_seed;
    return payload;
}

ChatResponse HttpBackend::parse_payload(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error&) {
        fail(Errc::MalformedResponse, "backend payload is not JSON");
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty()) {
        fail(Errc::MalformedResponse, "backend payload has no choices");
    }
    const json& choice = j["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content") ||
        !choice["message"]["content"].is_string()) {
        fail(Errc::MalformedResponse, "backend payload has no message content");
    }
    ChatResponse r;
    r.content = choice["message"]["content"].get<std::string>();
    std::string reason = choice.value("finish_reason", std::string("stop"));
    r.finish_reason = parse_finish_reason(reason.empty() ? "stop" : reason);
    if (j.contains("usage") && j["usage"].is_object()) {
        r.prompt_units = j["usage"].value("prompt_tokens", std::int64_t{0});
        r.completion_units = j["usage"].value("completion_tokens", std::int64_t{0});
    }
    return r;
}

ChatResponse HttpBackend::invoke(const ChatRequest& request) {
    httplib::Client client(scheme_host_port_);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(static_cast<time_t>(secs.count()), 0);
    httplib::Headers headers;
    if (!credential_.empty()) headers.emplace("Authorization", "Bearer " + credential_);
    auto res = client.Post(path_, headers, build_payload(request).dump(), "application/json");
    if (!res) {
        fail(Errc::Transient, "http transport error: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        fail(Errc::AuthError, "backend rejected credentials (HTTP " + std::to_string(status) + ")");
    }
    if (status == 408 || status == 429 || status >= 500) {
        fail(Errc::Transient, "backend transient status " + std::to_string(status));
    }
    if (status != 200) {
        fail(Errc::InvalidArgument, "backend rejected request (HTTP " + std::to_string(status) + ")");
    }
    return parse_payload(res->body);
}

// ---------------------------------------------------------------------------
// Replay

ReplayBackend::ReplayBackend(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) {
        fail(Errc::IoError, "replay fixtures directory not found: " + dir_.string());
    }
}

ChatResponse ReplayBackend::invoke(const ChatRequest& request) {
    const std::string key = cache_key(request);
    fs::path file = dir_ / (key + ".json");
    if (!fs::exists(file)) {
        fail(Errc::MissingFixture, "no replay fixture for digest " + key);
    }
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
        fail(Errc::MalformedResponse, "fixture " + file.string() + " is not JSON: " + e.what());
    }
    return ChatResponse::from_json(j.at("response"));
}

// ---------------------------------------------------------------------------
// Scripted

ScriptedBackend::ScriptedBackend(Handler handler, std::chrono::milliseconds latency)
    : handler_(std::move(handler)), latency_(latency) {}

ChatResponse ScriptedBackend::invoke(const ChatRequest& request) {
    const std::size_t index = calls_++;
    const int now = ++in_flight_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    struct Leave {
        std::atomic<int>& counter;
        ~Leave() { --counter; }
    } leave{in_flight_};
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    return handler_(request, index);
}

ScriptedBackend::Handler ScriptedBackend::flaky(std::size_t failures, Handler then) {
    return [failures, then = std::move(then)](const ChatRequest& r, std::size_t i) {
        if (i < failures) fail(Errc::Transient, "scripted transient failure");
        return then(r, i);
    };
}

ScriptedBackend::Handler ScriptedBackend::constant(std::string content) {
    return [content = std::move(content)](const ChatRequest&, std::size_t) {
        ChatResponse r;
        r.content = content;
        return r;
    };
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
    config.validate();
    switch (config.kind) {
        case BackendKind::Http: return std::make_unique<HttpBackend>(config);
        case BackendKind::Replay: return std::make_unique<ReplayBackend>(*config.fixtures_dir);
        case BackendKind::Scripted:
            return std::make_unique<ScriptedBackend>(sim::make_handler(config.simulator));
    }
    fail(Errc::InvalidArgument, "unknown backend kind");
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::optional<fs::path> dir) : dir_(std::move(dir)) {
    if (dir_) fs::create_directories(*dir_);
}

std::optional<ChatResponse> ResponseCache::find(const std::string& key, const ChatRequest& request) {
    {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(key);
        if (it != entries_.end()) return it->second;
    }
    if (!dir_) return std::nullopt;
    fs::path file = *dir_ / (key + ".json");
    if (!fs::exists(file)) return std::nullopt;
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::parse_error&) {
        spdlog::warn("ignoring unreadable cache entry {}", file.string());
        return std::nullopt;
    }
    if (ChatRequest::from_json(j.at("request")).canonical() != request.canonical()) {
        spdlog::warn("cache entry {} does not match its request; ignoring", file.string());
        return std::nullopt;
    }
    ChatResponse response = ChatResponse::from_json(j.at("response"));
    std::unique_lock lock(mutex_);
    entries_.emplace(key, response);
    return response;
}

void ResponseCache::store(const std::string& key, const ChatRequest& request,
                          const ChatResponse& response) {
    std::unique_lock lock(mutex_);
    entries_.insert_or_assign(key, response);
    if (dir_) {
        ordered_json j;
        j["request"] = request.to_json();
        j["response"] = response.to_json();
        write_file(*dir_ / (key + ".json"),
                   j.dump(2, ' ', false, nlohmann::detail::error_handler_t::replace) + "\n");
    }
}

std::size_t ResponseCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// Gateway

const ChatResponse& SlotResult::value() const {
    if (!response) std::rethrow_exception(error);
    return *response;
}

std::string SlotResult::error_message() const {
    if (!error) return {};
    try {
        std::rethrow_exception(error);
    } catch (const std::exception& e) {
        return e.what();
    } catch (...) {
        return "unknown error";
    }
}

Gateway::Gateway(BackendConfig config, std::shared_ptr<Backend> backend,
                 std::shared_ptr<ResponseCache> cache)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      slots_(config_.max_in_flight) {
    if (config_.max_in_flight < 1) fail(Errc::InvalidArgument, "max_in_flight must be >= 1");
    if (!backend_) fail(Errc::InvalidArgument, "gateway needs a backend");
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    request.validate();
    const std::string key = cache_key(request);
    if (cache_) {
        if (auto hit = cache_->find(key, request)) {
            ++cache_hits_;
            return *hit;
        }
    }
    for (int attempt = 1;; ++attempt) {
        std::optional<ChatResponse> response;
        try {
            slots_.acquire();
            struct Release {
                std::counting_semaphore<>& s;
                ~Release() { s.release(); }
            } release{slots_};
            ++invocations_;
            response = backend_->invoke(request);
        } catch (const Error& e) {
            if (e.code() != Errc::Transient) throw;
            if (attempt > config_.retry_limit) {
                fail(Errc::BackendUnavailable, "retries exhausted after " +
                                                   std::to_string(attempt) +
                                                   " attempts: " + e.what());
            }
            auto delay = config_.backoff_base * (1LL << std::min(attempt - 1, 16));
            spdlog::debug("transient backend failure (attempt {}): {}; retrying in {} ms", attempt,
                          e.what(), delay.count());
            std::this_thread::sleep_for(delay);
            continue;
        }
        response->attempts = attempt;
        if (response->finish_reason == FinishReason::Stop && response->content.empty()) {
            fail(Errc::MalformedResponse, "backend returned empty content with finish_reason stop");
        }
        if (cache_) cache_->store(key, request, *response);
        return *response;
    }
}

std::vector<SlotResult> Gateway::complete_batch(const std::vector<ChatRequest>& requests) {
    std::vector<SlotResult> results(requests.size());
    parallel_for(requests.size(), static_cast<std::size_t>(config_.max_in_flight),
                 [&](std::size_t i) {
                     try {
                         results[i].response = complete(requests[i]);
                     } catch (...) {
                         results[i].error = std::current_exception();
                     }
                 });
    return results;
}

}  // namespace distill::llm
