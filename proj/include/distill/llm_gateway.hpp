#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "distill/error.hpp"
#include "distill/jsonl.hpp"

namespace distill::llm {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view s);

struct Message {
    Role role = Role::User;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    std::string model_name;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<std::int64_t> rng_seed;

    /// Throws InvalidArgument when the request breaks its invariants.
    void validate() const;

    /// Canonical serialization: fixed field order, compact, temperature at fixed precision.
    std::string canonical() const;

    ordered_json to_json() const;
    /// Accepts any field order.
    static ChatRequest from_json(const json& j);

    const std::string& last_user_content() const;
    /// Content of the first system message, or empty.
    std::string system_content() const;

    bool operator==(const ChatRequest&) const = default;
};

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason r) noexcept;

struct ChatResponse {
    std::string content;
    FinishReason finish_reason = FinishReason::Stop;
    std::int64_t prompt_units = 0;
    std::int64_t completion_units = 0;
    int attempts = 1;

    ordered_json to_json() const;
    static ChatResponse from_json(const json& j);

    bool operator==(const ChatResponse&) const = default;
};

/// Hex SHA-256 of ChatRequest::canonical().
std::string cache_key(const ChatRequest& request);

enum class BackendKind { Http, Replay, Scripted };

struct BackendConfig {
    BackendKind kind = BackendKind::Replay;
    std::optional<std::string> endpoint;
    std::optional<std::string> credential_env_var;
    int max_in_flight = 4;
    int retry_limit = 3;
    std::chrono::milliseconds backoff_base{200};
    std::chrono::milliseconds request_timeout{120000};
    /// Replay fixtures directory (kind = replay).
    std::optional<std::filesystem::path> fixtures_dir;
    /// Name of the built-in simulator (kind = scripted).
    std::string simulator = "teacher";

    void validate() const;
};

/// One backend invocation. Implementations throw Error with Errc::Transient for
/// retryable failures; every other error kind fails fast.
class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse invoke(const ChatRequest& request) = 0;
};

/// OpenAI-compatible chat-completions over HTTP(S).
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(const BackendConfig& config);
    ChatResponse invoke(const ChatRequest& request) override;

    /// Wire body of a chat-completions POST.
    static json build_payload(const ChatRequest& request);
    /// Reads choices[0].message.content and usage; throws MalformedResponse.
    static ChatResponse parse_payload(std::string_view body);

private:
    std::string scheme_host_port_;
    std::string path_;
    std::string credential_;
    std::chrono::milliseconds timeout_;
};

/// Serves <digest>.json fixtures; unknown digests raise MissingFixture.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(std::filesystem::path dir);
    ChatResponse invoke(const ChatRequest& request) override;

private:
    std::filesystem::path dir_;
};

/// Programmable in-process backend for tests and simulators. Tracks call counts
/// and the peak number of concurrent invocations.
class ScriptedBackend final : public Backend {
public:
    using Handler = std::function<ChatResponse(const ChatRequest&, std::size_t call_index)>;

    explicit ScriptedBackend(Handler handler, std::chrono::milliseconds latency = {});
    ChatResponse invoke(const ChatRequest& request) override;

    std::size_t calls() const noexcept { return calls_.load(); }
    int peak_in_flight() const noexcept { return peak_.load(); }

    /// Handler that fails with Errc::Transient the first `failures` calls, then delegates.
    static Handler flaky(std::size_t failures, Handler then);
    static Handler constant(std::string content);

private:
    Handler handler_;
    std::chrono::milliseconds latency_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_{0};
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

/// Content-addressed response cache, optionally mirrored to a directory of
/// <digest>.json files holding {request, response}.
class ResponseCache {
public:
    explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt);

    std::optional<ChatResponse> find(const std::string& key, const ChatRequest& request);
    void store(const std::string& key, const ChatRequest& request, const ChatResponse& response);
    std::size_t size() const;

private:
    std::optional<std::filesystem::path> dir_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, ChatResponse> entries_;
};

/// Result of one batch slot: a response or the error that slot raised.
struct SlotResult {
    std::optional<ChatResponse> response;
    std::exception_ptr error;

    bool ok() const noexcept { return response.has_value(); }
    const ChatResponse& value() const;
    std::string error_message() const;
};

class Gateway {
public:
    Gateway(BackendConfig config, std::shared_ptr<Backend> backend,
            std::shared_ptr<ResponseCache> cache = nullptr);

    /// Cache lookup, then backend call with retry on transient failures.
    ChatResponse complete(const ChatRequest& request);

    /// Position-addressed; never more than max_in_flight backend calls outstanding.
    std::vector<SlotResult> complete_batch(const std::vector<ChatRequest>& requests);

    const BackendConfig& config() const noexcept { return config_; }
    std::size_t backend_invocations() const noexcept { return invocations_.load(); }
    std::size_t cache_hits() const noexcept { return cache_hits_.load(); }

private:
    BackendConfig config_;
    std::shared_ptr<Backend> backend_;
    std::shared_ptr<ResponseCache> cache_;
    std::counting_semaphore<> slots_;
    std::atomic<std::size_t> invocations_{0};
    std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace distill::llm
