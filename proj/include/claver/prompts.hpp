#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace claver {

enum class Aspect { Decomposition, Synonym, BodyParts };

std::string_view to_string(Aspect aspect);
/// Accepts decomposition, synonym, body_parts.
std::optional<Aspect> parse_aspect(std::string_view text);

enum class DescriptionKind { Label, Template, Interpretive };
enum class DescriptionSource { Generated, Fixture, Manual };

std::string_view to_string(DescriptionKind kind);
std::string_view to_string(DescriptionSource source);

struct TextDescription {
  std::string class_name;
  DescriptionKind kind = DescriptionKind::Label;
  std::optional<Aspect> aspect;
  std::string text;
  DescriptionSource source = DescriptionSource::Manual;
  /// SHA-256 hex of the text.
  std::string content_hash;
  /// Cache key, sampling parameters and timestamp for generated entries.
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const TextDescription&) const = default;
};

TextDescription make_description(std::string class_name, DescriptionKind kind, std::string text,
                                 DescriptionSource source, std::optional<Aspect> aspect = std::nullopt);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// Lowercased with runs of whitespace collapsed to one space and ends trimmed.
std::string normalize_text(std::string_view text);

/// Keeps whole sentences while they fit in `max_words`; a first sentence that
/// is already too long is cut at the word limit.
std::string cap_words(std::string_view text, std::size_t max_words = 76);

// Format prompts

struct PromptExample {
  std::string concept_name;
  std::string interpretation;
};

struct FormatPrompt {
  std::string command;
  std::vector<PromptExample> examples;
  std::string concept_name;
  Aspect aspect = Aspect::Decomposition;
};

inline constexpr std::size_t kMaxPromptChars = 4096;

struct ChatMessage {
  std::string role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

/// One user message: command, a blank line, one "concept → interpretation"
/// line per example, a blank line, then the bare concept.
/// Throws std::invalid_argument for an empty command, concept or example list,
/// or a rendering longer than kMaxPromptChars.
std::vector<ChatMessage> render_format_prompt(const FormatPrompt& fp);

/// Built-in command and worked examples for an aspect.
FormatPrompt default_format_prompt(Aspect aspect, std::string concept_name);

struct FixtureEntry {
  std::string concept_name;
  Aspect aspect;
  std::string text;
};

/// Bundled worked examples, three per aspect.
const std::vector<FixtureEntry>& fixtures();
/// Command text used for an aspect's format prompt.
std::string_view aspect_command(Aspect aspect);
/// Case-insensitive lookup ignoring a trailing period.
std::optional<std::string> fixture_text(std::string_view concept_name, Aspect aspect);

// Requests

struct SamplingParams {
  double temperature = 0.90;
  double top_p = 0.95;
  std::size_t n = 1;
  std::size_t max_tokens = 160;
};

nlohmann::json to_json(const SamplingParams& p);

struct PromptRequest {
  std::string endpoint;
  std::string model;
  std::vector<ChatMessage> messages;
  SamplingParams sampling;
};

/// JSON body with fields in the order model, messages, temperature, top_p, n, max_tokens.
std::string request_body(const PromptRequest& req);

struct LlmSettings {
  std::string endpoint;
  std::string model;
  std::string api_key;

  /// Reads CLAVER_LLM_ENDPOINT, CLAVER_LLM_MODEL and CLAVER_LLM_KEY.
  static LlmSettings from_env();
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws TransportError when no response was received.
  virtual HttpResponse post(const std::string& url, const std::string& body, const Headers& headers) = 0;
};

/// HTTP(S) client.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(std::chrono::seconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}
  HttpResponse post(const std::string& url, const std::string& body, const Headers& headers) override;

 private:
  std::chrono::seconds timeout_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

/// Waits before each retry after the first attempt.
inline const std::vector<std::chrono::milliseconds> kRetryBackoff{std::chrono::milliseconds(1000),
                                                                  std::chrono::milliseconds(2000),
                                                                  std::chrono::milliseconds(4000)};

/// POSTs to {endpoint}/chat/completions and returns each choice's content.
/// Connection failures, 429 and 5xx are retried after each backoff delay.
std::vector<std::string> chat_completion(const PromptRequest& req, const std::string& api_key, Transport& transport,
                                         const Sleeper& sleep);

// Cache

struct CacheRecord {
  std::string key;
  std::string class_name;
  Aspect aspect = Aspect::Decomposition;
  std::string text;
  nlohmann::json params;
  std::string timestamp;
};

/// Append-only JSONL file; later records win for a repeated key.
class PromptCache {
 public:
  /// An empty path keeps the cache in memory only.
  explicit PromptCache(std::filesystem::path path = {});

  std::optional<CacheRecord> find(const std::string& key) const;
  void append(const CacheRecord& record);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  std::map<std::string, CacheRecord> records_;
  mutable std::mutex mutex_;
};

using Clock = std::function<std::string()>;
/// ISO-8601 UTC, seconds precision.
Clock system_clock();

/// Cache key of sample `index` for a rendered prompt and sampling parameters.
std::string cache_key(const std::vector<ChatMessage>& messages, const SamplingParams& sampling, std::size_t index);

enum class GenerationMode {
  /// Fixtures and cache only; the transport is never touched.
  Offline,
  /// Fixtures, then cache, then the endpoint.
  Online,
};

struct GenerateRequest {
  std::string class_name;
  std::string concept_name;
  Aspect aspect = Aspect::Decomposition;
  std::size_t count = 1;
  SamplingParams sampling;
};

struct GenerateContext {
  LlmSettings settings;
  Transport* transport = nullptr;
  PromptCache* cache = nullptr;
  GenerationMode mode = GenerationMode::Offline;
  Sleeper sleep = real_sleeper();
  Clock clock = system_clock();
};

/// Interpretive descriptions of a concept. Results are trimmed, word-capped and
/// deduplicated, so fewer than `count` may come back.
std::vector<TextDescription> generate(const GenerateRequest& req, const GenerateContext& ctx);

/// Runs requests with at most `max_in_flight` concurrently; results keep input order.
std::vector<std::vector<TextDescription>> generate_all(const std::vector<GenerateRequest>& reqs,
                                                       const GenerateContext& ctx, std::size_t max_in_flight = 4);

// Description sets

class DescriptionStore {
 public:
  /// False (and nothing stored) if the class already has the same normalized text.
  bool add(TextDescription d);
  bool has_class(std::string_view class_name) const;
  /// Throws std::out_of_range for an unknown class.
  const std::vector<TextDescription>& for_class(std::string_view class_name) const;
  std::vector<std::string> classes() const;

  nlohmann::json to_json() const;
  static DescriptionStore from_json(const nlohmann::json& j);

 private:
  std::map<std::string, std::vector<TextDescription>, std::less<>> entries_;
};

/// Templates with "{label}" placeholders; the first is "a video of a person {label}.".
const std::vector<std::string>& default_templates();

/// Per class: the label, filled templates, then interpretive entries in store
/// order, cut to `per_class` items. Throws std::invalid_argument if a class is
/// absent or has no label entry.
std::vector<std::vector<TextDescription>> assemble_description_set(const DescriptionStore& store,
                                                                   const std::vector<std::string>& classes,
                                                                   std::size_t per_class,
                                                                   const std::vector<std::string>& templates =
                                                                       default_templates());

}  // namespace claver
