#include "claver/prompts.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

namespace claver {

namespace {

constexpr std::pair<Aspect, std::string_view> kAspectNames[] = {
    {Aspect::Decomposition, "decomposition"}, {Aspect::Synonym, "synonym"}, {Aspect::BodyParts, "body_parts"}};

std::string trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string concept_key(std::string_view concept_name) {
  std::string key = normalize_text(concept_name);
  while (!key.empty() && key.back() == '.') key.pop_back();
  return key;
}

}  // namespace

std::string_view to_string(Aspect aspect) {
  for (const auto& [a, name] : kAspectNames)
    if (a == aspect) return name;
  return "unknown";
}

std::optional<Aspect> parse_aspect(std::string_view text) {
  for (const auto& [a, name] : kAspectNames)
    if (name == text) return a;
  return std::nullopt;
}

std::string_view to_string(DescriptionKind kind) {
  switch (kind) {
    case DescriptionKind::Label: return "label";
    case DescriptionKind::Template: return "template";
    case DescriptionKind::Interpretive: return "interpretive";
  }
  return "unknown";
}

std::string_view to_string(DescriptionSource source) {
  switch (source) {
    case DescriptionSource::Generated: return "generated";
    case DescriptionSource::Fixture: return "fixture";
    case DescriptionSource::Manual: return "manual";
  }
  return "unknown";
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

TextDescription make_description(std::string class_name, DescriptionKind kind, std::string text,
                                 DescriptionSource source, std::optional<Aspect> aspect) {
  TextDescription d;
  d.class_name = std::move(class_name);
  d.kind = kind;
  d.aspect = aspect;
  d.content_hash = sha256_hex(text);
  d.text = std::move(text);
  d.source = source;
  return d;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string cap_words(std::string_view text, std::size_t max_words) {
  // Split into words, remembering which ones end a sentence.
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() <= max_words) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  }
  const auto ends_sentence = [](const std::string& w) {
    std::string_view v = w;
    while (!v.empty() && (v.back() == '"' || v.back() == '\'' || v.back() == ')')) v.remove_suffix(1);
    return !v.empty() && (v.back() == '.' || v.back() == '!' || v.back() == '?');
  };
  std::size_t cut = 0;
  for (std::size_t i = 0; i < max_words; ++i)
    if (ends_sentence(words[i])) cut = i + 1;
  if (cut == 0) cut = max_words;
  std::string out;
  for (std::size_t i = 0; i < cut; ++i) out += (i ? " " : "") + words[i];
  return out;
}

// Format prompts

std::vector<ChatMessage> render_format_prompt(const FormatPrompt& fp) {
  if (trim(fp.command).empty()) throw std::invalid_argument("format prompt: empty command");
  if (trim(fp.concept_name).empty()) throw std::invalid_argument("format prompt: empty concept");
  if (fp.examples.empty()) throw std::invalid_argument("format prompt: no examples");
  std::string content = trim(fp.command) + "\n\n";
  for (const auto& ex : fp.examples) content += trim(ex.concept_name) + " → " + trim(ex.interpretation) + "\n";
  content += "\n" + trim(fp.concept_name);
  if (content.size() > kMaxPromptChars) {
    throw std::invalid_argument("format prompt: rendered text has " + std::to_string(content.size()) +
                                " characters, limit " + std::to_string(kMaxPromptChars));
  }
  return {{"user", content}};
}

FormatPrompt default_format_prompt(Aspect aspect, std::string concept_name) {
  FormatPrompt fp;
  fp.command = std::string(aspect_command(aspect));
  fp.aspect = aspect;
  fp.concept_name = std::move(concept_name);
  for (const auto& f : fixtures())
    if (f.aspect == aspect) fp.examples.push_back({f.concept_name, f.text});
  return fp;
}

std::optional<std::string> fixture_text(std::string_view concept_name, Aspect aspect) {
  const std::string key = concept_key(concept_name);
  for (const auto& f : fixtures())
    if (f.aspect == aspect && concept_key(f.concept_name) == key) return f.text;
  return std::nullopt;
}

// Requests

nlohmann::json to_json(const SamplingParams& p) {
  return {{"temperature", p.temperature}, {"top_p", p.top_p}, {"n", p.n}, {"max_tokens", p.max_tokens}};
}

std::string request_body(const PromptRequest& req) {
  nlohmann::ordered_json body;
  body["model"] = req.model;
  body["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  body["temperature"] = req.sampling.temperature;
  body["top_p"] = req.sampling.top_p;
  body["n"] = req.sampling.n;
  body["max_tokens"] = req.sampling.max_tokens;
  return body.dump();
}

LlmSettings LlmSettings::from_env() {
  const auto get = [](const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  return {get("CLAVER_LLM_ENDPOINT"), get("CLAVER_LLM_MODEL"), get("CLAVER_LLM_KEY")};
}

HttpResponse HttpTransport::post(const std::string& url, const std::string& body, const Headers& headers) {
  // Split scheme://host[:port] from the path.
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw TransportError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(path, h, body, "application/json");
  if (!res) throw TransportError("POST " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::vector<std::string> chat_completion(const PromptRequest& req, const std::string& api_key, Transport& transport,
                                         const Sleeper& sleep) {
  if (req.endpoint.empty()) throw TransportError("no LLM endpoint configured");
  std::string url = req.endpoint;
  while (!url.empty() && url.back() == '/') url.pop_back();
  url += "/chat/completions";
  Headers headers{{"Content-Type", "application/json"}};
  if (!api_key.empty()) headers.emplace_back("Authorization", "Bearer " + api_key);
  const std::string body = request_body(req);

  HttpResponse res;
  std::string last_error;
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      res = transport.post(url, body, headers);
      if (res.status == 429 || res.status >= 500) {
        last_error = "HTTP " + std::to_string(res.status);
      } else {
        break;
      }
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    if (attempt == kRetryBackoff.size()) {
      throw TransportError("giving up after " + std::to_string(attempt + 1) + " attempts: " + last_error);
    }
    sleep(kRetryBackoff[attempt]);
  }
  if (res.status < 200 || res.status >= 300) {
    throw TransportError("HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200));
  }

  std::vector<std::string> out;
  try {
    const auto j = nlohmann::json::parse(res.body);
    for (const auto& choice : j.at("choices")) out.push_back(choice.at("message").at("content").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed completion response: ") + e.what());
  }
  return out;
}

// Cache

PromptCache::PromptCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CacheRecord r;
      r.key = j.at("key").get<std::string>();
      r.class_name = j.at("class").get<std::string>();
      const auto aspect = parse_aspect(j.at("aspect").get<std::string>());
      if (!aspect) throw std::invalid_argument("unknown aspect");
      r.aspect = *aspect;
      r.text = j.at("text").get<std::string>();
      r.params = j.at("params");
      r.timestamp = j.at("timestamp").get<std::string>();
      records_[r.key] = std::move(r);
    } catch (const std::exception& e) {
      throw ProtocolError(path_.string() + ":" + std::to_string(line_no) + ": bad cache record: " + e.what());
    }
  }
}

std::optional<CacheRecord> PromptCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  const auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void PromptCache::append(const CacheRecord& r) {
  std::lock_guard lock(mutex_);
  if (!path_.empty()) {
    nlohmann::ordered_json j;
    j["key"] = r.key;
    j["class"] = r.class_name;
    j["aspect"] = std::string(to_string(r.aspect));
    j["text"] = r.text;
    j["params"] = r.params;
    j["timestamp"] = r.timestamp;
    std::ofstream out(path_, std::ios::app);
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("cannot append to cache " + path_.string());
  }
  records_[r.key] = r;
}

std::size_t PromptCache::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

Clock system_clock() {
  return [] {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
  };
}

std::string cache_key(const std::vector<ChatMessage>& messages, const SamplingParams& sampling, std::size_t index) {
  nlohmann::ordered_json j;
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
  j["temperature"] = sampling.temperature;
  j["top_p"] = sampling.top_p;
  j["max_tokens"] = sampling.max_tokens;
  j["index"] = index;
  return sha256_hex(j.dump());
}

namespace {

TextDescription from_record(const CacheRecord& r) {
  TextDescription d =
      make_description(r.class_name, DescriptionKind::Interpretive, r.text, DescriptionSource::Generated, r.aspect);
  d.metadata = {{"key", r.key}, {"params", r.params}, {"timestamp", r.timestamp}};
  return d;
}

void append_unique(std::vector<TextDescription>& out, TextDescription d) {
  const std::string norm = normalize_text(d.text);
  for (const auto& e : out)
    if (normalize_text(e.text) == norm) return;
  out.push_back(std::move(d));
}

}  // namespace

std::vector<TextDescription> generate(const GenerateRequest& req, const GenerateContext& ctx) {
  if (req.count == 0) throw std::invalid_argument("generate: count must be at least 1");
  const std::string class_name = req.class_name.empty() ? req.concept_name : req.class_name;
  std::vector<TextDescription> out;

  if (const auto text = fixture_text(req.concept_name, req.aspect)) {
    out.push_back(make_description(class_name, DescriptionKind::Interpretive, *text, DescriptionSource::Fixture,
                                   req.aspect));
    return out;
  }

  const auto messages = render_format_prompt(default_format_prompt(req.aspect, req.concept_name));
  SamplingParams sampling = req.sampling;
  std::vector<std::string> keys;
  std::vector<std::optional<CacheRecord>> found;
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < req.count; ++i) {
    keys.push_back(cache_key(messages, sampling, i));
    found.push_back(ctx.cache ? ctx.cache->find(keys.back()) : std::nullopt);
    if (!found.back()) missing.push_back(i);
  }

  if (!missing.empty()) {
    if (ctx.mode == GenerationMode::Offline) {
      throw GenerationError("offline: no fixture or cached text for \"" + req.concept_name + "\" (" +
                            std::string(to_string(req.aspect)) + ")");
    }
    if (ctx.transport == nullptr) throw TransportError("online generation needs a transport");
    sampling.n = missing.size();
    const PromptRequest request{ctx.settings.endpoint, ctx.settings.model, messages, sampling};
    const auto completions = chat_completion(request, ctx.settings.api_key, *ctx.transport, ctx.sleep);
    if (completions.size() < missing.size()) {
      throw ProtocolError("asked for " + std::to_string(missing.size()) + " completions, got " +
                          std::to_string(completions.size()));
    }
    const std::string timestamp = ctx.clock();
    for (std::size_t j = 0; j < missing.size(); ++j) {
      const std::string text = cap_words(trim(completions[j]));
      if (text.empty()) throw GenerationError("empty completion for \"" + req.concept_name + "\"");
      CacheRecord r{keys[missing[j]], class_name, req.aspect, text, to_json(req.sampling), timestamp};
      if (ctx.cache) ctx.cache->append(r);
      found[missing[j]] = std::move(r);
    }
  }
  for (const auto& r : found) append_unique(out, from_record(*r));
  return out;
}

std::vector<std::vector<TextDescription>> generate_all(const std::vector<GenerateRequest>& reqs,
                                                       const GenerateContext& ctx, std::size_t max_in_flight) {
  std::vector<std::vector<TextDescription>> results(reqs.size());
  std::vector<std::exception_ptr> errors(reqs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < reqs.size(); i = next++) {
      try {
        results[i] = generate(reqs[i], ctx);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(max_in_flight, reqs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

// Description sets

bool DescriptionStore::add(TextDescription d) {
  if (trim(d.text).empty()) throw std::invalid_argument("description store: empty text");
  if (d.content_hash.empty()) d.content_hash = sha256_hex(d.text);
  auto& list = entries_[d.class_name];
  const std::string norm = normalize_text(d.text);
  for (const auto& e : list)
    if (normalize_text(e.text) == norm) return false;
  list.push_back(std::move(d));
  return true;
}

bool DescriptionStore::has_class(std::string_view class_name) const {
  return entries_.find(class_name) != entries_.end();
}

const std::vector<TextDescription>& DescriptionStore::for_class(std::string_view class_name) const {
  const auto it = entries_.find(class_name);
  if (it == entries_.end()) throw std::out_of_range("no descriptions for class " + std::string(class_name));
  return it->second;
}

std::vector<std::string> DescriptionStore::classes() const {
  std::vector<std::string> out;
  for (const auto& [name, list] : entries_) out.push_back(name);
  return out;
}

nlohmann::json DescriptionStore::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [name, list] : entries_)
    for (const auto& d : list) {
      j.push_back({{"class", d.class_name},
                   {"kind", std::string(claver::to_string(d.kind))},
                   {"aspect", d.aspect ? nlohmann::json(std::string(claver::to_string(*d.aspect))) : nlohmann::json()},
                   {"text", d.text},
                   {"source", std::string(claver::to_string(d.source))},
                   {"hash", d.content_hash},
                   {"metadata", d.metadata}});
    }
  return j;
}

DescriptionStore DescriptionStore::from_json(const nlohmann::json& j) {
  const auto parse_kind = [](const std::string& s) {
    for (auto k : {DescriptionKind::Label, DescriptionKind::Template, DescriptionKind::Interpretive})
      if (claver::to_string(k) == s) return k;
    throw std::invalid_argument("unknown description kind " + s);
  };
  const auto parse_source = [](const std::string& s) {
    for (auto k : {DescriptionSource::Generated, DescriptionSource::Fixture, DescriptionSource::Manual})
      if (claver::to_string(k) == s) return k;
    throw std::invalid_argument("unknown description source " + s);
  };
  DescriptionStore store;
  for (const auto& e : j) {
    TextDescription d;
    d.class_name = e.at("class").get<std::string>();
    d.kind = parse_kind(e.at("kind").get<std::string>());
    if (!e.at("aspect").is_null()) {
      const auto a = parse_aspect(e.at("aspect").get<std::string>());
      if (!a) throw std::invalid_argument("unknown aspect in description store");
      d.aspect = *a;
    }
    d.text = e.at("text").get<std::string>();
    d.source = parse_source(e.at("source").get<std::string>());
    d.content_hash = e.value("hash", std::string());
    d.metadata = e.value("metadata", nlohmann::json::object());
    store.add(std::move(d));
  }
  return store;
}

const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> templates{
      "a video of a person {label}.",
      "a clip of {label}.",
      "{label}, shown in a short video.",
  };
  return templates;
}

std::vector<std::vector<TextDescription>> assemble_description_set(const DescriptionStore& store,
                                                                   const std::vector<std::string>& classes,
                                                                   std::size_t per_class,
                                                                   const std::vector<std::string>& templates) {
  if (per_class == 0) throw std::invalid_argument("assemble: per-class count must be at least 1");
  std::vector<std::vector<TextDescription>> out;
  for (const auto& name : classes) {
    if (!store.has_class(name)) throw std::invalid_argument("assemble: class " + name + " is not in the store");
    const auto& entries = store.for_class(name);
    const auto label = std::find_if(entries.begin(), entries.end(),
                                    [](const TextDescription& d) { return d.kind == DescriptionKind::Label; });
    if (label == entries.end()) throw std::invalid_argument("assemble: class " + name + " has no label entry");

    std::vector<TextDescription> set{*label};
    for (const auto& t : templates) {
      if (set.size() >= per_class) break;
      std::string text = t;
      const auto at = text.find("{label}");
      if (at != std::string::npos) text.replace(at, 7, label->text);
      set.push_back(make_description(name, DescriptionKind::Template, text, DescriptionSource::Manual));
    }
    for (const auto& d : entries) {
      if (set.size() >= per_class) break;
      if (d.kind == DescriptionKind::Interpretive) set.push_back(d);
    }
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace claver
