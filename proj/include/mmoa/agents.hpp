#pragma once

// Agent backends. Every agent maps an input vector (plus optional prompt and
// prior responses) to an output vector of the same dimension:
//   mock_linear  W x + b
//   mock_noisy   W x + b + N(0, stddev^2), seeded by (seed, layer, input)
//   text_echo    deterministic text built from the request, hashed to a vector
//   http         JSON over POST to a remote endpoint

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mmoa/router.hpp"

namespace mmoa {

enum class AgentKind { mock_linear, mock_noisy, text_echo, http };

inline const char* to_string(AgentKind k) {
  switch (k) {
    case AgentKind::mock_linear: return "mock_linear";
    case AgentKind::mock_noisy: return "mock_noisy";
    case AgentKind::text_echo: return "text_echo";
    case AgentKind::http: return "http";
  }
  return "?";
}

struct EmbeddingConfig {
  std::size_t dim = 8;
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

struct MockConfig {
  Matrix weight;  // dim x dim; empty means identity
  Vector bias;    // dim; empty means zero
  double noise_stddev = 0.0;
  std::uint64_t seed = 0;
  double latency_ms = 0.0;
  std::optional<int> fail_from_layer;  // unavailable at this layer and later
};

struct HttpConfig {
  std::string url;
  int timeout_ms = 2000;
  int retries = 0;
  std::string auth_header;  // passed through verbatim as Authorization
};

struct AgentSpec {
  std::string id;
  AgentKind kind = AgentKind::mock_linear;
  std::size_t dim = 0;
  MockConfig mock;
  HttpConfig http;
  std::uint64_t embedding_seed = EmbeddingConfig{}.seed;
  std::string persona;  // text_echo prefix

  EmbeddingConfig embedding() const { return {dim, embedding_seed}; }
};

struct AgentRequest {
  Vector input;
  int layer = 1;
  std::string prompt;
  std::vector<std::string> prior_text;
  std::string request_id;
};

// ---------------------------------------------------------------------------
// Text embedding

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// FNV-1a over the bytes, seeded, then finalized with a splitmix round.
inline std::uint64_t hash_bytes(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

inline std::uint64_t hash_vector(const Vector& v, std::uint64_t seed) {
  std::uint64_t h = mix64(seed);
  for (double x : v) h = mix64(h ^ std::bit_cast<std::uint64_t>(x));
  return h;
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// Signed feature hashing of the token bag, L2-normalized. Empty text maps to
// the zero vector. If the tokens cancel out (or there are none, e.g. pure
// whitespace) the raw text is hashed as one feature so non-empty input always
// has unit norm.
inline Vector embed_text(const EmbeddingConfig& cfg, std::string_view text) {
  if (cfg.dim == 0) throw ParameterError("embed_text: dim must be >= 1");
  Vector v(cfg.dim);
  if (text.empty()) return v;
  for (const auto& tok : tokenize(text)) {
    const std::uint64_t h = detail::hash_bytes(tok, cfg.seed);
    v[h % cfg.dim] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = l2_norm(v);
  if (norm == 0.0) {
    v[detail::hash_bytes(text, cfg.seed) % cfg.dim] = 1.0;
    norm = 1.0;
  }
  for (auto& x : v) x /= norm;
  return v;
}

// ---------------------------------------------------------------------------
// HTTP transport

namespace detail {

struct UrlParts {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline UrlParts split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("http agent url '" + url + "' has no scheme");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

// Keeps idle clients per endpoint so keep-alive connections are reused while
// concurrent callers each get their own client.
class HttpClientPool {
 public:
  explicit HttpClientPool(HttpConfig cfg) : cfg_(std::move(cfg)), url_(split_url(cfg_.url)) {}

  class Lease {
   public:
    Lease(HttpClientPool& pool, std::unique_ptr<httplib::Client> c) : pool_(pool), client_(std::move(c)) {}
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    ~Lease() { pool_.release(std::move(client_)); }
    httplib::Client& operator*() { return *client_; }
    httplib::Client* operator->() { return client_.get(); }

   private:
    HttpClientPool& pool_;
    std::unique_ptr<httplib::Client> client_;
  };

  Lease acquire() {
    {
      std::lock_guard lock(mu_);
      if (!idle_.empty()) {
        auto c = std::move(idle_.back());
        idle_.pop_back();
        return Lease(*this, std::move(c));
      }
    }
    auto c = std::make_unique<httplib::Client>(url_.base);
    const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
    c->set_connection_timeout(timeout);
    c->set_read_timeout(timeout);
    c->set_write_timeout(timeout);
    c->set_keep_alive(true);
    return Lease(*this, std::move(c));
  }

  const std::string& path() const noexcept { return url_.path; }
  const HttpConfig& config() const noexcept { return cfg_; }

 private:
  void release(std::unique_ptr<httplib::Client> c) {
    std::lock_guard lock(mu_);
    idle_.push_back(std::move(c));
  }

  HttpConfig cfg_;
  UrlParts url_;
  std::mutex mu_;
  std::vector<std::unique_ptr<httplib::Client>> idle_;
};

inline std::string prompt_for(const AgentRequest& req) {
  return req.prompt.empty() ? nlohmann::json(req.input.values()).dump() : req.prompt;
}

inline AgentOutput invoke_http(const AgentSpec& spec, HttpClientPool& pool, std::size_t index,
                               const AgentRequest& req) {
  const nlohmann::json body = {{"prompt", prompt_for(req)},
                               {"layer", req.layer},
                               {"prior_responses", req.prior_text},
                               {"request_id", req.request_id}};
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!spec.http.auth_header.empty()) headers.emplace("Authorization", spec.http.auth_header);

  std::string last_error = "no attempt made";
  const int attempts = 1 + std::max(0, spec.http.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    auto client = pool.acquire();
    auto res = client->Post(pool.path(), headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const auto doc = nlohmann::json::parse(res->body);
      if (!doc.is_object() || !doc.contains("text") || !doc["text"].is_string()) {
        last_error = "response has no string field 'text'";
        continue;
      }
      AgentOutput out;
      out.agent_index = index;
      out.text = doc["text"].get<std::string>();
      if (doc.contains("embedding") && !doc["embedding"].is_null()) {
        const auto& e = doc["embedding"];
        if (!e.is_array() || e.size() != spec.dim) {
          last_error = "embedding must be an array of " + std::to_string(spec.dim) + " numbers";
          continue;
        }
        std::vector<double> vals;
        for (const auto& x : e)
          if (x.is_number()) vals.push_back(x.get<double>());
        out.vec = Vector(std::move(vals));
        if (out.vec.dim() != spec.dim || !out.vec.all_finite()) {
          last_error = "embedding entries must be finite numbers";
          continue;
        }
      } else {
        out.vec = embed_text(spec.embedding(), *out.text);
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed response: ") + e.what();
    }
  }
  throw AgentUnavailable(spec.id, last_error + " after " + std::to_string(attempts) + " attempt(s)");
}

inline AgentOutput invoke_mock(const AgentSpec& spec, std::size_t index, const AgentRequest& req) {
  const auto& m = spec.mock;
  if (m.latency_ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(m.latency_ms));
  if (m.fail_from_layer && req.layer >= *m.fail_from_layer)
    throw AgentUnavailable(spec.id, "configured to fail from layer " + std::to_string(*m.fail_from_layer));

  AgentOutput out;
  out.agent_index = index;
  out.vec = m.weight.rows() == 0 ? req.input : matvec(m.weight, req.input);
  if (!m.bias.empty()) add_into(out.vec, m.bias);
  if (spec.kind == AgentKind::mock_noisy && m.noise_stddev > 0.0) {
    std::mt19937_64 rng(detail::hash_vector(req.input, m.seed ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(req.layer))));
    std::normal_distribution<double> noise(0.0, m.noise_stddev);
    for (auto& x : out.vec) x += noise(rng);
  }
  return out;
}

inline AgentOutput invoke_text(const AgentSpec& spec, std::size_t index, const AgentRequest& req) {
  std::string body;
  if (!req.prior_text.empty()) {
    for (const auto& t : req.prior_text) body += (body.empty() ? "" : " ") + t;
  } else {
    body = prompt_for(req);
  }
  AgentOutput out;
  out.agent_index = index;
  out.text = spec.persona.empty() ? body : spec.persona + " " + body;
  out.vec = embed_text(spec.embedding(), *out.text);
  return out;
}

}  // namespace detail

// Stateless entry point for non-HTTP kinds; HTTP agents go through AgentPool.
inline AgentOutput invoke(const AgentSpec& spec, std::size_t index, const AgentRequest& req) {
  if (req.input.dim() != spec.dim)
    throw ShapeError("agent '" + spec.id + "': input dim " + std::to_string(req.input.dim()) + " != " +
                     std::to_string(spec.dim));
  if (req.layer < 1) throw ParameterError("agent '" + spec.id + "': layer must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  AgentOutput out;
  switch (spec.kind) {
    case AgentKind::mock_linear:
    case AgentKind::mock_noisy: out = detail::invoke_mock(spec, index, req); break;
    case AgentKind::text_echo: out = detail::invoke_text(spec, index, req); break;
    case AgentKind::http: {
      detail::HttpClientPool pool(spec.http);
      out = detail::invoke_http(spec, pool, index, req);
      break;
    }
  }
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// Ordered agent set; index i always refers to the i-th spec. Counts calls
// per agent (including failed ones).
class AgentPool {
 public:
  explicit AgentPool(std::vector<AgentSpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw ConfigError("agent pool is empty");
    std::set<std::string> ids;
    const std::size_t dim = specs_.front().dim;
    for (const auto& s : specs_) {
      if (s.id.empty()) throw ConfigError("agent with empty id");
      if (!ids.insert(s.id).second) throw ConfigError("duplicate agent id '" + s.id + "'");
      if (s.dim == 0 || s.dim != dim)
        throw ConfigError("agent '" + s.id + "' has dim " + std::to_string(s.dim) + ", pool dim is " +
                          std::to_string(dim));
      if (s.kind == AgentKind::mock_linear || s.kind == AgentKind::mock_noisy) {
        const auto& m = s.mock;
        if (m.weight.rows() != 0 && (m.weight.rows() != dim || m.weight.cols() != dim))
          throw ConfigError("agent '" + s.id + "' weight is " + shape_str(m.weight) + ", expected square of dim " +
                            std::to_string(dim));
        if (!m.bias.empty() && m.bias.dim() != dim) throw ConfigError("agent '" + s.id + "' bias has wrong dim");
        if (m.noise_stddev < 0.0) throw ConfigError("agent '" + s.id + "' noise_stddev must be >= 0");
      }
      if (s.kind == AgentKind::http) {
        detail::split_url(s.http.url);
        if (s.http.timeout_ms <= 0) throw ConfigError("agent '" + s.id + "' timeout_ms must be positive");
        if (s.http.retries < 0) throw ConfigError("agent '" + s.id + "' retries must be >= 0");
      }
    }
    http_.resize(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (specs_[i].kind == AgentKind::http) http_[i] = std::make_unique<detail::HttpClientPool>(specs_[i].http);
    calls_ = std::make_unique<std::atomic<std::size_t>[]>(specs_.size());
  }

  std::size_t size() const noexcept { return specs_.size(); }
  std::size_t dim() const noexcept { return specs_.front().dim; }
  const AgentSpec& spec(std::size_t i) const { return specs_.at(i); }
  const std::vector<AgentSpec>& specs() const noexcept { return specs_; }

  AgentOutput invoke(std::size_t i, const AgentRequest& req) const {
    const auto& s = specs_.at(i);
    calls_[i].fetch_add(1, std::memory_order_relaxed);
    if (s.kind != AgentKind::http) return mmoa::invoke(s, i, req);
    if (req.input.dim() != s.dim) throw ShapeError("agent '" + s.id + "': input dim mismatch");
    const auto start = std::chrono::steady_clock::now();
    auto out = detail::invoke_http(s, *http_[i], i, req);
    out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  std::size_t calls(std::size_t i) const { return calls_[i].load(); }
  std::size_t total_calls() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) n += calls_[i].load();
    return n;
  }
  void reset_calls() {
    for (std::size_t i = 0; i < specs_.size(); ++i) calls_[i].store(0);
  }

 private:
  std::vector<AgentSpec> specs_;
  std::vector<std::unique_ptr<detail::HttpClientPool>> http_;
  std::unique_ptr<std::atomic<std::size_t>[]> calls_;
};

inline AgentPool build_pool(std::vector<AgentSpec> specs) { return AgentPool(std::move(specs)); }

inline AgentSpec mock_linear_agent(std::string id, Matrix weight, Vector bias = {}) {
  AgentSpec s;
  s.id = std::move(id);
  s.kind = AgentKind::mock_linear;
  s.dim = weight.rows();
  s.mock.weight = std::move(weight);
  s.mock.bias = std::move(bias);
  return s;
}

}  // namespace mmoa
