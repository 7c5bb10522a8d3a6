#pragma once

// HTTP clients for a served translation model and a served embedding model.
//
//   POST <base>/v1/next_token  {"source_ids": [...], "prefix_ids": [...]}
//                           -> {"logprobs": [...]}   (|V| entries, null = -inf)
//   POST <base>/v1/embed       {"texts": [...], "lang": "xx"}
//                           -> {"vectors": [[...], ...], "dim": d}
//                              422 when the language is unsupported

#include <chrono>
#include <condition_variable>
#include <limits>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mutarjem/distribution.hpp"
#include "mutarjem/embed.hpp"
#include "mutarjem/error.hpp"
#include "mutarjem/model.hpp"
#include "mutarjem/text.hpp"

namespace mutarjem {

/// "http://host:port/optional/prefix" split into the client origin and path prefix.
struct Endpoint {
  std::string origin;
  std::string path_prefix;

  static Endpoint parse(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) throw ConfigError("endpoint URL needs a scheme: '" + std::string(url) + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = std::string(url.substr(0, path_start));
    if (path_start != std::string_view::npos) ep.path_prefix = std::string(url.substr(path_start));
    while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
    return ep;
  }

  std::string url(std::string_view path) const { return origin + path_prefix + std::string(path); }
};

/// Fixed set of keep-alive clients. Each request borrows one; a client serves
/// one request at a time.
class ClientPool {
 public:
  ClientPool(const Endpoint& endpoint, std::size_t size, std::chrono::milliseconds timeout) {
    if (size == 0) throw ConfigError("connection pool size must be positive");
    for (std::size_t i = 0; i < size; ++i) {
      auto client = std::make_unique<httplib::Client>(endpoint.origin);
      client->set_keep_alive(true);
      client->set_connection_timeout(timeout);
      client->set_read_timeout(timeout);
      client->set_write_timeout(timeout);
      idle_.push_back(std::move(client));
    }
  }

  class Lease {
   public:
    Lease(ClientPool& pool, std::unique_ptr<httplib::Client> client) : pool_(pool), client_(std::move(client)) {}
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    ~Lease() { pool_.give_back(std::move(client_)); }
    httplib::Client& operator*() { return *client_; }
    httplib::Client* operator->() { return client_.get(); }

   private:
    ClientPool& pool_;
    std::unique_ptr<httplib::Client> client_;
  };

  Lease acquire() {
    std::unique_lock lock(mutex_);
    available_.wait(lock, [this] { return !idle_.empty(); });
    auto client = std::move(idle_.back());
    idle_.pop_back();
    return Lease(*this, std::move(client));
  }

 private:
  void give_back(std::unique_ptr<httplib::Client> client) {
    {
      std::lock_guard lock(mutex_);
      idle_.push_back(std::move(client));
    }
    available_.notify_one();
  }

  std::mutex mutex_;
  std::condition_variable available_;
  std::vector<std::unique_ptr<httplib::Client>> idle_;
};

namespace detail {

inline nlohmann::json post_json(ClientPool& pool, const Endpoint& ep, std::string_view path,
                                const nlohmann::json& body, int* status_out = nullptr) {
  const std::string full = ep.url(path);
  auto client = pool.acquire();
  auto res = client->Post(ep.path_prefix + std::string(path), body.dump(), "application/json");
  if (!res) throw TransportError(full, httplib::to_string(res.error()));
  if (status_out) *status_out = res->status;
  if (res->status == 422) return nlohmann::json::parse(res->body, nullptr, false);
  if (res->status < 200 || res->status >= 300)
    throw TransportError(full, "HTTP status " + std::to_string(res->status));
  auto doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) throw FormatError("response from " + full + " is not valid JSON");
  return doc;
}

}  // namespace detail

/// ConditionalModel backed by a served model. The vocabulary must match the
/// server's output layer.
class HttpModel final : public ModelPort {
 public:
  HttpModel(Vocabulary vocab, std::string_view base_url, std::size_t pool_size = 4,
            std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : vocab_(std::move(vocab)),
        endpoint_(Endpoint::parse(base_url)),
        pool_(std::make_unique<ClientPool>(endpoint_, pool_size, timeout)) {}

  const Vocabulary& vocabulary() const override { return vocab_; }
  const Endpoint& endpoint() const noexcept { return endpoint_; }

  NextTokenDistribution next_token(std::span<const TokenId> source, std::span<const TokenId> prefix) const override {
    const nlohmann::json body = {{"source_ids", std::vector<TokenId>(source.begin(), source.end())},
                                 {"prefix_ids", std::vector<TokenId>(prefix.begin(), prefix.end())}};
    const auto doc = detail::post_json(*pool_, endpoint_, "/v1/next_token", body);
    const std::string where = endpoint_.url("/v1/next_token");
    if (!doc.is_object() || !doc.contains("logprobs") || !doc["logprobs"].is_array())
      throw FormatError("response from " + where + " lacks a logprobs array");
    const auto& arr = doc["logprobs"];
    if (arr.size() != vocab_.size())
      throw FormatError("response from " + where + " has " + std::to_string(arr.size()) +
                        " logprobs for a vocabulary of " + std::to_string(vocab_.size()));
    std::vector<double> logprobs;
    logprobs.reserve(arr.size());
    for (const auto& v : arr)
      logprobs.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
    return NextTokenDistribution::from_logprobs(logprobs);
  }

 private:
  Vocabulary vocab_;
  Endpoint endpoint_;
  std::unique_ptr<ClientPool> pool_;
};

/// Embedding provider backed by a served sentence encoder. Requests carry at
/// most kBatchSize texts; returned vectors are re-normalized to unit length.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kBatchSize = 64;

  explicit RemoteEmbeddingProvider(std::string_view base_url, std::size_t pool_size = 4,
                                   std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : url_(base_url),
        endpoint_(Endpoint::parse(base_url)),
        pool_(std::make_unique<ClientPool>(endpoint_, pool_size, timeout)) {}

  std::string name() const override { return "remote:" + url_; }
  bool supports(std::string_view) const override { return true; }

  EmbeddingVector embed(std::string_view text, std::string_view lang) const override {
    const std::string t(text);
    return embed_batch(std::span<const std::string>(&t, 1), lang).front();
  }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, std::string_view lang) const override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += kBatchSize) {
      const auto chunk = texts.subspan(start, std::min(kBatchSize, texts.size() - start));
      const nlohmann::json body = {{"texts", std::vector<std::string>(chunk.begin(), chunk.end())},
                                   {"lang", std::string(lang)}};
      int status = 0;
      const auto doc = detail::post_json(*pool_, endpoint_, "/v1/embed", body, &status);
      if (status == 422) throw UnsupportedLanguageError(std::string(lang));
      const std::string where = endpoint_.url("/v1/embed");
      if (!doc.is_object() || !doc.contains("vectors") || !doc["vectors"].is_array())
        throw FormatError("response from " + where + " lacks a vectors array");
      const auto& vectors = doc["vectors"];
      if (vectors.size() != chunk.size())
        throw FormatError("response from " + where + " has " + std::to_string(vectors.size()) + " vectors for " +
                          std::to_string(chunk.size()) + " texts");
      const std::size_t dim = doc.value("dim", std::size_t{0});
      for (const auto& v : vectors) {
        EmbeddingVector e(v.get<std::vector<double>>());
        if (dim != 0 && e.dim() != dim) throw FormatError("response from " + where + " has inconsistent dims");
        out.push_back(e.unit());
      }
    }
    return out;
  }

 private:
  std::string url_;
  Endpoint endpoint_;
  std::unique_ptr<ClientPool> pool_;
};

}  // namespace mutarjem
