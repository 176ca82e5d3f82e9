// Copyright 2026 The Prefroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PREFROUTE_EMBEDDINGS_H_
#define PREFROUTE_EMBEDDINGS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "prefroute/common.h"

namespace prefroute {

// A query embedding. Stored as 32-bit floats; norms and dot products are
// accumulated in double.
struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  double Norm() const;
};

// dot(a, b) / (|a| |b|). Throws ConfigError on dimension mismatch or a zero
// norm.
double CosineSimilarity(std::span<const float> a, std::span<const float> b);
double CosineSimilarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Maps a list of texts to one embedding per text, order preserving.
using EmbedFn =
    std::function<std::vector<EmbeddingVector>(std::span<const std::string>)>;

class ProviderError : public Error {
 public:
  enum class Kind {
    kAuthentication,
    kRateLimited,
    kTransient,
    kPermanent,
    kDimensionMismatch,
  };
  ProviderError(Kind kind, const std::string& what)
      : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }
  bool retryable() const {
    return kind_ == Kind::kRateLimited || kind_ == Kind::kTransient;
  }

 private:
  Kind kind_;
};

// Connection settings for an OpenAI-compatible embeddings endpoint.
struct ProviderConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "text-embedding-3-small";
  std::string api_key_env = "OPENAI_API_KEY";
  std::size_t batch_size = 2048;
  double timeout_seconds = 30.0;
  int max_retries = 5;
  double initial_backoff_seconds = 0.5;
  std::size_t max_in_flight = 4;

  static ProviderConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string model_name() const = 0;
  virtual std::size_t max_batch_size() const = 0;
  // One network round trip (or equivalent). Must be safe to call
  // concurrently.
  virtual std::vector<EmbeddingVector> EmbedBatch(
      std::span<const std::string> texts) = 0;
};

// Deterministic offline embedder: signed feature hashing of lowercase word
// unigrams and character trigrams. Texts sharing vocabulary land close in
// cosine space, which is enough for tests and air-gapped runs.
class StubEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit StubEmbeddingProvider(std::size_t dim = 256, std::uint64_t seed = 0,
                                 std::size_t batch_size = 2048);

  std::string model_name() const override;
  std::size_t max_batch_size() const override { return batch_size_; }
  std::vector<EmbeddingVector> EmbedBatch(
      std::span<const std::string> texts) override;

  EmbeddingVector EmbedOne(std::string_view text) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::size_t batch_size_;
};

// POST {base_url}/embeddings with {"model": ..., "input": [...]}.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(ProviderConfig config);

  std::string model_name() const override { return config_.model; }
  std::size_t max_batch_size() const override { return config_.batch_size; }
  std::vector<EmbeddingVector> EmbedBatch(
      std::span<const std::string> texts) override;

 private:
  ProviderConfig config_;
};

// Persistent key-value store keyed by (provider model name, SHA-256 of the
// text). Append-only single file with a versioned magic header. An empty
// path keeps the cache in memory only.
class EmbeddingCache {
 public:
  static constexpr std::string_view kMagic = "PRFEMB01";

  explicit EmbeddingCache(std::filesystem::path path = {});

  std::optional<EmbeddingVector> Get(std::string_view model,
                                     std::string_view text) const;
  void Put(std::string_view model, std::string_view text,
           const EmbeddingVector& vector);

  // Dimension of vectors already stored for `model`, if any.
  std::optional<std::size_t> Dimension(std::string_view model) const;
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  static std::string Key(std::string_view model, std::string_view text);
  void Load();

  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::vector<float>> entries_;
  std::unordered_map<std::string, std::size_t> dims_;
  std::ofstream out_;
};

struct EmbedderStats {
  std::size_t cache_hits = 0;
  std::size_t network_batches = 0;
  std::size_t retries = 0;
};

// Cache-fronted, batching, retrying client over an EmbeddingProvider.
class Embedder {
 public:
  struct Options {
    int max_retries = 5;
    double initial_backoff_seconds = 0.5;
    std::size_t max_in_flight = 4;
  };

  Embedder(std::shared_ptr<EmbeddingProvider> provider,
           std::shared_ptr<EmbeddingCache> cache);
  Embedder(std::shared_ptr<EmbeddingProvider> provider,
           std::shared_ptr<EmbeddingCache> cache, Options options);

  std::vector<EmbeddingVector> Embed(std::span<const std::string> texts);
  EmbeddingVector EmbedOne(std::string_view text);

  EmbedFn AsFunction();
  std::string model_name() const { return provider_->model_name(); }
  EmbedderStats stats() const;

 private:
  std::vector<EmbeddingVector> FetchWithRetry(
      std::span<const std::string> texts);

  std::shared_ptr<EmbeddingProvider> provider_;
  std::shared_ptr<EmbeddingCache> cache_;
  Options options_;
  mutable std::mutex stats_mu_;
  EmbedderStats stats_;
};

// Builds the provider named by a CLI/config value: "stub", "stub:<dim>", or a
// path to a JSON ProviderConfig file.
std::shared_ptr<EmbeddingProvider> MakeProvider(const std::string& spec,
                                                bool offline);

}  // namespace prefroute

#endif  // PREFROUTE_EMBEDDINGS_H_
