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

#include "prefroute/embeddings.h"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <future>
#include <thread>
#include <unordered_set>

#include "httplib.h"

namespace prefroute {

using nlohmann::json;

double EmbeddingVector::Norm() const {
  double sum = 0.0;
  for (float v : values) sum += static_cast<double>(v) * v;
  return std::sqrt(sum);
}

double CosineSimilarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ConfigError("cosine similarity: dimension mismatch (" +
                      std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw ConfigError("cosine similarity: zero-norm vector");
  }
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double CosineSimilarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return CosineSimilarity(std::span<const float>(a.values),
                          std::span<const float>(b.values));
}

ProviderConfig ProviderConfig::FromJson(const json& j) {
  ProviderConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.initial_backoff_seconds =
      j.value("initial_backoff_seconds", c.initial_backoff_seconds);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  if (c.batch_size == 0) throw ConfigError("provider batch_size must be > 0");
  return c;
}

json ProviderConfig::ToJson() const {
  return {{"base_url", base_url},
          {"model", model},
          {"api_key_env", api_key_env},
          {"batch_size", batch_size},
          {"timeout_seconds", timeout_seconds},
          {"max_retries", max_retries},
          {"initial_backoff_seconds", initial_backoff_seconds},
          {"max_in_flight", max_in_flight}};
}

namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t HashToken(std::string_view token, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ SplitMix64(seed);
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return SplitMix64(h);
}

}  // namespace

StubEmbeddingProvider::StubEmbeddingProvider(std::size_t dim,
                                             std::uint64_t seed,
                                             std::size_t batch_size)
    : dim_(dim), seed_(seed), batch_size_(batch_size) {
  if (dim_ == 0) throw ConfigError("stub embedder dimension must be > 0");
  if (batch_size_ == 0) throw ConfigError("stub batch size must be > 0");
}

std::string StubEmbeddingProvider::model_name() const {
  return "stub-hash-" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

EmbeddingVector StubEmbeddingProvider::EmbedOne(std::string_view text) const {
  EmbeddingVector out;
  out.values.assign(dim_, 0.0f);
  auto add = [&](std::string_view feature, float weight) {
    const std::uint64_t h = HashToken(feature, seed_);
    const float sign = (h >> 63) ? -1.0f : 1.0f;
    out.values[h % dim_] += sign * weight;
  };

  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    lowered.push_back(c < 0x80 ? static_cast<char>(std::tolower(c))
                               : static_cast<char>(c));
  }
  std::string word;
  bool any = false;
  auto flush = [&] {
    if (!word.empty()) {
      add(word, 1.0f);
      any = true;
      word.clear();
    }
  };
  for (char c : lowered) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || std::isalnum(u)) {
      word.push_back(c);
    } else {
      flush();
    }
  }
  flush();
  for (std::size_t i = 0; i + 3 <= lowered.size(); ++i) {
    add(std::string_view(lowered).substr(i, 3), 0.25f);
    any = true;
  }
  if (!any) add(text, 1.0f);
  if (out.Norm() == 0.0) out.values[HashToken(text, seed_ + 1) % dim_] = 1.0f;
  return out;
}

std::vector<EmbeddingVector> StubEmbeddingProvider::EmbedBatch(
    std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(EmbedOne(t));
  return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(ProviderConfig config)
    : config_(std::move(config)) {}

std::vector<EmbeddingVector> HttpEmbeddingProvider::EmbedBatch(
    std::span<const std::string> texts) {
  const UrlParts url = SplitUrl(config_.base_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(
      std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(
      std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str())) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const json body = {{"model", config_.model},
                     {"input", std::vector<std::string>(texts.begin(),
                                                        texts.end())}};
  auto res = client.Post(url.path + "/embeddings", headers, body.dump(),
                         "application/json");
  if (!res) {
    throw ProviderError(ProviderError::Kind::kTransient,
                        "embedding request failed: " +
                            httplib::to_string(res.error()));
  }
  if (res->status == 401 || res->status == 403) {
    throw ProviderError(ProviderError::Kind::kAuthentication,
                        "embedding provider rejected credentials (HTTP " +
                            std::to_string(res->status) + ")");
  }
  if (res->status == 429) {
    throw ProviderError(ProviderError::Kind::kRateLimited,
                        "embedding provider rate limit (HTTP 429)");
  }
  if (res->status >= 500) {
    throw ProviderError(ProviderError::Kind::kTransient,
                        "embedding provider HTTP " +
                            std::to_string(res->status));
  }
  if (res->status != 200) {
    throw ProviderError(ProviderError::Kind::kPermanent,
                        "embedding provider HTTP " +
                            std::to_string(res->status) + ": " + res->body);
  }
  std::vector<EmbeddingVector> out(texts.size());
  try {
    const json reply = json::parse(res->body);
    const auto& data = reply.at("data");
    if (data.size() != texts.size()) {
      throw ProviderError(ProviderError::Kind::kPermanent,
                          "embedding provider returned " +
                              std::to_string(data.size()) + " vectors for " +
                              std::to_string(texts.size()) + " inputs");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t index = data[i].value("index", i);
      if (index >= out.size()) {
        throw ProviderError(ProviderError::Kind::kPermanent,
                            "embedding index out of range");
      }
      out[index].values = data[i].at("embedding").get<std::vector<float>>();
    }
  } catch (const json::exception& e) {
    throw ProviderError(ProviderError::Kind::kPermanent,
                        std::string("malformed embedding response: ") +
                            e.what());
  }
  return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path path)
    : path_(std::move(path)) {
  if (path_.empty()) return;
  Load();
  const bool fresh = !std::filesystem::exists(path_) ||
                     std::filesystem::file_size(path_) == 0;
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw DataError("cannot open embedding cache " + path_.string());
  if (fresh) {
    out_.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
    out_.flush();
  }
}

std::string EmbeddingCache::Key(std::string_view model,
                                std::string_view text) {
  std::string key(model);
  key.push_back('\n');
  key += Sha256Hex(text);
  return key;
}

void EmbeddingCache::Load() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (in.gcount() == 0) return;
  if (magic != kMagic) {
    throw DataError("embedding cache " + path_.string() +
                    " has an unrecognized header");
  }
  // Records: u32 key length, key bytes, u32 dim, dim float32 values. A
  // truncated trailing record from an interrupted write is ignored.
  while (true) {
    std::uint32_t key_len = 0;
    if (!in.read(reinterpret_cast<char*>(&key_len), sizeof key_len)) break;
    std::string key(key_len, '\0');
    if (!in.read(key.data(), key_len)) break;
    std::uint32_t dim = 0;
    if (!in.read(reinterpret_cast<char*>(&dim), sizeof dim)) break;
    std::vector<float> values(dim);
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(dim * sizeof(float)))) {
      break;
    }
    dims_[key.substr(0, key.find('\n'))] = dim;
    entries_[std::move(key)] = std::move(values);
  }
}

std::optional<EmbeddingVector> EmbeddingCache::Get(
    std::string_view model, std::string_view text) const {
  const std::string key = Key(model, text);
  std::shared_lock lock(mu_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return EmbeddingVector{it->second};
}

void EmbeddingCache::Put(std::string_view model, std::string_view text,
                         const EmbeddingVector& vector) {
  std::string key = Key(model, text);
  std::unique_lock lock(mu_);
  const auto dim_it = dims_.find(std::string(model));
  if (dim_it != dims_.end() && dim_it->second != vector.dim()) {
    throw ProviderError(ProviderError::Kind::kDimensionMismatch,
                        "embedding dimension " + std::to_string(vector.dim()) +
                            " does not match cached dimension " +
                            std::to_string(dim_it->second) + " for model " +
                            std::string(model));
  }
  if (entries_.contains(key)) return;
  dims_[std::string(model)] = vector.dim();
  if (out_.is_open()) {
    const auto key_len = static_cast<std::uint32_t>(key.size());
    const auto dim = static_cast<std::uint32_t>(vector.dim());
    out_.write(reinterpret_cast<const char*>(&key_len), sizeof key_len);
    out_.write(key.data(), key_len);
    out_.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    out_.write(reinterpret_cast<const char*>(vector.values.data()),
               static_cast<std::streamsize>(dim * sizeof(float)));
    out_.flush();
  }
  entries_.emplace(std::move(key), vector.values);
}

std::optional<std::size_t> EmbeddingCache::Dimension(
    std::string_view model) const {
  std::shared_lock lock(mu_);
  const auto it = dims_.find(std::string(model));
  if (it == dims_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

Embedder::Embedder(std::shared_ptr<EmbeddingProvider> provider,
                   std::shared_ptr<EmbeddingCache> cache)
    : Embedder(std::move(provider), std::move(cache), Options{}) {}

Embedder::Embedder(std::shared_ptr<EmbeddingProvider> provider,
                   std::shared_ptr<EmbeddingCache> cache, Options options)
    : provider_(std::move(provider)),
      cache_(cache ? std::move(cache) : std::make_shared<EmbeddingCache>()),
      options_(options) {
  if (!provider_) throw ConfigError("embedder requires a provider");
  if (options_.max_in_flight == 0) options_.max_in_flight = 1;
}

std::vector<EmbeddingVector> Embedder::FetchWithRetry(
    std::span<const std::string> texts) {
  double backoff = options_.initial_backoff_seconds;
  for (int attempt = 0;; ++attempt) {
    try {
      {
        std::lock_guard lock(stats_mu_);
        ++stats_.network_batches;
      }
      return provider_->EmbedBatch(texts);
    } catch (const ProviderError& e) {
      if (!e.retryable() || attempt >= options_.max_retries) throw;
      {
        std::lock_guard lock(stats_mu_);
        ++stats_.retries;
      }
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
}

std::vector<EmbeddingVector> Embedder::Embed(
    std::span<const std::string> texts) {
  const std::string model = provider_->model_name();
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<std::string> misses;
  std::unordered_map<std::string, std::vector<std::size_t>> slots;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (auto cached = cache_->Get(model, texts[i])) {
      out[i] = std::move(*cached);
      ++hits;
      continue;
    }
    auto [it, inserted] = slots.try_emplace(texts[i]);
    if (inserted) misses.push_back(texts[i]);
    it->second.push_back(i);
  }
  {
    std::lock_guard lock(stats_mu_);
    stats_.cache_hits += hits;
  }
  if (misses.empty()) return out;

  const std::size_t batch = std::max<std::size_t>(1, provider_->max_batch_size());
  std::vector<std::span<const std::string>> batches;
  for (std::size_t start = 0; start < misses.size(); start += batch) {
    batches.emplace_back(misses.data() + start,
                         std::min(batch, misses.size() - start));
  }

  auto store = [&](std::span<const std::string> chunk,
                   std::vector<EmbeddingVector> vectors) {
    if (vectors.size() != chunk.size()) {
      throw ProviderError(ProviderError::Kind::kPermanent,
                          "provider returned wrong number of vectors");
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      cache_->Put(model, chunk[i], vectors[i]);
      for (std::size_t slot : slots.at(chunk[i])) out[slot] = vectors[i];
    }
  };

  for (std::size_t wave = 0; wave < batches.size();
       wave += options_.max_in_flight) {
    const std::size_t end =
        std::min(batches.size(), wave + options_.max_in_flight);
    if (end - wave == 1) {
      store(batches[wave], FetchWithRetry(batches[wave]));
      continue;
    }
    std::vector<std::future<std::vector<EmbeddingVector>>> inflight;
    for (std::size_t b = wave; b < end; ++b) {
      inflight.push_back(std::async(std::launch::async, [this, &batches, b] {
        return FetchWithRetry(batches[b]);
      }));
    }
    for (std::size_t b = wave; b < end; ++b) {
      store(batches[b], inflight[b - wave].get());
    }
  }
  return out;
}

EmbeddingVector Embedder::EmbedOne(std::string_view text) {
  const std::string owned(text);
  return Embed(std::span<const std::string>(&owned, 1)).front();
}

EmbedFn Embedder::AsFunction() {
  return [this](std::span<const std::string> texts) { return Embed(texts); };
}

EmbedderStats Embedder::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

std::shared_ptr<EmbeddingProvider> MakeProvider(const std::string& spec,
                                                bool offline) {
  if (spec.rfind("stub:", 0) == 0) {
    std::size_t dim = 0;
    try {
      dim = static_cast<std::size_t>(std::stoul(spec.substr(5)));
    } catch (const std::exception&) {
    }
    if (dim == 0) throw ConfigError("invalid stub dimension in " + spec);
    return std::make_shared<StubEmbeddingProvider>(dim);
  }
  if (offline || spec.empty() || spec == "stub") {
    return std::make_shared<StubEmbeddingProvider>();
  }
  std::ifstream in(spec);
  if (!in) throw ConfigError("cannot read embedding provider config " + spec);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid provider config " + spec + ": " + e.what());
  }
  return std::make_shared<HttpEmbeddingProvider>(ProviderConfig::FromJson(j));
}

}  // namespace prefroute
