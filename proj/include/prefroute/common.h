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

#ifndef PREFROUTE_COMMON_H_
#define PREFROUTE_COMMON_H_

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace prefroute {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data or files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or violated precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Logistic function. Evaluated on |x| and reflected so that
// Sigmoid(x) + Sigmoid(-x) == 1 holds exactly in floating point.
inline double Sigmoid(double x) {
  const double p = 1.0 / (1.0 + std::exp(-std::fabs(x)));
  return x >= 0.0 ? p : 1.0 - p;
}

// log(1 + exp(x)) without overflow.
inline double Softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Number of Unicode scalar values in a UTF-8 string. Invalid bytes count as
// one scalar each.
std::size_t Utf8Length(std::string_view text);

// Strips leading and trailing ASCII whitespace.
std::string_view Trim(std::string_view text);

// Lowercase hex SHA-256 digest of `data`.
std::string Sha256Hex(std::string_view data);

// Replaces ${NAME} occurrences with the value of environment variable NAME
// (empty when unset).
std::string InterpolateEnv(std::string_view text);

// "https://host:port/v1" -> origin "https://host:port", path "/v1".
struct UrlParts {
  std::string origin;
  std::string path;
};
UrlParts SplitUrl(std::string_view url);

}  // namespace prefroute

#endif  // PREFROUTE_COMMON_H_
