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

#include "prefroute/common.h"

#include <openssl/sha.h>

#include <array>
#include <cstdlib>
#include <cstdint>

namespace prefroute {

std::size_t Utf8Length(std::string_view text) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t width = 1;
    if (lead >= 0xF0 && lead <= 0xF4) {
      width = 4;
    } else if (lead >= 0xE0) {
      width = 3;
    } else if (lead >= 0xC2 && lead <= 0xDF) {
      width = 2;
    }
    if (width > 1) {
      if (i + width > text.size()) {
        width = 1;
      } else {
        for (std::size_t k = 1; k < width; ++k) {
          const auto cont = static_cast<unsigned char>(text[i + k]);
          if ((cont & 0xC0) != 0x80) {
            width = 1;
            break;
          }
        }
      }
    }
    i += width;
    ++count;
  }
  return count;
}

std::string_view Trim(std::string_view text) {
  constexpr std::string_view kSpace = " \t\r\n\f\v";
  const auto begin = text.find_first_not_of(kSpace);
  if (begin == std::string_view::npos) return {};
  const auto end = text.find_last_not_of(kSpace);
  return text.substr(begin, end - begin + 1);
}

std::string Sha256Hex(std::string_view data) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(),
         digest.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * digest.size());
  for (unsigned char byte : digest) {
    out.push_back(kHex[byte >> 4]);
    out.push_back(kHex[byte & 0xF]);
  }
  return out;
}

std::string InterpolateEnv(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '$' && i + 1 < text.size() && text[i + 1] == '{') {
      const auto close = text.find('}', i + 2);
      if (close != std::string_view::npos) {
        const std::string name(text.substr(i + 2, close - i - 2));
        if (const char* value = std::getenv(name.c_str())) out += value;
        i = close;
        continue;
      }
    }
    out.push_back(text[i]);
  }
  return out;
}

UrlParts SplitUrl(std::string_view url) {
  const auto scheme = url.find("://");
  const std::size_t host_start = scheme == std::string_view::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  UrlParts parts;
  if (slash == std::string_view::npos) {
    parts.origin = std::string(url);
  } else {
    parts.origin = std::string(url.substr(0, slash));
    parts.path = std::string(url.substr(slash));
    while (!parts.path.empty() && parts.path.back() == '/') parts.path.pop_back();
  }
  return parts;
}

}  // namespace prefroute
