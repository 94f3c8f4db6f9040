/*
 * Copyright 2026 The fedngdb Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEDNGDB_COMMON_H_
#define FEDNGDB_COMMON_H_

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedngdb {

inline constexpr const char* kVersion = "0.1.0";

// Global dense indices. Entity and relation ids are shared by every client.
using EntityId = int32_t;
using RelationId = int32_t;
using ClientId = int32_t;

// Error categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  kParse,
  kVocabulary,
  kConfig,
  kIo,
  kSampling,
  kClassification,
  kPlanning,
  kRetrieval,
  kEvaluation,
  kNumeric,
  kProtocol,
  kTraining,
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void Fail(ErrorKind kind, const std::string& message);

// Mixes a tag and a list of integers into a child seed. Used to give every
// sampler, client and protocol phase an independent reproducible stream.
uint64_t DeriveSeed(uint64_t seed, std::string_view tag,
                    std::initializer_list<uint64_t> parts = {});

// Seeded random stream. The engine is std::mt19937_64 whose output sequence is
// fixed by the standard; all conversions to floating point and bounded
// integers are done here so results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double Uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform01(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t Below(uint64_t n);

  // Zero-mean Laplace sample with scale b (density exp(-|x|/b) / 2b).
  double Laplace(double scale);

  template <typename T>
  void Shuffle(std::vector<T>& values) {
    for (size_t i = values.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(Below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  // Engine state in the standard textual form; round-trips exactly.
  std::string SerializeState() const;
  void RestoreState(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Lowercase hex SHA-256 digest.
std::string Sha256Hex(std::span<const uint8_t> bytes);
std::string Sha256Hex(std::string_view text);

}  // namespace fedngdb

#endif  // FEDNGDB_COMMON_H_
