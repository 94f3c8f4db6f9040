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

// Diffie-Hellman key agreement and the authenticated channel used to hand
// mask shares between clients. Big-number arithmetic and AES-256-GCM come
// from OpenSSL's libcrypto.

#ifndef FEDNGDB_CRYPTO_H_
#define FEDNGDB_CRYPTO_H_

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedngdb/common.h"

struct bignum_st;

namespace fedngdb {

// Owning arbitrary-precision non-negative integer.
class BigInt {
 public:
  BigInt();
  explicit BigInt(uint64_t value);
  BigInt(const BigInt& other);
  BigInt& operator=(const BigInt& other);
  BigInt(BigInt&&) noexcept = default;
  BigInt& operator=(BigInt&&) noexcept = default;
  ~BigInt();

  static BigInt FromHex(const std::string& hex);
  static BigInt FromBytes(std::span<const uint8_t> big_endian);

  std::string ToHex() const;
  std::string ToDecimal() const;
  // Big-endian, left-padded with zeros to `width` bytes when larger.
  std::vector<uint8_t> ToBytes(size_t width = 0) const;
  int NumBits() const;
  // Throws unless the value fits.
  uint64_t ToU64() const;

  bool IsProbablePrime() const;

  friend int Compare(const BigInt& a, const BigInt& b);
  friend bool operator==(const BigInt& a, const BigInt& b) {
    return Compare(a, b) == 0;
  }
  friend bool operator<(const BigInt& a, const BigInt& b) {
    return Compare(a, b) < 0;
  }

  // (base ^ exponent) mod modulus
  static BigInt ModExp(const BigInt& base, const BigInt& exponent,
                       const BigInt& modulus);
  static BigInt Sub(const BigInt& a, const BigInt& b);
  static BigInt ShiftRight1(const BigInt& a);

  const bignum_st* get() const { return bn_.get(); }

 private:
  struct Deleter {
    void operator()(bignum_st* bn) const;
  };
  std::unique_ptr<bignum_st, Deleter> bn_;
};

struct DhParams {
  BigInt modulus;
  BigInt base;
  // Test mode admits small groups and degenerate public values.
  bool test_mode = false;

  // 2048-bit MODP safe-prime group with generator 2 (RFC 3526, group 14).
  static DhParams Default();
  // Any group; requires test mode unless the modulus has >= 2048 bits.
  static DhParams Custom(BigInt modulus, BigInt base, bool test_mode);
};

// base ^ secret mod modulus
BigInt DhPublic(const DhParams& params, const BigInt& secret);

// their_public ^ my_secret mod modulus. Outside test mode the peer value must
// satisfy 1 < their_public < modulus - 1, else a protocol error.
BigInt DhSharedSecret(const DhParams& params, const BigInt& my_secret,
                      const BigInt& their_public);

// Uniform-ish private exponent in [2, modulus - 2] drawn from `rng`.
BigInt DhRandomSecret(const DhParams& params, Rng& rng);

using SymmetricKey = std::array<uint8_t, 32>;

// SHA-256 of the shared secret (padded to the modulus width) and the
// unordered client pair; both ends derive the same key.
SymmetricKey DeriveChannelKey(const DhParams& params, const BigInt& shared,
                              ClientId a, ClientId b);

struct EncryptedEnvelope {
  ClientId sender = 0;
  ClientId receiver = 0;
  std::array<uint8_t, 12> nonce{};
  std::vector<uint8_t> ciphertext;  // AES-256-GCM output followed by the tag

  std::vector<uint8_t> Serialize() const;
};

// Authenticated encryption bound to (sender, receiver) as associated data.
EncryptedEnvelope Seal(const SymmetricKey& key, ClientId sender,
                       ClientId receiver, const std::array<uint8_t, 12>& nonce,
                       std::span<const uint8_t> plaintext);

// Throws a protocol error on any authentication failure.
std::vector<uint8_t> Open(const SymmetricKey& key, const EncryptedEnvelope& env);

}  // namespace fedngdb

#endif  // FEDNGDB_CRYPTO_H_
