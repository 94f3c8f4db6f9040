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

#include "fedngdb/crypto.h"

#include <openssl/bn.h>
#include <openssl/evp.h>

#include <cstring>

namespace fedngdb {
namespace {

struct CtxDeleter {
  void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
using BnCtx = std::unique_ptr<BN_CTX, CtxDeleter>;

BnCtx NewCtx() {
  BnCtx ctx(BN_CTX_new());
  if (!ctx) Fail(ErrorKind::kProtocol, "BN_CTX_new failed");
  return ctx;
}

BIGNUM* Mut(const BigInt& b) { return const_cast<BIGNUM*>(b.get()); }

void Check(int rc, const char* what) {
  if (rc != 1) Fail(ErrorKind::kProtocol, std::string(what) + " failed");
}

struct CipherDeleter {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

void AppendId(std::vector<uint8_t>& out, ClientId id) {
  uint32_t v = static_cast<uint32_t>(id);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

std::vector<uint8_t> AssociatedData(ClientId sender, ClientId receiver) {
  std::vector<uint8_t> ad = {'f', 'n', 'g', 'd', 'b', '-', 'e', 'n', 'v'};
  AppendId(ad, sender);
  AppendId(ad, receiver);
  return ad;
}

constexpr size_t kTagBytes = 16;

}  // namespace

void BigInt::Deleter::operator()(bignum_st* bn) const { BN_clear_free(bn); }

BigInt::BigInt() : bn_(BN_new()) {
  if (!bn_) Fail(ErrorKind::kProtocol, "BN_new failed");
}

BigInt::BigInt(uint64_t value) : BigInt() {
  Check(BN_set_word(bn_.get(), value), "BN_set_word");
}

BigInt::BigInt(const BigInt& other) : bn_(BN_dup(other.bn_.get())) {
  if (!bn_) Fail(ErrorKind::kProtocol, "BN_dup failed");
}

BigInt& BigInt::operator=(const BigInt& other) {
  if (this != &other) {
    if (!bn_) bn_.reset(BN_new());
    if (!BN_copy(bn_.get(), other.bn_.get())) {
      Fail(ErrorKind::kProtocol, "BN_copy failed");
    }
  }
  return *this;
}

BigInt::~BigInt() = default;

BigInt BigInt::FromHex(const std::string& hex) {
  BigInt out;
  BIGNUM* raw = out.bn_.get();
  if (BN_hex2bn(&raw, hex.c_str()) == 0) {
    Fail(ErrorKind::kParse, "invalid hex integer");
  }
  return out;
}

BigInt BigInt::FromBytes(std::span<const uint8_t> big_endian) {
  BigInt out;
  if (!BN_bin2bn(big_endian.data(), static_cast<int>(big_endian.size()),
                 out.bn_.get())) {
    Fail(ErrorKind::kProtocol, "BN_bin2bn failed");
  }
  return out;
}

std::string BigInt::ToHex() const {
  char* s = BN_bn2hex(bn_.get());
  std::string out(s);
  OPENSSL_free(s);
  return out;
}

std::string BigInt::ToDecimal() const {
  char* s = BN_bn2dec(bn_.get());
  std::string out(s);
  OPENSSL_free(s);
  return out;
}

std::vector<uint8_t> BigInt::ToBytes(size_t width) const {
  size_t n = static_cast<size_t>(BN_num_bytes(bn_.get()));
  std::vector<uint8_t> out(std::max(n, width), 0);
  BN_bn2bin(bn_.get(), out.data() + (out.size() - n));
  return out;
}

int BigInt::NumBits() const { return BN_num_bits(bn_.get()); }

uint64_t BigInt::ToU64() const {
  if (NumBits() > 64) Fail(ErrorKind::kProtocol, "integer exceeds 64 bits");
  uint64_t v = 0;
  for (uint8_t b : ToBytes()) v = (v << 8) | b;
  return v;
}

bool BigInt::IsProbablePrime() const {
  BnCtx ctx = NewCtx();
  return BN_check_prime(bn_.get(), ctx.get(), nullptr) == 1;
}

int Compare(const BigInt& a, const BigInt& b) { return BN_cmp(a.get(), b.get()); }

BigInt BigInt::ModExp(const BigInt& base, const BigInt& exponent,
                      const BigInt& modulus) {
  BnCtx ctx = NewCtx();
  BigInt out;
  Check(BN_mod_exp(out.bn_.get(), base.get(), exponent.get(), modulus.get(),
                   ctx.get()),
        "BN_mod_exp");
  return out;
}

BigInt BigInt::Sub(const BigInt& a, const BigInt& b) {
  BigInt out;
  Check(BN_sub(out.bn_.get(), a.get(), b.get()), "BN_sub");
  if (BN_is_negative(out.bn_.get())) {
    Fail(ErrorKind::kProtocol, "negative big integer");
  }
  return out;
}

BigInt BigInt::ShiftRight1(const BigInt& a) {
  BigInt out;
  Check(BN_rshift1(out.bn_.get(), a.get()), "BN_rshift1");
  return out;
}

DhParams DhParams::Default() {
  DhParams p;
  if (!BN_get_rfc3526_prime_2048(Mut(p.modulus))) {
    Fail(ErrorKind::kProtocol, "could not load the 2048-bit MODP group");
  }
  p.base = BigInt(2);
  return p;
}

DhParams DhParams::Custom(BigInt modulus, BigInt base, bool test_mode) {
  if (!test_mode && modulus.NumBits() < 2048) {
    Fail(ErrorKind::kConfig,
         "Diffie-Hellman modulus below 2048 bits needs test mode");
  }
  if (modulus.NumBits() < 3 || !(BigInt(1) < base) || !(base < modulus)) {
    Fail(ErrorKind::kConfig, "invalid Diffie-Hellman group");
  }
  DhParams p;
  p.modulus = std::move(modulus);
  p.base = std::move(base);
  p.test_mode = test_mode;
  return p;
}

BigInt DhPublic(const DhParams& params, const BigInt& secret) {
  return BigInt::ModExp(params.base, secret, params.modulus);
}

BigInt DhSharedSecret(const DhParams& params, const BigInt& my_secret,
                      const BigInt& their_public) {
  if (!(their_public < params.modulus)) {
    Fail(ErrorKind::kProtocol, "peer public value out of range");
  }
  if (!params.test_mode) {
    BigInt upper = BigInt::Sub(params.modulus, BigInt(1));
    if (!(BigInt(1) < their_public) || !(their_public < upper)) {
      Fail(ErrorKind::kProtocol, "degenerate peer public value");
    }
  }
  return BigInt::ModExp(their_public, my_secret, params.modulus);
}

BigInt DhRandomSecret(const DhParams& params, Rng& rng) {
  // Exponent range [2, p - 2] has p - 3 elements.
  BigInt span = BigInt::Sub(params.modulus, BigInt(3));
  if (span.NumBits() <= 63) {
    return BigInt(2 + rng.Below(span.ToU64()));
  }
  // Wide groups: 256 random bits are far below p, so no reduction is needed.
  std::vector<uint8_t> bytes(32);
  for (size_t i = 0; i < bytes.size(); i += 8) {
    uint64_t w = rng.NextU64();
    std::memcpy(bytes.data() + i, &w, 8);
  }
  bytes[0] |= 0x80;  // full width, hence >= 2
  return BigInt::FromBytes(bytes);
}

SymmetricKey DeriveChannelKey(const DhParams& params, const BigInt& shared,
                              ClientId a, ClientId b) {
  size_t width = static_cast<size_t>((params.modulus.NumBits() + 7) / 8);
  std::vector<uint8_t> buf = shared.ToBytes(width);
  const char kLabel[] = "fedngdb-mask-channel";
  buf.insert(buf.end(), kLabel, kLabel + sizeof(kLabel) - 1);
  AppendId(buf, std::min(a, b));
  AppendId(buf, std::max(a, b));
  SymmetricKey key{};
  unsigned int len = 0;
  if (EVP_Digest(buf.data(), buf.size(), key.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != key.size()) {
    Fail(ErrorKind::kProtocol, "key derivation failed");
  }
  return key;
}

std::vector<uint8_t> EncryptedEnvelope::Serialize() const {
  std::vector<uint8_t> out;
  AppendId(out, sender);
  AppendId(out, receiver);
  out.insert(out.end(), nonce.begin(), nonce.end());
  out.insert(out.end(), ciphertext.begin(), ciphertext.end());
  return out;
}

EncryptedEnvelope Seal(const SymmetricKey& key, ClientId sender,
                       ClientId receiver, const std::array<uint8_t, 12>& nonce,
                       std::span<const uint8_t> plaintext) {
  std::unique_ptr<EVP_CIPHER_CTX, CipherDeleter> ctx(EVP_CIPHER_CTX_new());
  if (!ctx) Fail(ErrorKind::kProtocol, "EVP_CIPHER_CTX_new failed");
  Check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(),
                           nonce.data()),
        "EVP_EncryptInit_ex");
  std::vector<uint8_t> ad = AssociatedData(sender, receiver);
  int len = 0;
  Check(EVP_EncryptUpdate(ctx.get(), nullptr, &len, ad.data(),
                          static_cast<int>(ad.size())),
        "EVP_EncryptUpdate(aad)");
  EncryptedEnvelope env;
  env.sender = sender;
  env.receiver = receiver;
  env.nonce = nonce;
  env.ciphertext.resize(plaintext.size() + kTagBytes);
  Check(EVP_EncryptUpdate(ctx.get(), env.ciphertext.data(), &len,
                          plaintext.data(), static_cast<int>(plaintext.size())),
        "EVP_EncryptUpdate");
  int total = len;
  Check(EVP_EncryptFinal_ex(ctx.get(), env.ciphertext.data() + total, &len),
        "EVP_EncryptFinal_ex");
  total += len;
  Check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes,
                            env.ciphertext.data() + total),
        "EVP_CTRL_GCM_GET_TAG");
  env.ciphertext.resize(static_cast<size_t>(total) + kTagBytes);
  return env;
}

std::vector<uint8_t> Open(const SymmetricKey& key, const EncryptedEnvelope& env) {
  if (env.ciphertext.size() < kTagBytes) {
    Fail(ErrorKind::kProtocol, "envelope too short");
  }
  std::unique_ptr<EVP_CIPHER_CTX, CipherDeleter> ctx(EVP_CIPHER_CTX_new());
  if (!ctx) Fail(ErrorKind::kProtocol, "EVP_CIPHER_CTX_new failed");
  Check(EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(),
                           env.nonce.data()),
        "EVP_DecryptInit_ex");
  std::vector<uint8_t> ad = AssociatedData(env.sender, env.receiver);
  int len = 0;
  Check(EVP_DecryptUpdate(ctx.get(), nullptr, &len, ad.data(),
                          static_cast<int>(ad.size())),
        "EVP_DecryptUpdate(aad)");
  size_t body = env.ciphertext.size() - kTagBytes;
  std::vector<uint8_t> out(body + 1);
  Check(EVP_DecryptUpdate(ctx.get(), out.data(), &len, env.ciphertext.data(),
                          static_cast<int>(body)),
        "EVP_DecryptUpdate");
  int total = len;
  std::array<uint8_t, kTagBytes> tag;
  std::memcpy(tag.data(), env.ciphertext.data() + body, kTagBytes);
  Check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes,
                            tag.data()),
        "EVP_CTRL_GCM_SET_TAG");
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + total, &len) != 1) {
    Fail(ErrorKind::kProtocol, "envelope authentication failed from client " +
                                   std::to_string(env.sender));
  }
  total += len;
  out.resize(static_cast<size_t>(total));
  return out;
}

}  // namespace fedngdb
