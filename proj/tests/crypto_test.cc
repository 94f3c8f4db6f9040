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

#include <gtest/gtest.h>

#include "fedngdb/crypto.h"

namespace fedngdb {
namespace {

DhParams Toy() { return DhParams::Custom(BigInt(23), BigInt(5), true); }

// Textbook exchange: a = 6, b = 15 gives A = 8, B = 19 and s = 2.
TEST(Dh, TextbookInstance) {
  const DhParams p = Toy();
  const BigInt a(6), b(15);
  const BigInt A = DhPublic(p, a);
  const BigInt B = DhPublic(p, b);
  EXPECT_EQ(A.ToU64(), 8u);
  EXPECT_EQ(B.ToU64(), 19u);
  EXPECT_EQ(DhSharedSecret(p, a, B).ToU64(), 2u);
  EXPECT_EQ(DhSharedSecret(p, b, A).ToU64(), 2u);
}

// Property: both parties agree for random exponents in the toy group.
TEST(Dh, ToyGroupAgreementExhaustive) {
  const DhParams p = Toy();
  for (uint64_t a = 1; a < 22; ++a) {
    for (uint64_t b = 1; b < 22; ++b) {
      const BigInt sa = DhSharedSecret(p, BigInt(a), DhPublic(p, BigInt(b)));
      const BigInt sb = DhSharedSecret(p, BigInt(b), DhPublic(p, BigInt(a)));
      ASSERT_EQ(sa, sb);
      // Direct exponent product as an independent oracle.
      uint64_t expect = 1;
      for (uint64_t i = 0; i < a * b; ++i) expect = expect * 5 % 23;
      ASSERT_EQ(sa.ToU64(), expect);
    }
  }
}

TEST(Dh, DefaultGroupIsSafePrime2048) {
  const DhParams p = DhParams::Default();
  EXPECT_EQ(p.modulus.NumBits(), 2048);
  EXPECT_EQ(p.base.ToU64(), 2u);
  EXPECT_FALSE(p.test_mode);
  EXPECT_TRUE(p.modulus.IsProbablePrime());
  const BigInt q = BigInt::ShiftRight1(BigInt::Sub(p.modulus, BigInt(1)));
  EXPECT_TRUE(q.IsProbablePrime());
}

TEST(Dh, DefaultGroupAgreement) {
  const DhParams p = DhParams::Default();
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    const BigInt a = DhRandomSecret(p, rng);
    const BigInt b = DhRandomSecret(p, rng);
    EXPECT_EQ(DhSharedSecret(p, a, DhPublic(p, b)), DhSharedSecret(p, b, DhPublic(p, a)));
  }
}

TEST(Dh, RejectsDegeneratePeerValues) {
  const DhParams p = DhParams::Default();
  Rng rng(6);
  const BigInt a = DhRandomSecret(p, rng);
  for (const BigInt& bad : {BigInt(0), BigInt(1), BigInt::Sub(p.modulus, BigInt(1)), p.modulus}) {
    try {
      DhSharedSecret(p, a, bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
    }
  }
}

TEST(Dh, SmallModulusNeedsTestMode) {
  EXPECT_THROW(DhParams::Custom(BigInt(23), BigInt(5), false), Error);
}

TEST(Dh, RandomSecretInRange) {
  const DhParams p = Toy();
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const uint64_t s = DhRandomSecret(p, rng).ToU64();
    EXPECT_GE(s, 2u);
    EXPECT_LE(s, 21u);
  }
}

TEST(BigInt, HexAndBytesRoundTrip) {
  const BigInt x = BigInt::FromHex("0123456789abcdef0011");
  EXPECT_EQ(BigInt::FromHex(x.ToHex()), x);
  EXPECT_EQ(BigInt::FromBytes(x.ToBytes()), x);
  EXPECT_EQ(x.ToBytes(16).size(), 16u);
  EXPECT_EQ(BigInt(12345).ToDecimal(), "12345");
  EXPECT_THROW(BigInt::Sub(BigInt(1), BigInt(2)), Error);
}

TEST(Channel, KeysAreSymmetricAndPairSpecific) {
  const DhParams p = Toy();
  const BigInt s(2);
  EXPECT_EQ(DeriveChannelKey(p, s, 0, 1), DeriveChannelKey(p, s, 1, 0));
  EXPECT_NE(DeriveChannelKey(p, s, 0, 1), DeriveChannelKey(p, s, 0, 2));
  EXPECT_NE(DeriveChannelKey(p, s, 0, 1), DeriveChannelKey(p, BigInt(3), 0, 1));
}

TEST(Envelope, SealOpenRoundTrip) {
  SymmetricKey key{};
  key[0] = 7;
  std::array<uint8_t, 12> nonce{};
  nonce[3] = 1;
  const std::vector<uint8_t> msg = {1, 2, 3, 4, 5};
  const EncryptedEnvelope env = Seal(key, 0, 1, nonce, msg);
  EXPECT_EQ(env.ciphertext.size(), msg.size() + 16);
  EXPECT_EQ(Open(key, env), msg);
}

// Any single-bit change to ciphertext, tag, nonce or addressing fails.
TEST(Envelope, TamperIsDetected) {
  SymmetricKey key{};
  key[5] = 9;
  const std::array<uint8_t, 12> nonce{};
  const std::vector<uint8_t> msg(40, 0xab);
  const EncryptedEnvelope env = Seal(key, 2, 3, nonce, msg);
  auto expect_reject = [&](const EncryptedEnvelope& e) {
    try {
      Open(key, e);
      FAIL();
    } catch (const Error& err) {
      EXPECT_EQ(err.kind(), ErrorKind::kProtocol);
    }
  };
  for (size_t i = 0; i < env.ciphertext.size(); ++i) {
    EncryptedEnvelope e = env;
    e.ciphertext[i] ^= 0x01;
    expect_reject(e);
  }
  EncryptedEnvelope e = env;
  e.nonce[0] ^= 1;
  expect_reject(e);
  e = env;
  e.sender = 1;
  expect_reject(e);
  e = env;
  e.receiver = 4;
  expect_reject(e);
  SymmetricKey other = key;
  other[0] ^= 1;
  EXPECT_THROW(Open(other, env), Error);
}

}  // namespace
}  // namespace fedngdb
