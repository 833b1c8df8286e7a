#include <gtest/gtest.h>

#include "lsspi/core/rng.hpp"
#include "lsspi/core/sha256.hpp"
#include "lsspi/core/types.hpp"

using namespace lsspi;

TEST(Rng, DeterministicStreams) {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_EQ(a.raw(), b.raw());
    }
    Rng c(42), d(43);
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs |= (c.raw() != d.raw());
    EXPECT_TRUE(differs);
}

TEST(Rng, UniformRange) {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, NormalMoments) {
    Rng rng(2);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.02);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(Sha256::hex(std::string("")),
              "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(Sha256::hex(std::string("abc")),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(Sha256::hex(std::string(
                  "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")),
              "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Sha256, IncrementalMatchesOneShot) {
    Sha256 h;
    h.update(std::string("hello "));
    h.update(std::string("world"));
    EXPECT_EQ(h.hex_digest(), Sha256::hex(std::string("hello world")));
}

TEST(Flatten, RowMajorRoundTrip) {
    Mat m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const Vec v = flatten_rowmajor(m);
    for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(v[i], i + 1);
    const Mat back = unflatten_rowmajor(v, 2, 3);
    EXPECT_TRUE(back.isApprox(m));
    EXPECT_THROW(unflatten_rowmajor(v, 4, 2), InvalidArgument);
}
