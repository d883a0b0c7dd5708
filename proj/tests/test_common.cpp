#include <cstdlib>

#include <gtest/gtest.h>

#include "stihrl/config.hpp"

using namespace stihrl;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformAndBelowStayInRange) {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(rng.below(7), 7u);
    }
}

TEST(Rng, SampleKeepsPoolOrderAndSize) {
    Rng rng(5);
    std::vector<int> pool{1, 2, 3, 4, 5, 6, 7, 8};
    const auto s = rng.sample(pool, 3);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(rng.sample(pool, 20), pool);
}

TEST(Rng, CategoricalNeverPicksZeroWeight) {
    Rng rng(9);
    const std::vector<double> w{0.0, 1.0, 0.0, 3.0};
    for (int i = 0; i < 1000; ++i) {
        const auto k = rng.categorical(w);
        EXPECT_TRUE(k == 1 || k == 3);
    }
}

TEST(Numeric, LogisticIsStableAtExtremes) {
    EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
    EXPECT_NEAR(logistic(800.0), 1.0, 1e-15);
    EXPECT_NEAR(logistic(-800.0), 0.0, 1e-15);
    EXPECT_NEAR(log_logistic(-800.0), -800.0, 1e-9);
    EXPECT_TRUE(std::isfinite(log_logistic(800.0)));
}

TEST(Config, ParsesCommentsAndTypes) {
    const auto cfg = Config::parse("# header\n a.b = 3\nname=hello world\nflag = true\nlist = 0.7, 0.1,0.2\n");
    EXPECT_EQ(cfg.get_int("a.b", 0), 3);
    EXPECT_EQ(cfg.get_string("name", ""), "hello world");
    EXPECT_TRUE(cfg.get_bool("flag", false));
    EXPECT_EQ(cfg.get_doubles("list", {}), (std::vector<double>{0.7, 0.1, 0.2}));
    EXPECT_EQ(cfg.get_double("missing", 1.5), 1.5);
}

TEST(Config, BadLinesAndValuesAreConfigErrors) {
    try {
        Config::parse("no equals sign");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
    const auto cfg = Config::parse("x = abc");
    try {
        cfg.get_double("x", 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}

TEST(Config, HashIgnoresKeyOrder) {
    const auto a = Config::parse("x = 1\ny = 2\n");
    const auto b = Config::parse("y = 2\n\n# c\nx = 1\n");
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.hash(), Config::parse("x = 1\ny = 3\n").hash());
}

TEST(Config, EnvironmentOverridesUseDoubleUnderscore) {
    ::setenv("STIHRL_train__epochs", "7", 1);
    Config cfg = Config::parse("train.epochs = 3");
    cfg.apply_environment();
    ::unsetenv("STIHRL_train__epochs");
    EXPECT_EQ(cfg.get_int("train.epochs", 0), 7);
}

TEST(Config, MissingFileIsMissingArtifact) {
    try {
        Config::load("/nonexistent/dir/x.conf");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::missing_artifact);
    }
}

TEST(Sha256, KnownDigest) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
