#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pcbb/ans.hpp"

using namespace pcbb;
using namespace pcbb::ans;

namespace {

// High-precision Phi oracle: composite Simpson over the standard normal
// density in long double, independent of the erfc-based implementation.
long double phi_oracle(long double x) {
    const long double sign = x < 0 ? -1.0L : 1.0L;
    const long double b = std::fabs(x);
    const std::size_t n = 200000;  // even
    const long double h = b / n;
    auto dens = [](long double t) {
        return std::exp(-0.5L * t * t) / std::sqrt(2.0L * 3.141592653589793238462643383279503L);
    };
    long double acc = dens(0.0L) + dens(b);
    for (std::size_t i = 1; i < n; ++i) acc += dens(h * i) * ((i % 2) ? 4.0L : 2.0L);
    long double integral = acc * h / 3.0L;
    return 0.5L + sign * integral;
}

QuantizedCdf random_cdf(std::size_t symbols, std::mt19937_64& rng) {
    std::vector<std::uint32_t> freq(symbols, 1);
    std::uint32_t left = kProbScale - static_cast<std::uint32_t>(symbols);
    std::uniform_int_distribution<std::size_t> pick(0, symbols - 1);
    // dirichlet-ish: split the budget over random cut points
    std::vector<double> weights(symbols);
    std::exponential_distribution<double> expd(1.0);
    double total = 0;
    for (auto& w : weights) total += (w = expd(rng));
    std::uint32_t used = 0;
    for (std::size_t i = 0; i + 1 < symbols; ++i) {
        auto f = static_cast<std::uint32_t>(weights[i] / total * left);
        f = std::min(f, left - used);
        freq[i] += f;
        used += f;
    }
    freq[symbols - 1] += left - used;
    return QuantizedCdf(std::move(freq));
}

}  // namespace

TEST(AnsState, EmptySeedIsMinimalValidState) {
    AnsState s = init_state({});
    EXPECT_EQ(s.head, kStateLow);
    EXPECT_TRUE(s.stack.empty());
}

TEST(AnsState, SeedAccountingFormula) {
    for (std::size_t k : {2u, 5u, 9u}) {
        std::vector<std::uint32_t> words(k, 0x1234u);
        AnsState s = init_state(words);
        EXPECT_EQ(total_bits(s), 64 + 32 * (k - 2));
    }
}

TEST(AnsState, SameSeedSameState) {
    std::vector<std::uint32_t> words{1, 2, 3, 4};
    EXPECT_TRUE(init_state(words) == init_state(words));
}

TEST(PushPop, InversePair) {
    std::mt19937_64 rng(1);
    auto cdf = random_cdf(7, rng);
    AnsState s = init_state({0xdeadbeefu, 0x12345678u, 42u});
    for (std::size_t sym = 0; sym < 7; ++sym) {
        AnsState before = s;
        push(s, sym, cdf);
        EXPECT_EQ(pop(s, cdf), sym);
        EXPECT_TRUE(s == before);
        push(s, sym, cdf);  // leave it coded so the state keeps growing
    }
}

TEST(PushPop, LifoOrder) {
    std::mt19937_64 rng(2);
    auto cdf = random_cdf(5, rng);
    AnsState s = init_state({});
    push(s, 0, cdf);
    push(s, 1, cdf);
    push(s, 2, cdf);
    EXPECT_EQ(pop(s, cdf), 2u);
    EXPECT_EQ(pop(s, cdf), 1u);
    EXPECT_EQ(pop(s, cdf), 0u);
}

TEST(PushPop, FreshSeededStateDecodesSomeSymbol) {
    QuantizedCdf uniform({kProbScale / 2, kProbScale / 2});
    AnsState s = init_state({0xcafef00du, 0x5555aaaau, 17u, 99u});
    std::size_t sym = pop(s, uniform);
    EXPECT_LT(sym, 2u);
}

TEST(PushPop, InvalidSymbolRejected) {
    QuantizedCdf cdf({kProbScale / 2, kProbScale / 2});
    AnsState s = init_state({});
    EXPECT_THROW(push(s, 2, cdf), CodecError);
}

TEST(PushPop, PopUnderflowIsMessageExhausted) {
    QuantizedCdf rare({1, kProbScale - 1});
    AnsState s = init_state({});
    // head shrinks by ~16 bits per pop of the rare symbol path; with no
    // stack words it must run out.
    EXPECT_THROW(
        {
            for (int i = 0; i < 10; ++i) pop(s, rare);
        },
        CodecError);
}

TEST(PushPop, HeadInvariantHolds) {
    std::mt19937_64 rng(3);
    auto cdf = random_cdf(4, rng);
    AnsState s = init_state({});
    std::uniform_int_distribution<std::size_t> sym(0, 3);
    for (int i = 0; i < 1000; ++i) {
        push(s, sym(rng), cdf);
        EXPECT_GE(s.head, kStateLow);
    }
}

// Property: random interleavings of push/pop stay exactly invertible.
TEST(PushPop, RandomProgramInversion) {
    std::mt19937_64 rng(4);
    std::vector<QuantizedCdf> tables;
    for (int i = 0; i < 4; ++i) tables.push_back(random_cdf(2 + 3 * i, rng));

    AnsState s = init_state({0x11111111u, 0x22222222u});
    std::vector<std::pair<std::size_t, std::size_t>> log;  // (table, symbol)
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_table(0, tables.size() - 1);
    for (int op = 0; op < 1000; ++op) {
        if (log.empty() || coin(rng) < 0.6) {
            std::size_t t = pick_table(rng);
            std::uniform_int_distribution<std::size_t> pick_sym(
                0, tables[t].symbol_count() - 1);
            std::size_t sym = pick_sym(rng);
            push(s, sym, tables[t]);
            log.emplace_back(t, sym);
        } else {
            auto [t, sym] = log.back();
            log.pop_back();
            EXPECT_EQ(pop(s, tables[t]), sym);
        }
    }
    while (!log.empty()) {
        auto [t, sym] = log.back();
        log.pop_back();
        EXPECT_EQ(pop(s, tables[t]), sym);
    }
    EXPECT_TRUE(s == init_state({0x11111111u, 0x22222222u}));
}

TEST(CodeLength, WithinOnePercentOfEntropySum) {
    std::mt19937_64 rng(5);
    auto cdf = random_cdf(11, rng);
    std::vector<double> probs(cdf.symbol_count());
    for (std::size_t i = 0; i < probs.size(); ++i)
        probs[i] = static_cast<double>(cdf.freq(i)) / kProbScale;
    std::discrete_distribution<std::size_t> draw(probs.begin(), probs.end());

    AnsState s = init_state({});
    double expected_bits = 0.0;
    const std::uint64_t before = total_bits(s);
    for (int i = 0; i < 100000; ++i) {
        std::size_t sym = draw(rng);
        expected_bits += symbol_bits(cdf, sym);
        push(s, sym, cdf);
    }
    double actual_bits = static_cast<double>(total_bits(s) - before);
    EXPECT_NEAR(actual_bits / expected_bits, 1.0, 0.01);
}

TEST(CodeLength, NearCertainSymbolIsNearlyFree) {
    QuantizedCdf cdf({1, kProbScale - 1});
    AnsState s = init_state({});
    const std::uint64_t before = total_bits(s);
    for (int i = 0; i < 10000; ++i) push(s, 1, cdf);
    double bits_per_symbol = static_cast<double>(total_bits(s) - before) / 10000.0;
    EXPECT_LT(bits_per_symbol, 0.01);
}

TEST(BernoulliCdf, QuantizationExamples) {
    auto half = bernoulli_cdf(0.5);
    EXPECT_EQ(half.freq(0), 32768u);
    EXPECT_EQ(half.freq(1), 32768u);
    auto zero = bernoulli_cdf(0.0);
    EXPECT_EQ(zero.freq(0), 65535u);
    EXPECT_EQ(zero.freq(1), 1u);
    auto p3 = bernoulli_cdf(0.3);
    EXPECT_EQ(p3.freq(1), 19661u);
}

TEST(NormalCdf, MatchesQuadratureOracle) {
    for (double x = -8.0; x <= 8.0; x += 0.25) {
        double want = static_cast<double>(phi_oracle(static_cast<long double>(x)));
        EXPECT_NEAR(normal_cdf(x), want, 1e-7) << "x=" << x;
    }
}

TEST(NormalQuantile, InvertsCdf) {
    for (double p = 0.0005; p < 1.0; p += 0.0123) {
        EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-10) << "p=" << p;
    }
    EXPECT_THROW(normal_quantile(0.0), NumericError);
    EXPECT_THROW(normal_quantile(1.0), NumericError);
}

TEST(GaussianBuckets, StandardPosteriorEqualsPrior) {
    GaussianBuckets buckets(4);
    auto prior = gaussian_bucket_cdf_prior(buckets);
    auto post = gaussian_bucket_cdf_posterior(0.0, 1.0, buckets);
    ASSERT_EQ(prior.symbol_count(), post.symbol_count());
    for (std::size_t i = 0; i < prior.symbol_count(); ++i) {
        EXPECT_EQ(prior.freq(i), 4096u);
        EXPECT_EQ(post.freq(i), 4096u) << "bucket " << i;
    }
}

TEST(GaussianBuckets, FrequenciesAlwaysSumExactly) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> mu(-5.0, 5.0);
    GaussianBuckets buckets(12);
    for (double sigma : {1e-6, 1e-3, 0.5, 1.0, 7.0, 1e3, 1e6}) {
        for (int i = 0; i < 5; ++i) {
            auto cdf = gaussian_bucket_cdf_posterior(mu(rng), sigma, buckets);
            std::uint64_t sum = 0;
            for (std::size_t s = 0; s < cdf.symbol_count(); ++s) {
                EXPECT_GE(cdf.freq(s), 1u);
                sum += cdf.freq(s);
            }
            EXPECT_EQ(sum, kProbScale);
        }
    }
}

TEST(GaussianBuckets, ArgmaxBucketContainsMean) {
    GaussianBuckets buckets(8);
    // sigma small relative to the local bucket width, so the bucket holding
    // the mean must dominate (wide tail buckets win otherwise)
    auto cdf = gaussian_bucket_cdf_posterior(2.0, 0.05, buckets);
    std::size_t argmax = 0;
    for (std::size_t s = 1; s < cdf.symbol_count(); ++s)
        if (cdf.freq(s) > cdf.freq(argmax)) argmax = s;
    EXPECT_LE(buckets.boundary(argmax), 2.0);
    EXPECT_GT(buckets.boundary(argmax + 1), 2.0);
}

TEST(GaussianBuckets, InvalidSigmaRejected) {
    GaussianBuckets buckets(4);
    EXPECT_THROW(gaussian_bucket_cdf_posterior(0.0, 0.0, buckets), NumericError);
    EXPECT_THROW(gaussian_bucket_cdf_posterior(0.0, -1.0, buckets), NumericError);
}

TEST(FlushRestore, RoundTripIdentity) {
    std::mt19937_64 rng(7);
    auto cdf = random_cdf(6, rng);
    AnsState s = init_state({0xaaaaaaaau, 0xbbbbbbbbu});
    std::uniform_int_distribution<std::size_t> sym(0, 5);
    for (int i = 0; i < 500; ++i) push(s, sym(rng), cdf);
    auto words = flush(s);
    EXPECT_GE(words.size(), 2u);
    EXPECT_TRUE(restore(words) == s);
    EXPECT_EQ(32 * words.size(), total_bits(s) + 0u);
}

TEST(TableCounters, OnlyThreeFamiliesExist) {
    table_counters().reset();
    GaussianBuckets buckets(5);
    gaussian_bucket_cdf_prior(buckets);
    gaussian_bucket_cdf_posterior(0.3, 1.2, buckets);
    bernoulli_cdf(0.25);
    EXPECT_EQ(table_counters().prior, 1u);
    EXPECT_EQ(table_counters().posterior, 1u);
    EXPECT_EQ(table_counters().likelihood, 1u);
    EXPECT_EQ(table_counters().marginal, 0u);
}
