#ifndef PCBB_ANS_HPP
#define PCBB_ANS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pcbb/errors.hpp"

namespace pcbb::ans {

inline constexpr unsigned kProbBits = 16;
inline constexpr std::uint32_t kProbScale = 1u << kProbBits;
inline constexpr std::uint64_t kStateLow = std::uint64_t{1} << 32;

// Construction counters for the decoder's no-marginal structural check.
// Only three table families exist; nothing ever increments `marginal`.
struct TableCounters {
    std::uint64_t prior = 0;
    std::uint64_t posterior = 0;
    std::uint64_t likelihood = 0;
    std::uint64_t marginal = 0;

    void reset() { *this = TableCounters{}; }
};

inline TableCounters& table_counters() {
    static thread_local TableCounters counters;
    return counters;
}

// Cumulative frequency table over n symbols, total fixed at 2^16,
// every symbol frequency >= 1.
class QuantizedCdf {
public:
    explicit QuantizedCdf(std::vector<std::uint32_t> frequencies) {
        if (frequencies.empty()) throw CodecError("cdf: empty frequency table");
        cum_.resize(frequencies.size() + 1);
        cum_[0] = 0;
        for (std::size_t i = 0; i < frequencies.size(); ++i) {
            if (frequencies[i] == 0) {
                throw CodecError("cdf: zero frequency at symbol " + std::to_string(i));
            }
            cum_[i + 1] = cum_[i] + frequencies[i];
        }
        if (cum_.back() != kProbScale) {
            throw CodecError("cdf: frequencies sum to " + std::to_string(cum_.back()) +
                             ", expected " + std::to_string(kProbScale));
        }
    }

    std::size_t symbol_count() const { return cum_.size() - 1; }
    std::uint32_t freq(std::size_t s) const { return cum_[s + 1] - cum_[s]; }
    std::uint32_t cum(std::size_t s) const { return cum_[s]; }

    std::size_t symbol_of_slot(std::uint32_t slot) const {
        // largest s with cum_[s] <= slot
        auto it = std::upper_bound(cum_.begin(), cum_.end(), slot);
        return static_cast<std::size_t>(it - cum_.begin()) - 1;
    }

private:
    std::vector<std::uint32_t> cum_;
};

// rANS coder state: 64-bit head over a stack of 32-bit words.
// Invariant: head >= 2^32 except for a fresh untouched state's lower bound.
struct AnsState {
    std::uint64_t head = kStateLow;
    std::vector<std::uint32_t> stack;

    bool operator==(const AnsState& other) const {
        return head == other.head && stack == other.stack;
    }
};

// Declared accounting: the head always counts as 64 bits, each stack word 32.
inline std::uint64_t total_bits(const AnsState& s) {
    return 64 + 32 * static_cast<std::uint64_t>(s.stack.size());
}

inline AnsState init_state(const std::vector<std::uint32_t>& seed_words) {
    AnsState s;
    if (seed_words.empty()) return s;
    // Force the top bit of the head so the state invariant holds regardless
    // of the seed values.
    std::uint32_t hi = seed_words[0] | 0x80000000u;
    std::uint32_t lo = seed_words.size() > 1 ? seed_words[1] : 0;
    s.head = (static_cast<std::uint64_t>(hi) << 32) | lo;
    for (std::size_t i = 2; i < seed_words.size(); ++i) s.stack.push_back(seed_words[i]);
    return s;
}

inline void push(AnsState& s, std::size_t symbol, const QuantizedCdf& cdf) {
    if (symbol >= cdf.symbol_count()) {
        throw CodecError("push: symbol " + std::to_string(symbol) + " out of range");
    }
    const std::uint64_t f = cdf.freq(symbol);
    const std::uint64_t c = cdf.cum(symbol);
    const std::uint64_t limit = f << (64 - kProbBits);
    while (s.head >= limit) {
        s.stack.push_back(static_cast<std::uint32_t>(s.head));
        s.head >>= 32;
    }
    s.head = (s.head / f) * kProbScale + (s.head % f) + c;
}

inline std::size_t pop(AnsState& s, const QuantizedCdf& cdf) {
    const std::uint32_t slot = static_cast<std::uint32_t>(s.head & (kProbScale - 1));
    const std::size_t symbol = cdf.symbol_of_slot(slot);
    const std::uint64_t f = cdf.freq(symbol);
    const std::uint64_t c = cdf.cum(symbol);
    s.head = f * (s.head >> kProbBits) + slot - c;
    while (s.head < kStateLow) {
        if (s.stack.empty()) throw CodecError("pop: message exhausted");
        s.head = (s.head << 32) | s.stack.back();
        s.stack.pop_back();
    }
    return symbol;
}

inline std::vector<std::uint32_t> flush(const AnsState& s) {
    std::vector<std::uint32_t> words = s.stack;
    words.push_back(static_cast<std::uint32_t>(s.head));
    words.push_back(static_cast<std::uint32_t>(s.head >> 32));
    return words;
}

inline AnsState restore(const std::vector<std::uint32_t>& words) {
    if (words.size() < 2) throw CodecError("restore: need at least two words");
    AnsState s;
    s.head = (static_cast<std::uint64_t>(words[words.size() - 1]) << 32) |
             words[words.size() - 2];
    s.stack.assign(words.begin(), words.end() - 2);
    return s;
}

// Two-symbol table for P(voxel = 1) = p; p is clamped so both symbols stay
// codable.
inline QuantizedCdf bernoulli_cdf(double p) {
    if (!std::isfinite(p)) throw NumericError("bernoulli_cdf: non-finite probability");
    auto f1 = static_cast<std::uint32_t>(std::lround(p * kProbScale));
    f1 = std::clamp<std::uint32_t>(f1, 1, kProbScale - 1);
    ++table_counters().likelihood;
    return QuantizedCdf({kProbScale - f1, f1});
}

// ---- standard normal CDF and quantile ----

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

// Acklam's rational approximation refined with one Halley step.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw NumericError("normal_quantile: p outside (0,1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p > 1.0 - plow) {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    double e = normal_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

// Equal-prior-mass discretization of the standard normal: bucket i spans
// [Phi^-1(i/n), Phi^-1((i+1)/n)) so the prior puts mass exactly 1/n on each.
class GaussianBuckets {
public:
    explicit GaussianBuckets(unsigned p_bits) : p_bits_(p_bits) {
        if (p_bits < 1 || p_bits > kProbBits) {
            throw InvalidInputError("GaussianBuckets: p_bits must be in [1, 16], got " +
                                    std::to_string(p_bits));
        }
        const std::size_t n = bucket_count();
        boundaries_.resize(n + 1);
        centers_.resize(n);
        boundaries_[0] = -std::numeric_limits<double>::infinity();
        boundaries_[n] = std::numeric_limits<double>::infinity();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 1; i < n; ++i)
            boundaries_[i] = normal_quantile(static_cast<double>(i) * inv_n);
        for (std::size_t i = 0; i < n; ++i)
            centers_[i] = normal_quantile((static_cast<double>(i) + 0.5) * inv_n);
    }

    unsigned p_bits() const { return p_bits_; }
    std::size_t bucket_count() const { return std::size_t{1} << p_bits_; }
    double boundary(std::size_t i) const { return boundaries_[i]; }
    double center(std::size_t i) const { return centers_[i]; }

private:
    unsigned p_bits_;
    std::vector<double> boundaries_;
    std::vector<double> centers_;
};

inline QuantizedCdf gaussian_bucket_cdf_prior(const GaussianBuckets& buckets) {
    const std::size_t n = buckets.bucket_count();
    ++table_counters().prior;
    return QuantizedCdf(std::vector<std::uint32_t>(n, kProbScale / static_cast<std::uint32_t>(n)));
}

// Posterior bucket masses Phi((b_{i+1}-mu)/sigma) - Phi((b_i-mu)/sigma),
// quantized to total 2^16 by largest-remainder rounding (ties to the lowest
// index), with a floor of 1 per bucket.
inline QuantizedCdf gaussian_bucket_cdf_posterior(double mu, double sigma,
                                                  const GaussianBuckets& buckets) {
    if (!std::isfinite(mu) || !std::isfinite(sigma) || sigma <= 0.0) {
        throw NumericError("gaussian_bucket_cdf_posterior: invalid mu/sigma");
    }
    const std::size_t n = buckets.bucket_count();
    std::vector<double> mass(n);
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double next = (i + 1 == n) ? 1.0 : normal_cdf((buckets.boundary(i + 1) - mu) / sigma);
        mass[i] = std::max(0.0, next - prev);
        prev = next;
    }
    const auto budget = static_cast<std::uint32_t>(kProbScale - n);
    std::vector<std::uint32_t> freq(n, 1);
    std::vector<double> remainder(n);
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double exact = mass[i] * static_cast<double>(budget);
        auto base = static_cast<std::uint32_t>(std::floor(exact));
        freq[i] += base;
        remainder[i] = exact - static_cast<double>(base);
        assigned += base;
    }
    std::uint64_t leftover = budget - assigned;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        return a < b;
    });
    for (std::uint64_t i = 0; i < leftover; ++i) ++freq[order[i % n]];
    ++table_counters().posterior;
    return QuantizedCdf(std::move(freq));
}

// Information content of a symbol under a quantized table, in bits.
inline double symbol_bits(const QuantizedCdf& cdf, std::size_t symbol) {
    return kProbBits - std::log2(static_cast<double>(cdf.freq(symbol)));
}

}  // namespace pcbb::ans

#endif  // PCBB_ANS_HPP
