#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mixplane {

using DatasetId = std::uint32_t;
using FileId = std::uint32_t;
using SampleId = std::uint64_t;

// Half-open run of sample ids [start, end) inside one file.
struct Interval {
    SampleId start = 0;
    SampleId end = 0;

    SampleId size() const { return end - start; }
    auto operator<=>(const Interval&) const = default;
};

// Base of every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class QueryError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

//------------------------------------------------------------------------------
// Hashing

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= kFnvPrime;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b));
}

//------------------------------------------------------------------------------
// Rng
//
// The standard distributions are implementation-defined, so every draw that
// feeds a chunk or an iteration order goes through this generator instead.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t bound) {
        if (bound <= 1) {
            return 0;
        }
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % bound;
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

//------------------------------------------------------------------------------
// Largest remainders

// Integer apportionment of `total` units over `proportions`. Floors first,
// then one extra unit per entry in order of descending fractional remainder.
// Equal remainders go to the lower index, so callers pass entries already in
// their canonical order.
inline std::vector<std::uint64_t> largest_remainders(std::span<const double> proportions,
                                                     std::uint64_t total) {
    const std::size_t n = proportions.size();
    std::vector<std::uint64_t> counts(n, 0);
    if (n == 0) {
        return counts;
    }
    double sum = 0.0;
    for (double p : proportions) {
        sum += p;
    }
    if (!(sum > 0.0)) {
        throw Error("largest_remainders: proportions must have a positive sum");
    }
    std::vector<std::pair<double, std::size_t>> remainders;
    remainders.reserve(n);
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double quota = proportions[i] / sum * static_cast<double>(total);
        const double whole = std::floor(quota);
        counts[i] = static_cast<std::uint64_t>(whole);
        assigned += counts[i];
        remainders.emplace_back(quota - whole, i);
    }
    // Rounding in the quotas can leave the floors a unit above the total.
    while (assigned > total) {
        std::size_t victim = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (counts[i] > 0 && (victim == n || remainders[i].first < remainders[victim].first)) {
                victim = i;
            }
        }
        --counts[victim];
        --assigned;
    }
    // Quantized so that remainders equal up to rounding tie and the
    // lower index wins.
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        return std::llround(a.first * 1e9) > std::llround(b.first * 1e9);
    });
    for (std::size_t k = 0; assigned < total; k = (k + 1) % n) {
        ++counts[remainders[k].second];
        ++assigned;
    }
    return counts;
}

}  // namespace mixplane
