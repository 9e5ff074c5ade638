#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace delta {

/*======================================================================================================================
 * Errors
 *====================================================================================================================*/

/// Base of every error thrown by the library. `category()` is what the CLI prints and maps to an exit code.
class Error : public std::runtime_error
{
    public:
    using std::runtime_error::runtime_error;
    virtual const char * category() const noexcept { return "error"; }
};

/// A value object was constructed or used in a state that breaks one of its invariants.
class InvariantViolation : public Error
{
    public:
    using Error::Error;
    const char * category() const noexcept override { return "invariant"; }
};

/// An argument is outside the accepted domain (bad range, width mismatch, nonpositive variance, ...).
class InvalidArgument : public Error
{
    public:
    using Error::Error;
    const char * category() const noexcept override { return "argument"; }
};

/// A brute-force or DP routine was asked for a problem larger than its configured bound.
class BoundExceeded : public Error
{
    public:
    using Error::Error;
    const char * category() const noexcept override { return "bound"; }
};

/// A file did not match its schema. `line()` is 1-based, 0 when not line oriented.
class SchemaError : public Error
{
    public:
    SchemaError(const std::string & what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line)
    { }
    std::size_t line() const noexcept { return line_; }
    const char * category() const noexcept override { return "schema"; }

    private:
    std::size_t line_;
};

/// Training diverged (non-finite loss) or could not start.
class TrainingError : public Error
{
    public:
    using Error::Error;
    const char * category() const noexcept override { return "training"; }
};

/// Missing or unreadable file, or a checkpoint that does not fit the caller.
class IoError : public Error
{
    public:
    using Error::Error;
    const char * category() const noexcept override { return "io"; }
};

/*======================================================================================================================
 * Relation sets
 *====================================================================================================================*/

using TableId = std::uint32_t;

/// Bitset over dense table ids; the catalog is limited to 64 tables.
using RelSet = std::uint64_t;

inline constexpr std::size_t kMaxTables = 64;

constexpr RelSet singleton(TableId t) { return RelSet{1} << t; }
constexpr bool contains(RelSet s, TableId t) { return (s >> t) & 1U; }
constexpr int cardinality_of(RelSet s) { return std::popcount(s); }
constexpr bool disjoint(RelSet a, RelSet b) { return (a & b) == 0; }
constexpr TableId lowest(RelSet s) { return static_cast<TableId>(std::countr_zero(s)); }

/*======================================================================================================================
 * Seeding
 *====================================================================================================================*/

constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a over the bytes, finalized with splitmix64. Stable across runs and platforms.
constexpr std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0)
{
    std::uint64_t h = 0xCBF29CE484222325ULL ^ splitmix64(seed);
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return splitmix64(h);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ (splitmix64(b) + 0x632BE59BD9B4E019ULL)); }

/// Minimal UniformRandomBitGenerator over splitmix64; cheap to construct, so draws can be keyed by content.
class SplitMix64
{
    public:
    using result_type = std::uint64_t;
    explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) { }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    constexpr result_type operator()()
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        return splitmix64(state_);
    }

    private:
    std::uint64_t state_;
};

/// Derives an independent component seed from a root seed and a fixed label.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label) { return stable_hash(label, root); }

}
