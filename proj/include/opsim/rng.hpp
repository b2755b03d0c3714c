#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace opsim {

/// SplitMix64 stream. Small, fast, and bit-stable across platforms, which the
/// reproducibility contracts depend on (std:: distributions are not portable).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound) {
        // rejection sampling on the top range
        std::uint64_t threshold = (0ULL - bound) % bound;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double unit_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  private:
    std::uint64_t state_;
};

/// FNV-1a over raw bytes, used to derive per-item RNG streams from
/// (experiment seed, identifiers) so results are schedule-independent.
inline std::uint64_t fnv1a64(std::uint64_t hash, const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline std::uint64_t fnv1a64(std::uint64_t hash, std::string_view text) {
    return fnv1a64(hash, text.data(), text.size());
}

constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;

/// Stream seed for one (experiment, profile, question) cell.
inline std::uint64_t derive_stream_seed(std::uint64_t experiment_seed, std::string_view profile_id,
                                        std::string_view question_id) {
    std::uint64_t h = kFnvOffsetBasis;
    h = fnv1a64(h, &experiment_seed, sizeof experiment_seed);
    h = fnv1a64(h, "\x1f");
    h = fnv1a64(h, profile_id);
    h = fnv1a64(h, "\x1f");
    h = fnv1a64(h, question_id);
    return h;
}

/// Seeded Fisher-Yates shuffle.
template <typename T>
void seeded_shuffle(std::vector<T>& items, Rng& rng) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        using std::swap;
        swap(items[i], items[j]);
    }
}

} // namespace opsim
