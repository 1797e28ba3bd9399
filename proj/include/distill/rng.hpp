#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace distill {

/// Seed of a named sub-stream. Sub-streams are addressed by stable labels so that
/// scheduling order never changes what a consumer draws.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// Platform-independent RNG: mt19937_64 plus our own bounded draws (the standard
/// distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t root, std::string_view label) : engine_(derive_seed(root, label)) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    /// k distinct indices from [0, n) in draw order (partial Fisher-Yates). Requires k <= n.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    std::vector<T> sample(const std::vector<T>& items, std::size_t k) {
        std::vector<T> out;
        out.reserve(k);
        for (std::size_t idx : sample_indices(items.size(), k)) out.push_back(items[idx]);
        return out;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace distill
