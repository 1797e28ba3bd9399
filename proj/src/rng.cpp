#include "distill/rng.hpp"

#include <limits>
#include <numeric>
#include <string>

#include "distill/digest.hpp"
#include "distill/error.hpp"

namespace distill {

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    std::string material = std::to_string(root);
    material += ':';
    material += label;
    return digest_u64(material);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) fail(Errc::InvalidArgument, "Rng::below bound must be positive");
    // Rejection sampling keeps the draw unbiased and identical on every platform.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) fail(Errc::InvalidArgument, "cannot sample more items than available");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace distill
