#include "distill/digest.hpp"

#include <array>

#include <openssl/evp.h>

#include "distill/error.hpp"

namespace distill {

namespace {

std::array<unsigned char, 32> sha256_raw(std::string_view bytes) {
    std::array<unsigned char, 32> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != md.size()) {
        fail(Errc::InvalidArgument, "SHA-256 digest failed");
    }
    return md;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    auto md = sha256_raw(bytes);
    std::string out;
    out.reserve(64);
    for (unsigned char b : md) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0x0F]);
    }
    return out;
}

std::string short_digest(std::string_view bytes, std::size_t hex_chars) {
    return sha256_hex(bytes).substr(0, hex_chars);
}

std::uint64_t digest_u64(std::string_view bytes) {
    auto md = sha256_raw(bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | md[static_cast<std::size_t>(i)];
    return v;
}

}  // namespace distill
