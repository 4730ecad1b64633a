#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xmd {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data (dataset records, checkpoint manifests, config syntax).
class ParseError : public Error {
public:
    using Error::Error;
};

/// A referenced resource (image file, checkpoint) could not be read.
class LoadError : public Error {
public:
    using Error::Error;
};

/// A precondition on arguments was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// 64-bit FNV-1a, used for content hashes of parameters, configs and datasets.
class Fnv1a {
public:
    void update(const void* data, std::size_t size) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    template <typename T>
    void update_pod(const T& value) { update(&value, sizeof(T)); }

    [[nodiscard]] std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_string(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.digest();
}

std::string to_hex(std::uint64_t value);

/// Derives an independent stream seed from a base seed and a salt (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) {
    return mix_seed(seed, hash_string(salt));
}

}  // namespace xmd
