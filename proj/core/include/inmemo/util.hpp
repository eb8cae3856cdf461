#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace inmemo {

/// Splits a root seed into an independent component seed keyed by a fixed
/// label, so every component's randomness stays stable when others change.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers write into
/// per-index slots and reduce in index order, which keeps results independent
/// of the worker count.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Worker count used when the caller passes 0.
int default_workers();

/// Hex SHA-256 of a byte span.
std::string sha256_hex(std::span<const std::byte> bytes);

template <typename T>
std::string sha256_hex_of(std::span<const T> values) {
  return sha256_hex(std::as_bytes(values));
}

}  // namespace inmemo
