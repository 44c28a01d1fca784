// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VTN_HASH_HPP_
#define VTN_HASH_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace vtn {

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t v);

// SplitMix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace vtn

#endif  // VTN_HASH_HPP_
