// Copyright 2026 The rankshrink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RANKSHRINK_UTIL_HPP
#define RANKSHRINK_UTIL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankshrink::util {

std::string base64_encode(std::string_view bytes);
/// Throws InvalidInput on malformed input.
std::string base64_decode(std::string_view text);

/// Little-endian packing, independent of host byte order.
void append_f64_le(std::string& out, double value);
void append_i32_le(std::string& out, std::int32_t value);
double read_f64_le(std::string_view bytes, std::size_t offset);
std::int32_t read_i32_le(std::string_view bytes, std::size_t offset);

std::string pack_f64(std::span<const double> values);
std::vector<double> unpack_f64(std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Value of RANKSHRINK_SEED, if set and numeric.
std::optional<std::uint64_t> seed_from_env();

}  // namespace rankshrink::util

#endif  // RANKSHRINK_UTIL_HPP
