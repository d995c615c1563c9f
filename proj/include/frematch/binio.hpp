#pragma once

// Framing shared by checkpoint and dataset files: one line of compact JSON
// terminated by '\n', followed by little-endian binary blocks.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

namespace frematch::binio {

void write_header(std::ostream& out, const nlohmann::json& header);
nlohmann::json read_header(std::istream& in);

void write_f64(std::ostream& out, std::span<const double> values);
void write_i32(std::ostream& out, std::span<const std::int32_t> values);
std::vector<double> read_f64(std::istream& in, std::size_t count);
std::vector<std::int32_t> read_i32(std::istream& in, std::size_t count);

}  // namespace frematch::binio
