#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fhc {

// shortest round-trip decimal (17 significant digits) so artifacts are
// bit-reproducible across runs
std::string format_g17(double x);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// split a CSV line; no quoting, fields are numbers or plain labels
std::vector<std::string> split_csv_line(const std::string& line);

std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t v);

} // namespace fhc
