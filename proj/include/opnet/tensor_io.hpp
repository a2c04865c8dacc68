#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "opnet/tensor.hpp"

namespace opnet {

/// OPT1 layout: magic "OPT1", u8 dtype (1 = f64), u8 rank (4), four u64
/// little-endian extents, then the row-major little-endian f64 payload.
inline constexpr char kOpt1Magic[4] = {'O', 'P', 'T', '1'};
inline constexpr std::uint8_t kOpt1DtypeF64 = 1;
inline constexpr std::size_t kOpt1HeaderBytes = 4 + 1 + 1 + 4 * 8;

void write_opt1(std::ostream& os, const Tensor& t);
/// Throws FormatError on a bad header and LengthError on a short payload.
Tensor read_opt1(std::istream& is, const std::string& source = "<stream>");

void write_opt1(const std::filesystem::path& path, const Tensor& t);
Tensor read_opt1(const std::filesystem::path& path);

}  // namespace opnet
