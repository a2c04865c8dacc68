#include "opnet/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "opnet/errors.hpp"

namespace opnet {

namespace {

static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void write_opt1(std::ostream& os, const Tensor& t) {
    os.write(kOpt1Magic, 4);
    os.put(static_cast<char>(kOpt1DtypeF64));
    os.put(4);
    for (std::size_t e : t.shape().extents()) put_u64(os, e);
    for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw IoError("failed writing tensor payload");
}

Tensor read_opt1(std::istream& is, const std::string& source) {
    std::array<unsigned char, kOpt1HeaderBytes> header{};
    is.read(reinterpret_cast<char*>(header.data()), header.size());
    const auto got = static_cast<std::size_t>(is.gcount());
    if (got < 4 || std::memcmp(header.data(), kOpt1Magic, 4) != 0) {
        throw FormatError(source + ": bad magic, expected OPT1");
    }
    if (got < header.size()) {
        throw LengthError(source + ": truncated header, expected " +
                          std::to_string(header.size()) + " bytes, got " + std::to_string(got));
    }
    if (header[4] != kOpt1DtypeF64) {
        throw FormatError(source + ": unsupported dtype code " + std::to_string(header[4]));
    }
    if (header[5] != 4) {
        throw FormatError(source + ": unsupported rank " + std::to_string(header[5]));
    }
    Shape shape{get_u64(&header[6]), get_u64(&header[14]), get_u64(&header[22]),
                get_u64(&header[30])};

    const std::size_t count = shape.numel();
    const std::size_t expected = count * 8;
    const auto here = is.tellg();
    if (here != std::streampos(-1)) {
        is.seekg(0, std::ios::end);
        const auto remaining = static_cast<std::size_t>(is.tellg() - here);
        is.seekg(here);
        if (remaining < expected) {
            throw LengthError(source + ": payload expected " + std::to_string(expected) +
                              " bytes, got " + std::to_string(remaining));
        }
    }
    std::vector<unsigned char> payload(expected);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(expected));
    const auto actual = static_cast<std::size_t>(is.gcount());
    if (actual != expected) {
        throw LengthError(source + ": payload expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(actual));
    }
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<double>(get_u64(&payload[8 * i]));
    }
    return Tensor(shape, std::move(data));
}

void write_opt1(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_opt1(os, t);
}

Tensor read_opt1(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_opt1(is, path.string());
}

}  // namespace opnet
