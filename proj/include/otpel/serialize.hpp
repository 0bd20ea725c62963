#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace otpel::bin {

static_assert(std::endian::native == std::endian::little,
              "file containers are defined little-endian");

// CRC-64/XZ over a byte range.
uint64_t crc64(std::span<const unsigned char> data);

class Writer {
public:
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64_span(std::span<const double> v) { raw(v.data(), v.size() * sizeof(double)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::vector<unsigned char>& bytes() const { return buf_; }

private:
    void raw(const void* p, size_t n) {
        size_t at = buf_.size();
        buf_.resize(at + n);
        std::memcpy(buf_.data() + at, p, n);
    }
    std::vector<unsigned char> buf_;
};

// Reads throw Err::file_truncated on overrun.
class Reader {
public:
    explicit Reader(std::span<const unsigned char> data) : data_(data) {}
    uint32_t u32();
    uint64_t u64();
    double f64();
    void f64_span(std::span<double> out);
    std::string str();
    bool at_end() const { return pos_ == data_.size(); }

private:
    void raw(void* p, size_t n);
    std::span<const unsigned char> data_;
    size_t pos_ = 0;
};

// Layout: 6-byte magic | payload | crc64(payload). Writes go to a temp file
// renamed into place, so a crash never leaves a partial artifact.
void write_container(const std::filesystem::path& path, const char magic[6],
                     std::span<const unsigned char> payload);

// Verifies magic and checksum; corruption anywhere reports Err::file_truncated.
std::vector<unsigned char> read_container(const std::filesystem::path& path,
                                          const char magic[6]);

} // namespace otpel::bin
