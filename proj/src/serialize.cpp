#include "otpel/serialize.hpp"

#include "otpel/error.hpp"

#include <array>
#include <cstdio>
#include <fstream>

namespace otpel::bin {

namespace {

std::array<uint64_t, 256> make_crc_table() {
    std::array<uint64_t, 256> table{};
    constexpr uint64_t poly = 0xC96C5795D7870F42ULL; // CRC-64/XZ, reflected
    for (uint64_t i = 0; i < 256; ++i) {
        uint64_t c = i;
        for (int b = 0; b < 8; ++b) c = (c & 1) ? (c >> 1) ^ poly : c >> 1;
        table[i] = c;
    }
    return table;
}

} // namespace

uint64_t crc64(std::span<const unsigned char> data) {
    static const std::array<uint64_t, 256> table = make_crc_table();
    uint64_t crc = ~0ULL;
    for (unsigned char byte : data) crc = table[(crc ^ byte) & 0xff] ^ (crc >> 8);
    return ~crc;
}

uint32_t Reader::u32() {
    uint32_t v;
    raw(&v, sizeof v);
    return v;
}

uint64_t Reader::u64() {
    uint64_t v;
    raw(&v, sizeof v);
    return v;
}

double Reader::f64() {
    double v;
    raw(&v, sizeof v);
    return v;
}

void Reader::f64_span(std::span<double> out) { raw(out.data(), out.size() * sizeof(double)); }

std::string Reader::str() {
    uint32_t n = u32();
    if (n > data_.size() - pos_) fail(Err::file_truncated, "string runs past end of file");
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

void Reader::raw(void* p, size_t n) {
    if (n > data_.size() - pos_) fail(Err::file_truncated, "read past end of file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
}

void write_container(const std::filesystem::path& path, const char magic[6],
                     std::span<const unsigned char> payload) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Err::io, "cannot open " + tmp.string() + " for writing");
        out.write(magic, 6);
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
        uint64_t crc = crc64(payload);
        out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
        if (!out) fail(Err::io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(Err::io, "rename to " + path.string() + " failed: " + ec.message());
}

std::vector<unsigned char> read_container(const std::filesystem::path& path,
                                          const char magic[6]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Err::missing_artifact, "cannot open " + path.string());
    std::vector<unsigned char> all((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (all.size() < 6 + 8) fail(Err::file_truncated, path.string() + ": file too short");
    if (std::memcmp(all.data(), magic, 6) != 0)
        fail(Err::file_magic, path.string() + ": wrong magic (expected " +
                                  std::string(magic, 6) + ")");
    std::span<const unsigned char> payload(all.data() + 6, all.size() - 6 - 8);
    uint64_t stored;
    std::memcpy(&stored, all.data() + all.size() - 8, 8);
    if (crc64(payload) != stored)
        fail(Err::file_truncated, path.string() + ": checksum mismatch (truncated or corrupt)");
    return {payload.begin(), payload.end()};
}

} // namespace otpel::bin
