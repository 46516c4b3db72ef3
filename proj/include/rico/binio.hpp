#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace rico {

// Little-endian byte-buffer writer for the binary file formats.
struct ByteWriter {
    std::vector<uint8_t> bytes;

    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u8(uint8_t v) { bytes.push_back(v); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes.push_back(uint8_t(v >> (8 * i)));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(uint8_t(v >> (8 * i)));
    }
    void i64(int64_t v) { u64(uint64_t(v)); }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void str(const std::string& s) { raw(s.data(), s.size()); }
};

// Bounds-checked little-endian reader; any overrun reports a truncated file.
struct ByteReader {
    const uint8_t* p = nullptr;
    size_t n = 0;
    size_t pos = 0;
    std::string what;

    ByteReader(const uint8_t* data, size_t size, std::string context)
        : p(data), n(size), what(std::move(context)) {}

    void need(size_t k) const {
        if (pos + k > n)
            throw format_error(format_issue::truncated,
                               what + ": truncated at byte " + std::to_string(pos));
    }
    void raw(void* out, size_t k) {
        need(k);
        std::memcpy(out, p + pos, k);
        pos += k;
    }
    uint8_t u8() {
        need(1);
        return p[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= uint16_t(p[pos + i]) << (8 * i);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    int64_t i64() { return int64_t(u64()); }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + pos), k);
        pos += k;
        return s;
    }
};

inline void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw format_error(format_issue::malformed, "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw format_error(format_issue::malformed, "write failed: " + path.string());
}

inline std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw format_error(format_issue::malformed, "cannot open: " + path.string());
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size), 0);
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw format_error(format_issue::malformed, "read failed: " + path.string());
    return bytes;
}

} // namespace rico
