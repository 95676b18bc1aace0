#pragma once

// Little-endian framing helpers shared by the FLNS / FLPP / FLNM codecs.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "faclens/error.hpp"

namespace faclens::detail {

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        written_ += n;
    }

    template <typename T>
    void uint(T value) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
        }
        bytes(buf, sizeof(T));
    }

    void u8(std::uint8_t v) { uint(v); }
    void u16(std::uint16_t v) { uint(v); }
    void u32(std::uint32_t v) { uint(v); }
    void u64(std::uint64_t v) { uint(v); }
    void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
    void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    std::size_t written() const noexcept { return written_; }

    void finish() {
        out_.flush();
        if (!out_) throw Error("write failed");
    }

private:
    std::ostream& out_;
    std::size_t written_ = 0;
};

class Reader {
public:
    Reader(std::istream& in, const char* what) : in_(in), what_(what) {}

    void bytes(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError(FormatErrc::truncated,
                              std::string(what_) + " ended after " +
                                  std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())) +
                                  " bytes");
        }
        offset_ += n;
    }

    template <typename T>
    T uint() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return static_cast<T>(v);
    }

    std::uint8_t u8() { return uint<std::uint8_t>(); }
    std::uint16_t u16() { return uint<std::uint16_t>(); }
    std::uint32_t u32() { return uint<std::uint32_t>(); }
    std::uint64_t u64() { return uint<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(uint<std::uint32_t>()); }
    float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

    std::string str(std::uint32_t max_len = 1u << 20) {
        const std::uint32_t n = u32();
        if (n > max_len) {
            throw FormatError(FormatErrc::invalid_header,
                              std::string(what_) + ": string length " + std::to_string(n) +
                                  " exceeds limit at offset " + std::to_string(offset_));
        }
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

    void expect_magic(const char (&magic)[4]) {
        char got[4];
        bytes(got, 4);
        for (int i = 0; i < 4; ++i) {
            if (got[i] != magic[i]) {
                throw FormatError(FormatErrc::bad_magic,
                                  std::string(what_) + ": expected magic " + std::string(magic, 4));
            }
        }
    }

    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            throw FormatError(FormatErrc::trailing_data,
                              std::string(what_) + ": unexpected bytes after offset " +
                                  std::to_string(offset_));
        }
    }

    std::size_t offset() const noexcept { return offset_; }

private:
    std::istream& in_;
    const char* what_;
    std::size_t offset_ = 0;
};

}  // namespace faclens::detail
