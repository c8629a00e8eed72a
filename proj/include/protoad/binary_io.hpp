#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protoad/error.hpp"

namespace protoad::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

/// Append-only little-endian byte sink.
class Writer {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void u32(std::uint32_t v) {
        const auto at = buf_.size();
        buf_.resize(at + 4);
        std::memcpy(buf_.data() + at, &v, 4);
    }

    void f32(std::span<const float> v) {
        const auto at = buf_.size();
        buf_.resize(at + v.size_bytes());
        if (!v.empty()) std::memcpy(buf_.data() + at, v.data(), v.size_bytes());
    }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian cursor over a byte buffer. Running past the
/// end raises TruncationError carrying the offset of the short read.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::string_view bytes(std::size_t n, std::string_view what) {
        need(n, what);
        std::string_view s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32(std::string_view what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, data_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    void f32(std::span<float> out, std::string_view what) {
        need(out.size_bytes(), what);
        if (!out.empty()) std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n, std::string_view what) const {
        if (data_.size() - pos_ < n)
            throw TruncationError("truncated " + std::string(what) + ": need " + std::to_string(n) +
                                      " bytes, have " + std::to_string(data_.size() - pos_),
                                  pos_);
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace protoad::io
