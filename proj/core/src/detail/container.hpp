#pragma once

// Framing shared by HQTM model files and HQTM-Q hybrid files:
//   magic[4] | u32 version | u32 header_len | header JSON | payload | u32 crc32(payload)
// All integers little-endian.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hq/error.hpp"
#include "hq/numerics.hpp"

namespace hq::detail {

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

struct Container {
    std::uint32_t version = 0;
    nlohmann::json header;
    std::vector<std::uint8_t> payload;
};

void write_container(const std::filesystem::path& path, const char (&magic)[5],
                     std::uint32_t version, const nlohmann::json& header,
                     std::span<const std::uint8_t> payload);
Container read_container(const std::filesystem::path& path, const char (&magic)[5]);

class PayloadWriter {
public:
    /// Appends values narrowed to real32; returns the byte offset.
    std::size_t put_f32(std::span<const double> values);
    std::size_t put_f64(std::span<const double> values);
    std::size_t put_bytes(std::span<const std::uint8_t> bytes);

    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class PayloadReader {
public:
    explicit PayloadReader(std::span<const std::uint8_t> payload) : payload_(payload) {}

    std::vector<double> f32(std::size_t offset, std::size_t count) const;
    std::vector<double> f64(std::size_t offset, std::size_t count) const;
    std::span<const std::uint8_t> bytes(std::size_t offset, std::size_t count) const;

private:
    void check(std::size_t offset, std::size_t len) const;
    std::span<const std::uint8_t> payload_;
};

/// Writes a matrix into the payload and returns its directory entry.
nlohmann::json put_matrix_f32(PayloadWriter& w, const std::string& name, const Matrix& m);
nlohmann::json put_vector_f32(PayloadWriter& w, const std::string& name,
                              std::span<const double> v);
Matrix get_matrix_f32(const PayloadReader& r, const nlohmann::json& entry, std::size_t rows,
                      std::size_t cols);
std::vector<double> get_vector_f32(const PayloadReader& r, const nlohmann::json& entry,
                                   std::size_t len);

/// Locates a directory entry by name; HeaderMismatch when missing.
const nlohmann::json& find_tensor(const nlohmann::json& directory, const std::string& name);

}  // namespace hq::detail
