#include "detail/container.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace hq::detail {

static_assert(std::endian::native == std::endian::little, "HQTM I/O assumes a little-endian host");

namespace {

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    std::size_t at = 0;
    while (at < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - at, 1u << 30));
        crc = crc32(crc, bytes.data() + at, chunk);
        at += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void write_container(const std::filesystem::path& path, const char (&magic)[5],
                     std::uint32_t version, const nlohmann::json& header,
                     std::span<const std::uint8_t> payload) {
    const std::string header_text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(16 + header_text.size() + payload.size());
    out.insert(out.end(), magic, magic + 4);
    append_u32(out, version);
    append_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out.insert(out.end(), header_text.begin(), header_text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    append_u32(out, crc32_of(payload));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) fail(ErrorCode::IoError, "write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path, const char (&magic)[5]) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::FileNotFound, path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                          std::istreambuf_iterator<char>());
    if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0) {
        fail(ErrorCode::BadMagic, path.string() + " is not a " + std::string(magic) + " file");
    }
    if (bytes.size() < 12) fail(ErrorCode::TruncatedFile, "missing header length");
    Container c;
    c.version = read_u32(bytes, 4);
    const std::size_t header_len = read_u32(bytes, 8);
    if (bytes.size() < 12 + header_len) fail(ErrorCode::TruncatedFile, "header cut short");
    try {
        c.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::HeaderMismatch, std::string("unparseable header: ") + e.what());
    }
    const std::size_t payload_bytes = c.header.value("payload_bytes", std::size_t{0});
    const std::size_t expect = 12 + header_len + payload_bytes + 4;
    if (bytes.size() < expect) fail(ErrorCode::TruncatedFile, "payload cut short");
    if (bytes.size() > expect) fail(ErrorCode::HeaderMismatch, "trailing bytes after checksum");
    c.payload.assign(bytes.begin() + 12 + header_len, bytes.begin() + 12 + header_len + payload_bytes);
    const std::uint32_t stored = read_u32(bytes, 12 + header_len + payload_bytes);
    if (stored != crc32_of(c.payload)) fail(ErrorCode::ChecksumMismatch, path.string());
    return c;
}

std::size_t PayloadWriter::put_f32(std::span<const double> values) {
    const std::size_t at = buf_.size();
    buf_.resize(at + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float v = static_cast<float>(values[i]);
        std::memcpy(buf_.data() + at + 4 * i, &v, 4);
    }
    return at;
}

std::size_t PayloadWriter::put_f64(std::span<const double> values) {
    const std::size_t at = buf_.size();
    buf_.resize(at + values.size() * 8);
    if (!values.empty()) std::memcpy(buf_.data() + at, values.data(), values.size() * 8);
    return at;
}

std::size_t PayloadWriter::put_bytes(std::span<const std::uint8_t> bytes) {
    const std::size_t at = buf_.size();
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
    return at;
}

void PayloadReader::check(std::size_t offset, std::size_t len) const {
    if (offset > payload_.size() || len > payload_.size() - offset) {
        fail(ErrorCode::TruncatedFile, "tensor extends past payload");
    }
}

std::vector<double> PayloadReader::f32(std::size_t offset, std::size_t count) const {
    check(offset, count * 4);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        float v;
        std::memcpy(&v, payload_.data() + offset + 4 * i, 4);
        out[i] = v;
    }
    return out;
}

std::vector<double> PayloadReader::f64(std::size_t offset, std::size_t count) const {
    check(offset, count * 8);
    std::vector<double> out(count);
    if (count) std::memcpy(out.data(), payload_.data() + offset, count * 8);
    return out;
}

std::span<const std::uint8_t> PayloadReader::bytes(std::size_t offset, std::size_t count) const {
    check(offset, count);
    return payload_.subspan(offset, count);
}

nlohmann::json put_matrix_f32(PayloadWriter& w, const std::string& name, const Matrix& m) {
    const std::size_t at = w.put_f32(m.values());
    return {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", at}, {"dtype", "f32"}};
}

nlohmann::json put_vector_f32(PayloadWriter& w, const std::string& name,
                              std::span<const double> v) {
    const std::size_t at = w.put_f32(v);
    return {{"name", name}, {"shape", {v.size()}}, {"offset", at}, {"dtype", "f32"}};
}

Matrix get_matrix_f32(const PayloadReader& r, const nlohmann::json& entry, std::size_t rows,
                      std::size_t cols) {
    const auto& shape = entry.at("shape");
    if (shape.size() != 2 || shape[0].get<std::size_t>() != rows ||
        shape[1].get<std::size_t>() != cols) {
        fail(ErrorCode::HeaderMismatch, "tensor " + entry.value("name", std::string("?")) +
                                            " shape disagrees with header dims");
    }
    try {
        return Matrix(rows, cols, r.f32(entry.at("offset").get<std::size_t>(), rows * cols));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFinite) fail(ErrorCode::HeaderMismatch, e.what());
        throw;
    }
}

std::vector<double> get_vector_f32(const PayloadReader& r, const nlohmann::json& entry,
                                   std::size_t len) {
    const auto& shape = entry.at("shape");
    if (shape.size() != 1 || shape[0].get<std::size_t>() != len) {
        fail(ErrorCode::HeaderMismatch, "vector " + entry.value("name", std::string("?")) +
                                            " length disagrees with header dims");
    }
    return r.f32(entry.at("offset").get<std::size_t>(), len);
}

const nlohmann::json& find_tensor(const nlohmann::json& directory, const std::string& name) {
    for (const auto& e : directory) {
        if (e.at("name").get<std::string>() == name) return e;
    }
    fail(ErrorCode::HeaderMismatch, "tensor directory lacks " + name);
}

}  // namespace hq::detail
