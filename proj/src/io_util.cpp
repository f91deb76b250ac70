#include "rawnet/io_util.hpp"

#include <array>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

namespace rawnet {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

} // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void BinWriter::u16(uint16_t v) {
    buf.push_back(static_cast<uint8_t>(v));
    buf.push_back(static_cast<uint8_t>(v >> 8));
}

void BinWriter::u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void BinWriter::u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void BinWriter::f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
}

void BinWriter::bytes(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
}

void BinWriter::str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

uint8_t BinReader::u8() {
    if (off + 1 > len) throw FormatError("unexpected end of data");
    return p[off++];
}

uint16_t BinReader::u16() {
    if (off + 2 > len) throw FormatError("unexpected end of data");
    uint16_t v = static_cast<uint16_t>(p[off] | p[off + 1] << 8);
    off += 2;
    return v;
}

uint32_t BinReader::u32() {
    if (off + 4 > len) throw FormatError("unexpected end of data");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
}

uint64_t BinReader::u64() {
    if (off + 8 > len) throw FormatError("unexpected end of data");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
}

float BinReader::f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void BinReader::bytes(void* dst, size_t n) {
    if (off + n > len) throw FormatError("unexpected end of data");
    std::memcpy(dst, p + off, n);
    off += n;
}

std::string BinReader::str() {
    const uint32_t n = u32();
    if (off + n > len) throw FormatError("unexpected end of data");
    std::string s(reinterpret_cast<const char*>(p + off), n);
    off += n;
    return s;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw FormatError("failed reading " + path);
    return bytes;
}

void atomic_write_file(const std::string& path, const std::vector<uint8_t>& data) {
    static std::atomic<uint64_t> counter{0};
    const std::string tmp =
        path + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open " + tmp + " for writing");
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        if (!out) throw FormatError("failed writing " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw FormatError("cannot rename " + tmp + " to " + path + ": " + ec.message());
    }
}

void atomic_write_text(const std::string& path, const std::string& text) {
    std::vector<uint8_t> bytes(text.begin(), text.end());
    atomic_write_file(path, bytes);
}

std::string sanitize_id(const std::string& id) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    out.reserve(id.size());
    for (unsigned char c : id) {
        if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
            c == '.' || c == '_' || c == '-') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        }
    }
    return out;
}

namespace {
constexpr char kEmbMagic[4] = {'R', 'W', 'N', 'E'};
constexpr uint16_t kEmbVersion = 1;
} // namespace

void save_embedding(const std::string& path, const std::string& id,
                    const std::vector<float>& values) {
    BinWriter w;
    w.bytes(kEmbMagic, 4);
    w.u16(kEmbVersion);
    w.str(id);
    w.u32(1); // rank
    w.u64(values.size());
    for (float v : values) w.f32(v);
    w.u32(crc32(w.buf.data(), w.buf.size()));
    atomic_write_file(path, w.buf);
}

std::pair<std::string, std::vector<float>> load_embedding(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    if (bytes.size() < 10) throw FormatError(path + ": too small for an embedding record");
    const uint32_t stored = crc32(bytes.data(), bytes.size() - 4);
    BinReader r(bytes.data(), bytes.size());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kEmbMagic, 4) != 0) throw FormatError(path + ": bad magic");
    if (r.u16() != kEmbVersion) throw FormatError(path + ": unsupported version");
    const std::string id = r.str();
    const uint32_t rank = r.u32();
    if (rank != 1) throw FormatError(path + ": embedding rank must be 1");
    const uint64_t n = r.u64();
    std::vector<float> values(n);
    for (uint64_t i = 0; i < n; ++i) values[i] = r.f32();
    if (r.u32() != stored) throw FormatError(path + ": checksum mismatch");
    return {id, values};
}

} // namespace rawnet
