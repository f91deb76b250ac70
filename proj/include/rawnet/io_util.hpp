#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rawnet/error.hpp"

namespace rawnet {

// CRC-32 (IEEE, reflected polynomial 0xEDB88320), as used by zip/zlib.
uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

// Little-endian binary writer over a growable buffer.
struct BinWriter {
    std::vector<uint8_t> buf;

    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f32(float v);
    void bytes(const void* p, size_t n);
    void str(const std::string& s); // u32 length prefix + raw bytes
};

// Bounds-checked little-endian reader; running past the end raises
// FormatError.
struct BinReader {
    const uint8_t* p;
    size_t len;
    size_t off = 0;

    BinReader(const uint8_t* data, size_t n) : p(data), len(n) {}

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    float f32();
    void bytes(void* dst, size_t n);
    std::string str();
    size_t remaining() const { return len - off; }
};

std::vector<uint8_t> read_file_bytes(const std::string& path);

// Write-temp-then-rename so interrupted runs never leave partial files.
void atomic_write_file(const std::string& path, const std::vector<uint8_t>& data);
void atomic_write_text(const std::string& path, const std::string& text);

// Percent-encode everything outside [A-Za-z0-9._-]; collision-free and
// reversible, used to derive filenames from utterance ids.
std::string sanitize_id(const std::string& id);

// One named float vector per file ("RWNE" container, same tensor record
// layout as model weight files).
void save_embedding(const std::string& path, const std::string& id,
                    const std::vector<float>& values);
// Returns (id, values).
std::pair<std::string, std::vector<float>> load_embedding(const std::string& path);

} // namespace rawnet
