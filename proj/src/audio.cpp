#include "rawnet/audio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "rawnet/io_util.hpp"

namespace rawnet {

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t rd_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | p[1] << 8);
}

} // namespace

Waveform read_wav(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError(path + ": not a RIFF/WAVE file");

    bool have_fmt = false;
    uint16_t audio_format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data_ptr = nullptr;
    size_t data_len = 0;

    size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + off);
        const uint32_t sz = rd_u32(bytes.data() + off + 4);
        off += 8;
        if (off + sz > bytes.size()) throw FormatError(path + ": truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) throw FormatError(path + ": fmt chunk too small");
            audio_format = rd_u16(bytes.data() + off);
            channels = rd_u16(bytes.data() + off + 2);
            rate = rd_u32(bytes.data() + off + 4);
            bits = rd_u16(bytes.data() + off + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_ptr = bytes.data() + off;
            data_len = sz;
        }
        off += sz + (sz & 1); // chunks are word-aligned
    }

    if (!have_fmt || !data_ptr) throw FormatError(path + ": missing fmt or data chunk");
    if (audio_format != 1 || bits != 16)
        throw UnsupportedFormatError(path + ": only 16-bit PCM is supported");
    if (channels != 1)
        throw UnsupportedFormatError(path + ": only mono is supported, got " +
                                     std::to_string(channels) + " channels");
    if (rate == 0) throw FormatError(path + ": zero sample rate");
    if (data_len < 2) throw FormatError(path + ": empty data chunk");

    Waveform w;
    w.sample_rate = rate;
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const int16_t v = static_cast<int16_t>(rd_u16(data_ptr + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
    }
    return w;
}

void write_wav(const std::string& path, const Waveform& w) {
    if (w.samples.empty() || w.sample_rate == 0)
        throw ContractError("write_wav: empty waveform or zero sample rate");
    BinWriter bw;
    const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
    bw.bytes("RIFF", 4);
    bw.u32(36 + data_bytes);
    bw.bytes("WAVE", 4);
    bw.bytes("fmt ", 4);
    bw.u32(16);
    bw.u16(1); // PCM
    bw.u16(1); // mono
    bw.u32(w.sample_rate);
    bw.u32(w.sample_rate * 2); // byte rate
    bw.u16(2);                 // block align
    bw.u16(16);                // bits per sample
    bw.bytes("data", 4);
    bw.u32(data_bytes);
    for (double s : w.samples) {
        double v = std::round(s * 32768.0);
        v = std::min(32767.0, std::max(-32768.0, v));
        bw.u16(static_cast<uint16_t>(static_cast<int16_t>(v)));
    }
    atomic_write_file(path, bw.buf);
}

Waveform pre_emphasis(const Waveform& w, double alpha) {
    if (w.samples.empty()) throw ContractError("pre_emphasis: empty waveform");
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw DomainError("pre_emphasis alpha must be in [0,1), got " + std::to_string(alpha));
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(w.samples.size());
    out.samples[0] = w.samples[0];
    for (size_t t = 1; t < w.samples.size(); ++t)
        out.samples[t] = w.samples[t] - alpha * w.samples[t - 1];
    return out;
}

Waveform layer_norm_waveform(const Waveform& w, double epsilon) {
    const size_t n = w.samples.size();
    if (n < 2) throw ContractError("layer_norm_waveform requires length >= 2");
    double mean = 0.0;
    for (double s : w.samples) mean += s;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double s : w.samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(n);
    const double denom2 = var + epsilon;
    if (denom2 <= 0.0)
        throw DomainError("layer_norm_waveform: zero variance with epsilon " +
                          std::to_string(epsilon));
    const double inv = 1.0 / std::sqrt(denom2);
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) out.samples[i] = (w.samples[i] - mean) * inv;
    return out;
}

CropPlan plan_crops(size_t length, size_t crop_len, double overlap_fraction) {
    if (crop_len == 0) throw ContractError("plan_crops: crop_len must be positive");
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
        throw DomainError("plan_crops: overlap_fraction must be in [0,1)");
    CropPlan plan;
    plan.crop_len = crop_len;
    if (length < crop_len) {
        // Short input: single crop of the cyclically repeated signal.
        plan.starts = {0};
        return plan;
    }
    size_t hop = static_cast<size_t>(
        std::floor(static_cast<double>(crop_len) * (1.0 - overlap_fraction)));
    if (hop == 0) hop = 1;
    for (size_t s = 0; s + crop_len <= length; s += hop) plan.starts.push_back(s);
    const size_t tail = length - crop_len;
    if (plan.starts.back() != tail) plan.starts.push_back(tail);
    return plan;
}

std::vector<double> extract_crop(const Waveform& w, size_t start, size_t crop_len) {
    if (w.samples.empty()) throw ContractError("extract_crop: empty waveform");
    std::vector<double> out(crop_len);
    const size_t n = w.samples.size();
    if (start + crop_len <= n) {
        std::copy(w.samples.begin() + static_cast<ptrdiff_t>(start),
                  w.samples.begin() + static_cast<ptrdiff_t>(start + crop_len), out.begin());
    } else {
        for (size_t i = 0; i < crop_len; ++i) out[i] = w.samples[(start + i) % n];
    }
    return out;
}

} // namespace rawnet
