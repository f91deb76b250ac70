#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rawnet/error.hpp"

namespace rawnet {

// Raw audio at a fixed sample rate. Samples are PCM values scaled by 2^-15,
// nominally in [-1, 1]. Always non-empty with a positive rate.
struct Waveform {
    std::vector<double> samples;
    uint32_t sample_rate = 0;

    size_t size() const { return samples.size(); }
};

// Deterministic crop layout over a waveform: fixed crop length plus strictly
// increasing start offsets, every crop fully inside the (possibly cyclically
// extended) signal.
struct CropPlan {
    size_t crop_len = 0;
    std::vector<size_t> starts;
};

inline constexpr double kPreEmphasisAlpha = 0.97;
inline constexpr double kLayerNormEpsilon = 1e-8;
inline constexpr double kTtaOverlap = 0.2;

// 16-bit signed little-endian PCM, mono, RIFF/WAVE. Anything else is
// rejected: malformed containers raise FormatError, well-formed but
// unsupported encodings raise UnsupportedFormatError.
Waveform read_wav(const std::string& path);

// Inverse of read_wav at the PCM level: samples are scaled by 2^15, rounded
// to nearest and clamped to int16. read_wav -> write_wav round-trips the PCM
// payload bit-exactly.
void write_wav(const std::string& path, const Waveform& w);

// out[0] = w[0]; out[t] = w[t] - alpha * w[t-1]. Requires 0 <= alpha < 1.
Waveform pre_emphasis(const Waveform& w, double alpha);

// (w - mean) / sqrt(population_var + epsilon). Requires length >= 2;
// a constant input with epsilon == 0 raises DomainError.
Waveform layer_norm_waveform(const Waveform& w, double epsilon);

// Overlapping crop layout: hop = floor(crop_len * (1 - overlap_fraction)),
// starts at multiples of hop while they fit, plus one tail crop at
// length - crop_len if the grid does not already reach it. Inputs shorter
// than crop_len get a single crop of the cyclically repeated signal.
CropPlan plan_crops(size_t length, size_t crop_len, double overlap_fraction);

// Copy out a crop; wraps cyclically when the waveform is shorter than the
// requested crop (the plan_crops short-input rule).
std::vector<double> extract_crop(const Waveform& w, size_t start, size_t crop_len);

} // namespace rawnet
