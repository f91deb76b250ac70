#pragma once

#include <string>
#include <vector>

#include "rawnet/error.hpp"

namespace rawnet {

// One verification trial: does the test utterance match the enrollment
// speaker?
struct Trial {
    bool target = false;
    std::string enroll_id;
    std::string test_id;

    bool operator==(const Trial&) const = default;
};

struct ScoreRecord {
    Trial trial;
    double score = 0.0; // cosine similarity, in [-1, 1]
};

struct EerResult {
    double eer = 0.0;       // fraction in [0, 1]
    double threshold = 0.0; // interpolated crossing threshold
};

struct DetPoint {
    double threshold = 0.0;
    double far = 0.0; // fraction of nontargets >= threshold
    double frr = 0.0; // fraction of targets  <  threshold
};

// Trial list: one `<label> <enroll_path> <test_path>` per non-empty line,
// label 1 (target) or 0 (nontarget). Malformed lines raise ParseError with
// the 1-based line number.
std::vector<Trial> parse_trials(const std::string& path);
std::vector<Trial> parse_trials_text(const std::string& text, const std::string& origin);
std::string format_trials(const std::vector<Trial>& trials);

// e1.e2 / (|e1| |e2|); accumulated in double. Zero vectors are a domain
// error.
double cosine(const std::vector<float>& e1, const std::vector<float>& e2);
double cosine(const std::vector<double>& e1, const std::vector<double>& e2);

// Threshold sweep over the sorted unique scores plus a virtual top point
// (FAR 0, FRR 1, threshold max+1). FAR(t) counts nontargets >= t, FRR(t)
// counts targets < t; the EER is read at the first sweep point where
// FAR - FRR hits zero, or linearly interpolated inside the segment where the
// sign flips. Requires at least one target and one nontarget score.
EerResult compute_eer(const std::vector<ScoreRecord>& scores);

// (eer_baseline - eer_new) / eer_baseline; units cancel, so percent or
// fraction inputs both work. Zero baseline is a domain error.
double compute_rer(double eer_new, double eer_baseline);

// One (threshold, FAR, FRR) triple per unique score plus the virtual top
// point: FAR non-increasing and FRR non-decreasing along the sweep.
std::vector<DetPoint> det_points(const std::vector<ScoreRecord>& scores);

// Score file: `<score> <label> <enroll> <test>` with fixed 6-decimal scores.
std::string format_scores(const std::vector<ScoreRecord>& scores);

} // namespace rawnet
