#include "rawnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rawnet {

std::vector<Trial> parse_trials_text(const std::string& text, const std::string& origin) {
    std::vector<Trial> trials;
    std::stringstream ss(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string label, enroll, test, extra;
        ls >> label >> enroll >> test;
        if (!ls || enroll.empty() || test.empty() || (ls >> extra))
            throw ParseError(origin + ":" + std::to_string(lineno) +
                             ": expected '<label> <enroll> <test>'");
        Trial t;
        if (label == "1")
            t.target = true;
        else if (label == "0")
            t.target = false;
        else
            throw ParseError(origin + ":" + std::to_string(lineno) + ": label must be 0 or 1, got '" +
                             label + "'");
        t.enroll_id = enroll;
        t.test_id = test;
        trials.push_back(std::move(t));
    }
    return trials;
}

std::vector<Trial> parse_trials(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trial list " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_trials_text(ss.str(), path);
}

std::string format_trials(const std::vector<Trial>& trials) {
    std::ostringstream os;
    for (const Trial& t : trials)
        os << (t.target ? '1' : '0') << ' ' << t.enroll_id << ' ' << t.test_id << '\n';
    return os.str();
}

namespace {

double cosine_impl(const double* a, const double* b, size_t n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw DomainError("cosine of a zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace

double cosine(const std::vector<double>& e1, const std::vector<double>& e2) {
    if (e1.size() != e2.size() || e1.empty())
        throw ShapeError("cosine: dimensions " + std::to_string(e1.size()) + " vs " +
                         std::to_string(e2.size()));
    return cosine_impl(e1.data(), e2.data(), e1.size());
}

double cosine(const std::vector<float>& e1, const std::vector<float>& e2) {
    if (e1.size() != e2.size() || e1.empty())
        throw ShapeError("cosine: dimensions " + std::to_string(e1.size()) + " vs " +
                         std::to_string(e2.size()));
    std::vector<double> a(e1.begin(), e1.end());
    std::vector<double> b(e2.begin(), e2.end());
    return cosine_impl(a.data(), b.data(), a.size());
}

namespace {

// (threshold, FAR, FRR) at every unique score, ascending, plus the virtual
// top point one unit above the maximum where FAR=0 and FRR=1.
std::vector<DetPoint> sweep(const std::vector<ScoreRecord>& scores) {
    std::vector<double> targets, nontargets, all;
    for (const ScoreRecord& s : scores) {
        (s.trial.target ? targets : nontargets).push_back(s.score);
        all.push_back(s.score);
    }
    if (targets.empty() || nontargets.empty())
        throw ContractError("EER needs at least one target and one nontarget score");
    std::sort(targets.begin(), targets.end());
    std::sort(nontargets.begin(), nontargets.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    const double nt = static_cast<double>(targets.size());
    const double nn = static_cast<double>(nontargets.size());
    std::vector<DetPoint> pts;
    pts.reserve(all.size() + 1);
    for (double th : all) {
        DetPoint p;
        p.threshold = th;
        const auto ge = nontargets.end() -
                        std::lower_bound(nontargets.begin(), nontargets.end(), th);
        const auto lt = std::lower_bound(targets.begin(), targets.end(), th) - targets.begin();
        p.far = static_cast<double>(ge) / nn;
        p.frr = static_cast<double>(lt) / nt;
        pts.push_back(p);
    }
    pts.push_back({all.back() + 1.0, 0.0, 1.0});
    return pts;
}

} // namespace

EerResult compute_eer(const std::vector<ScoreRecord>& scores) {
    const std::vector<DetPoint> pts = sweep(scores);
    for (size_t i = 0; i < pts.size(); ++i) {
        const double d = pts[i].far - pts[i].frr;
        if (d == 0.0) return {pts[i].far, pts[i].threshold};
        if (d < 0.0) {
            // Sign flip inside (i-1, i): FAR(t_0) = 1, FRR(t_0) = 0, so i > 0.
            const double d0 = pts[i - 1].far - pts[i - 1].frr;
            const double t = d0 / (d0 - d);
            return {pts[i - 1].far + t * (pts[i].far - pts[i - 1].far),
                    pts[i - 1].threshold + t * (pts[i].threshold - pts[i - 1].threshold)};
        }
    }
    // Unreachable: the virtual top point has FAR - FRR = -1.
    throw ContractError("EER sweep found no crossing");
}

double compute_rer(double eer_new, double eer_baseline) {
    if (!(eer_baseline > 0.0)) throw DomainError("RER baseline must be positive");
    return (eer_baseline - eer_new) / eer_baseline;
}

std::vector<DetPoint> det_points(const std::vector<ScoreRecord>& scores) {
    return sweep(scores);
}

std::string format_scores(const std::vector<ScoreRecord>& scores) {
    std::ostringstream os;
    char buf[64];
    for (const ScoreRecord& s : scores) {
        std::snprintf(buf, sizeof(buf), "%.6f", s.score);
        os << buf << ' ' << (s.trial.target ? '1' : '0') << ' ' << s.trial.enroll_id << ' '
           << s.trial.test_id << '\n';
    }
    return os.str();
}

} // namespace rawnet
