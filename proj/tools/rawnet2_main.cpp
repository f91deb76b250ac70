// rawnet2 — command-line front-end for the speaker-verification pipeline:
// toy training, embedding extraction, trial scoring/EER evaluation and
// sinc-filter inspection.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "rawnet/audio.hpp"
#include "rawnet/eval.hpp"
#include "rawnet/io_util.hpp"
#include "rawnet/model.hpp"
#include "rawnet/train.hpp"

namespace fs = std::filesystem;
using namespace rawnet;

namespace {

std::vector<std::string> read_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open list file " + path);
    std::vector<std::string> items;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        items.push_back(line);
    }
    return items;
}

std::map<std::string, std::vector<float>> load_embedding_dir(const std::string& dir) {
    std::map<std::string, std::vector<float>> embs;
    if (!fs::is_directory(dir)) throw FormatError(dir + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".emb")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
        auto [id, values] = load_embedding(f.string());
        embs.emplace(std::move(id), std::move(values));
    }
    return embs;
}

std::vector<ScoreRecord> score_trials(const std::vector<Trial>& trials,
                                      const std::map<std::string, std::vector<float>>& embs) {
    std::vector<ScoreRecord> records;
    records.reserve(trials.size());
    for (const Trial& t : trials) {
        auto e = embs.find(t.enroll_id);
        if (e == embs.end()) throw FormatError("no embedding for id '" + t.enroll_id + "'");
        auto s = embs.find(t.test_id);
        if (s == embs.end()) throw FormatError("no embedding for id '" + t.test_id + "'");
        records.push_back({t, cosine(e->second, s->second)});
    }
    return records;
}

int cmd_train_toy(const std::string& config_path, const std::string& out_path, size_t epochs,
                  uint64_t seed, size_t speakers, const std::string& loss_csv,
                  size_t utts_per_speaker, size_t batch_size) {
    ModelConfig cfg = ModelConfig::from_file(config_path);
    ToyDatasetSpec data;
    data.n_speakers = speakers; // flag wins over the config's n_speakers
    data.utts_per_speaker = utts_per_speaker;
    TrainOptions opts;
    opts.batch_size = batch_size;
    TrainResult res = train_toy(cfg, data, epochs, seed, opts);
    save_model(res.params, out_path);
    if (!loss_csv.empty()) write_loss_csv(loss_csv, res.loss_history);
    std::printf("trained %zu epochs, mean CCE %.6f -> %.6f, weights at %s\n", epochs,
                res.loss_history.front(), res.loss_history.back(), out_path.c_str());
    return 0;
}

int cmd_extract(const std::string& weights, const std::string& wav_list, const std::string& out,
                bool tta, size_t jobs) {
    ModelParams<real> params = load_model<real>(weights);
    const std::vector<std::string> files = read_list(wav_list);
    fs::create_directories(out);

    std::atomic<size_t> next{0};
    std::atomic<size_t> failures{0};
    std::mutex log_mutex;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= files.size()) return;
            const std::string& id = files[i];
            try {
                Waveform w = read_wav(id);
                std::vector<float> emb = extract_embedding(params, w, tta);
                const fs::path dst = fs::path(out) / (sanitize_id(id) + ".emb");
                save_embedding(dst.string(), id, emb);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(log_mutex);
                std::cerr << "extract failed for " << id << ": " << e.what() << "\n";
                ++failures;
            }
        }
    };
    const size_t n_threads = std::max<size_t>(1, std::min(jobs, files.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    std::printf("extracted %zu/%zu embeddings to %s\n", files.size() - failures.load(),
                files.size(), out.c_str());
    return failures.load() == 0 ? 0 : 1;
}

int cmd_score(const std::string& trials_path, const std::string& embeddings,
              const std::string& out) {
    const std::vector<Trial> trials = parse_trials(trials_path);
    const auto embs = load_embedding_dir(embeddings);
    const std::vector<ScoreRecord> records = score_trials(trials, embs);
    atomic_write_text(out, format_scores(records));
    std::printf("scored %zu trials to %s\n", records.size(), out.c_str());
    return 0;
}

int cmd_eval(const std::string& trials_path, const std::string& embeddings,
             const std::string& report, std::string scores_path, std::string det_path) {
    const std::vector<Trial> trials = parse_trials(trials_path);
    const auto embs = load_embedding_dir(embeddings);
    const std::vector<ScoreRecord> records = score_trials(trials, embs);
    if (scores_path.empty()) scores_path = report + ".scores";
    if (det_path.empty()) det_path = report + ".det.csv";

    size_t n_target = 0;
    for (const ScoreRecord& r : records) n_target += r.trial.target ? 1 : 0;
    const EerResult eer = compute_eer(records);
    const std::vector<DetPoint> det = det_points(records);

    atomic_write_text(scores_path, format_scores(records));

    char buf[256];
    std::ostringstream rep;
    rep << "trials: " << records.size() << "\n";
    rep << "target_trials: " << n_target << "\n";
    rep << "nontarget_trials: " << records.size() - n_target << "\n";
    std::snprintf(buf, sizeof(buf), "eer_percent: %.2f\n", 100.0 * eer.eer);
    rep << buf;
    std::snprintf(buf, sizeof(buf), "threshold: %.6f\n", eer.threshold);
    rep << buf;
    atomic_write_text(report, rep.str());

    std::ostringstream csv;
    csv << "eer,threshold,targets,nontargets\n";
    std::snprintf(buf, sizeof(buf), "%.8f,%.6f,%zu,%zu\n", eer.eer, eer.threshold, n_target,
                  records.size() - n_target);
    csv << buf;
    atomic_write_text(report + ".csv", csv.str());

    std::ostringstream dcsv;
    dcsv << "threshold,far,frr\n";
    for (const DetPoint& p : det) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.threshold, p.far, p.frr);
        dcsv << buf;
    }
    atomic_write_text(det_path, dcsv.str());

    std::printf("eer %.2f%% at threshold %.6f over %zu trials (report %s)\n", 100.0 * eer.eer,
                eer.threshold, records.size(), report.c_str());
    return 0;
}

int cmd_inspect_filters(const std::string& weights, const std::string& out) {
    ModelParams<real> params = load_model<real>(weights);
    if (!params.front_sinc)
        throw ConfigError(weights + " contains no sinc front-end (frontend=plain_conv)");
    const size_t F = params.config.frontend_filters;
    const size_t K = params.config.frontend_filter_len;
    const double sr = static_cast<double>(params.config.sample_rate);

    std::vector<double> p_low(F), p_bw(F), f1, f2;
    for (size_t i = 0; i < F; ++i) {
        p_low[i] = static_cast<double>(params.front_sinc->f_low.v.data[i]);
        p_bw[i] = static_cast<double>(params.front_sinc->bandwidth.v.data[i]);
    }
    sinc_cutoffs(p_low, p_bw, sr, f1, f2);

    const size_t nfft = 8192;
    std::ostringstream csv;
    csv << "filter,f1_hz,f2_hz,peak_hz\n";
    char buf[128];
    for (size_t f = 0; f < F; ++f) {
        const std::vector<double> kernel = sinc_kernel(f1[f], f2[f], K, sr);
        double best = -1.0;
        size_t best_bin = 0;
        for (size_t bin = 0; bin < nfft / 2; ++bin) {
            double re = 0.0, im = 0.0;
            for (size_t t = 0; t < K; ++t) {
                const double ang = -2.0 * M_PI * static_cast<double>(bin) *
                                   static_cast<double>(t) / static_cast<double>(nfft);
                re += kernel[t] * std::cos(ang);
                im += kernel[t] * std::sin(ang);
            }
            const double mag = std::sqrt(re * re + im * im);
            if (mag > best) {
                best = mag;
                best_bin = bin;
            }
        }
        const double peak_hz = static_cast<double>(best_bin) * sr / static_cast<double>(nfft);
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", f, f1[f], f2[f], peak_hz);
        csv << buf;
    }
    atomic_write_text(out, csv.str());
    std::printf("wrote %zu filter rows to %s\n", F, out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RawNet2 speaker-verification pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path, loss_csv;
    size_t epochs = 30, speakers = 8, utts_per_speaker = 10, batch_size = 16;
    uint64_t seed = 1;
    auto* train = app.add_subcommand("train-toy", "Train on synthetic speakers");
    train->add_option("--config", config_path, "Model config file")->required();
    train->add_option("--out", out_path, "Output weights file")->required();
    train->add_option("--epochs", epochs, "Training epochs");
    train->add_option("--seed", seed, "Master RNG seed");
    train->add_option("--speakers", speakers, "Number of synthetic speakers");
    train->add_option("--loss-csv", loss_csv, "Per-epoch loss CSV path");
    train->add_option("--utts-per-speaker", utts_per_speaker, "Training utterances per speaker");
    train->add_option("--batch-size", batch_size, "Mini-batch size");

    std::string weights, wav_list, emb_out;
    bool tta = false;
    size_t jobs = 1;
    auto* extract = app.add_subcommand("extract", "Extract embeddings for a wav list");
    extract->add_option("--weights", weights, "Model weights file")->required();
    extract->add_option("--wav-list", wav_list, "File with one wav path per line")->required();
    extract->add_option("--out", emb_out, "Output embeddings directory")->required();
    extract->add_flag("--tta", tta, "Average embeddings over overlapping crops");
    extract->add_option("--jobs", jobs, "Parallel extraction threads");

    std::string trials_path, emb_dir, scores_out;
    auto* score = app.add_subcommand("score", "Score trials against embeddings");
    score->add_option("--trials", trials_path, "Trial list file")->required();
    score->add_option("--embeddings", emb_dir, "Embeddings directory")->required();
    score->add_option("--out", scores_out, "Output score file")->required();

    std::string report_path, eval_scores, eval_det;
    auto* evalc = app.add_subcommand("eval", "Score trials and report EER");
    evalc->add_option("--trials", trials_path, "Trial list file")->required();
    evalc->add_option("--embeddings", emb_dir, "Embeddings directory")->required();
    evalc->add_option("--report", report_path, "Report path")->required();
    evalc->add_option("--scores", eval_scores, "Score file path (default <report>.scores)");
    evalc->add_option("--det", eval_det, "DET CSV path (default <report>.det.csv)");

    std::string inspect_out;
    auto* inspect = app.add_subcommand("inspect-filters", "Dump sinc filter cutoffs and peaks");
    inspect->add_option("--weights", weights, "Model weights file")->required();
    inspect->add_option("--out", inspect_out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (train->parsed())
            return cmd_train_toy(config_path, out_path, epochs, seed, speakers, loss_csv,
                                 utts_per_speaker, batch_size);
        if (extract->parsed()) return cmd_extract(weights, wav_list, emb_out, tta, jobs);
        if (score->parsed()) return cmd_score(trials_path, emb_dir, scores_out);
        if (evalc->parsed())
            return cmd_eval(trials_path, emb_dir, report_path, eval_scores, eval_det);
        if (inspect->parsed()) return cmd_inspect_filters(weights, inspect_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
