#include "rawnet/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rawnet/io_util.hpp"

namespace rawnet {

std::vector<SyntheticSpeakerSpec> make_toy_speakers(size_t n, uint64_t seed) {
    std::vector<SyntheticSpeakerSpec> specs;
    specs.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Rng rng(Rng::mix(seed, 100 + i));
        SyntheticSpeakerSpec s;
        s.speaker_id = i;
        s.fundamental_freq = 110.0 + 22.0 * static_cast<double>(i);
        const double decay = 0.45 + 0.12 * static_cast<double>(i % 5);
        s.harmonic_amplitudes.resize(4);
        for (size_t k = 0; k < s.harmonic_amplitudes.size(); ++k)
            s.harmonic_amplitudes[k] =
                rng.uniform(0.6, 1.0) / std::pow(static_cast<double>(k + 1), decay);
        s.formant_noise_seed = Rng::mix(seed, 7000 + i);
        s.vibrato_rate = 3.0 + static_cast<double>(i % 4);
        specs.push_back(std::move(s));
    }
    return specs;
}

Waveform synth_utterance(const SyntheticSpeakerSpec& spec, size_t length, uint32_t sample_rate,
                         uint64_t seed) {
    if (length == 0) throw ContractError("synth_utterance: length must be positive");
    Rng rng(Rng::mix(seed, spec.formant_noise_seed));
    const size_t H = spec.harmonic_amplitudes.size();
    std::vector<double> phase0(H);
    for (double& p : phase0) p = rng.uniform(0.0, 2.0 * M_PI);

    double peak_amp = 0.0;
    for (double a : spec.harmonic_amplitudes) peak_amp = std::max(peak_amp, std::abs(a));
    const double noise_amp = 0.03 * peak_amp;

    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(length);
    const double sr = static_cast<double>(sample_rate);
    double cycles = 0.0; // integrated fundamental cycles
    for (size_t t = 0; t < length; ++t) {
        const double vib =
            spec.vibrato_rate > 0.0
                ? 1.0 + 0.02 * std::sin(2.0 * M_PI * spec.vibrato_rate * static_cast<double>(t) /
                                        sr)
                : 1.0;
        double x = 0.0;
        for (size_t k = 0; k < H; ++k)
            x += spec.harmonic_amplitudes[k] *
                 std::sin(2.0 * M_PI * static_cast<double>(k + 1) * cycles + phase0[k]);
        x += noise_amp * (2.0 * rng.uniform() - 1.0);
        w.samples[t] = x;
        cycles += spec.fundamental_freq * vib / sr;
    }

    double peak = 0.0;
    for (double s : w.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.0) {
        const double scale = 0.9 / peak;
        for (double& s : w.samples) s *= scale;
    }
    return w;
}

TrainResult train_toy(const ModelConfig& config, const ToyDatasetSpec& data, size_t epochs,
                      uint64_t seed, const TrainOptions& opts) {
    if (data.n_speakers < 2)
        throw ConfigError("train_toy requires at least 2 speakers, got " +
                          std::to_string(data.n_speakers));
    if (data.utts_per_speaker == 0)
        throw ConfigError("train_toy requires at least one utterance per speaker");
    if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");

    ModelConfig cfg = config;
    cfg.n_speakers = data.n_speakers;
    cfg.sample_rate = data.sample_rate;
    cfg.validate();
    const size_t L = cfg.input_len;
    const size_t min_len = data.min_len ? data.min_len : L + (3 * L) / 10;
    const size_t max_len = data.max_len ? data.max_len : L + (9 * L) / 10;
    if (max_len < min_len) throw ConfigError("max_len < min_len");

    const std::vector<SyntheticSpeakerSpec> speakers =
        make_toy_speakers(data.n_speakers, Rng::mix(seed, 1));

    struct Utt {
        size_t speaker;
        std::vector<double> samples; // pre-emphasized for the plain front-end
    };
    std::vector<Utt> utts;
    utts.reserve(data.n_speakers * data.utts_per_speaker);
    Rng len_rng(Rng::mix(seed, 2));
    for (size_t s = 0; s < data.n_speakers; ++s) {
        for (size_t u = 0; u < data.utts_per_speaker; ++u) {
            const size_t len = min_len + len_rng.uniform_int(max_len - min_len + 1);
            Waveform w = synth_utterance(speakers[s], len, data.sample_rate,
                                         Rng::mix(seed, 1000 + s * data.utts_per_speaker + u));
            if (cfg.frontend == Frontend::plain_conv) w = pre_emphasis(w, kPreEmphasisAlpha);
            utts.push_back({s, std::move(w.samples)});
        }
    }

    TrainResult result{build_model<real>(cfg, Rng::mix(seed, 3)), {}};
    AmsGrad<real> opt(opts.optimizer);
    Rng rng(Rng::mix(seed, 4));
    std::vector<size_t> order(utts.size());
    std::iota(order.begin(), order.end(), size_t(0));
    size_t step = 0;

    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (size_t pos = 0; pos < order.size(); pos += opts.batch_size) {
            const size_t bs = std::min(opts.batch_size, order.size() - pos);
            Tensor<real> batch = Tensor<real>::zeros({bs, L});
            std::vector<size_t> labels(bs);
            for (size_t b = 0; b < bs; ++b) {
                const Utt& utt = utts[order[pos + b]];
                labels[b] = utt.speaker;
                const size_t span = utt.samples.size() >= L ? utt.samples.size() - L + 1 : 1;
                const size_t start = rng.uniform_int(span);
                Waveform view{utt.samples, data.sample_rate};
                std::vector<double> crop = extract_crop(view, start, L);
                if (cfg.frontend == Frontend::sinc_conv) {
                    Waveform cw{std::move(crop), data.sample_rate};
                    crop = layer_norm_waveform(cw, kLayerNormEpsilon).samples;
                }
                for (size_t i = 0; i < L; ++i) batch.data[b * L + i] = static_cast<real>(crop[i]);
            }

            Tape<real> tape;
            ModelForward<real> fw = model_forward(tape, result.params, batch, true);
            NodeId loss = cce_loss(tape, fw.logits, labels);
            result.params.zero_grads();
            tape.backward(loss);
            opt.step(result.params);
            ++step;
            if (opts.step_observer) opts.step_observer(step, opt);
            loss_sum += static_cast<double>(tape.value(loss).data[0]) * static_cast<double>(bs);
        }
        result.loss_history.push_back(loss_sum / static_cast<double>(order.size()));
    }
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<double>& history) {
    std::ostringstream os;
    os << "epoch,mean_cce\n";
    char buf[64];
    for (size_t i = 0; i < history.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i + 1, history[i]);
        os << buf;
    }
    atomic_write_text(path, os.str());
}

} // namespace rawnet
