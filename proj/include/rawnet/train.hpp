#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rawnet/audio.hpp"
#include "rawnet/model.hpp"
#include "rawnet/rng.hpp"
#include "rawnet/tape.hpp"

namespace rawnet {

// ---------------------------------------------------------------------------
// Synthetic speakers (the zero-data stand-in for a real training corpus)
// ---------------------------------------------------------------------------

struct SyntheticSpeakerSpec {
    size_t speaker_id = 0;
    double fundamental_freq = 0.0;           // Hz
    std::vector<double> harmonic_amplitudes; // relative weights per harmonic
    uint64_t formant_noise_seed = 0;
    double vibrato_rate = 0.0; // Hz, 0 disables vibrato
};

// Fundamentals spaced 22 Hz apart (the separability invariant requires
// >= 10 Hz) with per-speaker harmonic decay profiles.
std::vector<SyntheticSpeakerSpec> make_toy_speakers(size_t n, uint64_t seed);

// Harmonic stack at the fundamental with slow vibrato and low-level seeded
// noise, peak-normalized to 0.9. The noise floor scales with the harmonic
// amplitudes, so an all-zero spec yields exact silence.
Waveform synth_utterance(const SyntheticSpeakerSpec& spec, size_t length, uint32_t sample_rate,
                         uint64_t seed);

// ---------------------------------------------------------------------------
// Categorical cross-entropy
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], stabilized by
// per-row max subtraction. Out-of-range labels are a contract violation.
template <typename T>
NodeId cce_loss(Tape<T>& tp, NodeId logits, const std::vector<size_t>& labels) {
    const Tensor<T>& Z = tp.value(logits);
    if (Z.rank() != 2) throw ShapeError("cce_loss expects [B,S] logits");
    const size_t B = Z.shape[0], S = Z.shape[1];
    if (labels.size() != B)
        throw ShapeError("cce_loss: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    for (size_t l : labels)
        if (l >= S) throw ContractError("cce_loss: label " + std::to_string(l) + " out of range");

    auto softmax = std::make_shared<std::vector<T>>(B * S);
    double total = 0.0;
    for (size_t b = 0; b < B; ++b) {
        const T* z = Z.ptr() + b * S;
        T m = z[0];
        for (size_t s = 1; s < S; ++s) m = std::max(m, z[s]);
        double se = 0.0;
        for (size_t s = 0; s < S; ++s) se += std::exp(static_cast<double>(z[s] - m));
        for (size_t s = 0; s < S; ++s)
            (*softmax)[b * S + s] =
                static_cast<T>(std::exp(static_cast<double>(z[s] - m)) / se);
        total += std::log(se) - static_cast<double>(z[labels[b]] - m);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(B)));
    check_finite(out, "cce_loss");

    return tp.make_node(
        std::move(out),
        [logits, labels, softmax, B, S](Tape<T>& tp, NodeId self) {
            if (!tp.wants_grad(logits)) return;
            const T g = tp.out_grad(self).data[0];
            Tensor<T>& dz = tp.scratch_grad(logits);
            const T scale = g / static_cast<T>(B);
            for (size_t b = 0; b < B; ++b)
                for (size_t s = 0; s < S; ++s) {
                    T p = (*softmax)[b * S + s];
                    if (s == labels[b]) p -= T(1);
                    dz.data[b * S + s] += scale * p;
                }
        },
        tp.wants_grad(logits));
}

// ---------------------------------------------------------------------------
// AMSGrad with L2 weight decay folded into the gradient
// ---------------------------------------------------------------------------

struct AmsGradConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Update per element, with t counting calls to step():
//   g    = grad + weight_decay * theta
//   m    = beta1*m + (1-beta1)*g
//   v    = beta2*v + (1-beta2)*g^2
//   vhat = max(vhat, v)                      (elementwise non-decreasing)
//   theta -= lr * (m / (1-beta1^t)) / (sqrt(vhat / (1-beta2^t)) + eps)
// Both moments are bias-corrected, matching the usual AMSGrad practice.
template <typename T>
class AmsGrad {
public:
    struct Slot {
        std::vector<T> m, v, vhat;
    };

    struct Target {
        std::string name;
        Tensor<T>* value = nullptr;
        const Tensor<T>* grad = nullptr;
    };

    explicit AmsGrad(AmsGradConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<Target>& targets) {
        if (slots_.empty()) {
            slots_.resize(targets.size());
            for (size_t i = 0; i < targets.size(); ++i) {
                const size_t n = targets[i].value->numel();
                slots_[i].m.assign(n, T(0));
                slots_[i].v.assign(n, T(0));
                slots_[i].vhat.assign(n, T(0));
            }
        }
        if (slots_.size() != targets.size())
            throw ContractError("amsgrad: parameter set changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < targets.size(); ++i) {
            const Target& tg = targets[i];
            if (!all_finite(tg.grad->data))
                throw ContractError("amsgrad: non-finite gradient for " + tg.name);
            Slot& sl = slots_[i];
            T* theta = tg.value->ptr();
            const T* grad = tg.grad->ptr();
            const size_t n = tg.value->numel();
            for (size_t k = 0; k < n; ++k) {
                const double g =
                    static_cast<double>(grad[k]) + cfg_.weight_decay * static_cast<double>(theta[k]);
                const double m = cfg_.beta1 * static_cast<double>(sl.m[k]) + (1.0 - cfg_.beta1) * g;
                const double v =
                    cfg_.beta2 * static_cast<double>(sl.v[k]) + (1.0 - cfg_.beta2) * g * g;
                const double vhat = std::max(static_cast<double>(sl.vhat[k]), v);
                sl.m[k] = static_cast<T>(m);
                sl.v[k] = static_cast<T>(v);
                sl.vhat[k] = static_cast<T>(vhat);
                theta[k] -= static_cast<T>(cfg_.lr * (m / bc1) /
                                           (std::sqrt(vhat / bc2) + cfg_.eps));
            }
        }
    }

    void step(ModelParams<T>& params) {
        std::vector<Target> targets;
        params.for_each_tensor(
            [&](const std::string& name, Tensor<T>& v, Tensor<T>* g, bool learnable) {
                if (learnable) targets.push_back({name, &v, g});
            });
        step(targets);
    }

    int64_t steps() const { return t_; }
    const std::vector<Slot>& slots() const { return slots_; }
    const AmsGradConfig& config() const { return cfg_; }

private:
    AmsGradConfig cfg_;
    std::vector<Slot> slots_;
    int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Toy training loop
// ---------------------------------------------------------------------------

struct ToyDatasetSpec {
    size_t n_speakers = 8;
    size_t utts_per_speaker = 10;
    size_t min_len = 0; // 0 -> 1.3 * input_len
    size_t max_len = 0; // 0 -> 1.9 * input_len
    uint32_t sample_rate = 16000;
};

struct TrainOptions {
    size_t batch_size = 16;
    AmsGradConfig optimizer{};
    // Called after every optimizer step; used by tests to watch state.
    std::function<void(size_t step, const AmsGrad<real>&)> step_observer;
};

struct TrainResult {
    ModelParams<real> params;
    std::vector<double> loss_history; // mean CCE per epoch
};

// Synthesize utterances for n_speakers, then run `epochs` epochs of
// shuffled single-crop mini-batches with AMSGrad. Deterministic given seed.
TrainResult train_toy(const ModelConfig& config, const ToyDatasetSpec& data, size_t epochs,
                      uint64_t seed, const TrainOptions& opts = {});

// CSV with header "epoch,mean_cce", epochs numbered from 1.
void write_loss_csv(const std::string& path, const std::vector<double>& history);

} // namespace rawnet
