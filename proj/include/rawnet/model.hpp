#pragma once

#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rawnet/audio.hpp"
#include "rawnet/fms.hpp"
#include "rawnet/io_util.hpp"
#include "rawnet/layers.hpp"
#include "rawnet/rng.hpp"
#include "rawnet/tape.hpp"

namespace rawnet {

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEpsilon = 1e-5;

enum class Frontend { plain_conv, sinc_conv };

struct BlockSpec {
    size_t repeat = 0;
    size_t filters = 0;
    bool operator==(const BlockSpec&) const = default;
};

// Architecture hyperparameters. The defaults are the canonical stack:
// sinc front-end of 128 length-251 filters, two 128-filter blocks, four
// 256-filter blocks, pool width 3, GRU(1024), 1024-d embedding, 59049-sample
// input.
struct ModelConfig {
    Frontend frontend = Frontend::sinc_conv;
    size_t frontend_filter_len = 251;
    size_t frontend_filters = 128;
    std::vector<BlockSpec> block_group_specs = {{2, 128}, {4, 256}};
    size_t pool_width = 3;
    FmsKind fms_kind = FmsKind::mul_then_add;
    size_t gru_hidden = 1024;
    size_t embedding_dim = 1024;
    size_t n_speakers = 2;
    size_t input_len = 59049;
    size_t sample_rate = 16000;

    bool operator==(const ModelConfig&) const = default;

    size_t total_blocks() const {
        size_t n = 0;
        for (const BlockSpec& s : block_group_specs) n += s.repeat;
        return n;
    }

    void validate() const;

    // Canonical flat key=value form; also embedded in weight files.
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
    static ModelConfig from_file(const std::string& path);
};

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

template <typename T>
struct ParamTensor {
    Tensor<T> v;
    Tensor<T> g;

    void init(Tensor<T> value) {
        v = std::move(value);
        g = Tensor<T>::zeros(v.shape);
    }
};

template <typename T>
struct BnP {
    ParamTensor<T> gamma, beta;
    BnRunning<T> running;
};

template <typename T>
struct ConvP {
    ParamTensor<T> w; // [K,Fin,Fout]
    ParamTensor<T> b; // [Fout]
};

template <typename T>
struct FcP {
    ParamTensor<T> w; // [in,out]
    ParamTensor<T> b; // [out]
};

template <typename T>
struct SincP {
    ParamTensor<T> f_low;     // [F], Hz offsets above f_min
    ParamTensor<T> bandwidth; // [F], Hz above the minimum band
};

template <typename T>
struct FmsP {
    ParamTensor<T> w; // [F,F]
    ParamTensor<T> b; // [F]
};

template <typename T>
struct BlockP {
    size_t in_filters = 0, out_filters = 0;
    bool has_pre = true; // the very first block omits its leading BN+activation
    std::optional<BnP<T>> bn1;
    ConvP<T> conv1;
    BnP<T> bn2;
    ConvP<T> conv2;
    std::optional<ConvP<T>> skip; // 1x1 conv when in_filters != out_filters
    std::optional<FmsP<T>> fms1;
    std::optional<FmsP<T>> fms2; // mul_add_sep only
};

template <typename T>
struct GruP {
    ParamTensor<T> wz, uz, bz;
    ParamTensor<T> wr, ur, br;
    ParamTensor<T> wh, uh, bh;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    std::optional<ConvP<T>> front_conv;
    std::optional<SincP<T>> front_sinc;
    BnP<T> front_bn;
    std::vector<BlockP<T>> blocks;
    GruP<T> gru;
    FcP<T> embed;
    FcP<T> out;

    // Visit every tensor in canonical order. learnable=false marks BN
    // running statistics (serialized but never optimized).
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        auto bn = [&](const std::string& prefix, BnP<T>& p) {
            fn(prefix + ".gamma", p.gamma.v, &p.gamma.g, true);
            fn(prefix + ".beta", p.beta.v, &p.beta.g, true);
            fn(prefix + ".running_mean", p.running.mean, nullptr, false);
            fn(prefix + ".running_var", p.running.var, nullptr, false);
        };
        auto conv = [&](const std::string& prefix, ConvP<T>& p) {
            fn(prefix + ".weight", p.w.v, &p.w.g, true);
            fn(prefix + ".bias", p.b.v, &p.b.g, true);
        };
        auto fms = [&](const std::string& prefix, FmsP<T>& p) {
            fn(prefix + ".weight", p.w.v, &p.w.g, true);
            fn(prefix + ".bias", p.b.v, &p.b.g, true);
        };
        if (front_sinc) {
            fn("frontend.sinc.f_low", front_sinc->f_low.v, &front_sinc->f_low.g, true);
            fn("frontend.sinc.bandwidth", front_sinc->bandwidth.v, &front_sinc->bandwidth.g,
               true);
        }
        if (front_conv) conv("frontend.conv", *front_conv);
        bn("frontend.bn", front_bn);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            BlockP<T>& blk = blocks[i];
            if (blk.bn1) bn(p + ".bn1", *blk.bn1);
            conv(p + ".conv1", blk.conv1);
            bn(p + ".bn2", blk.bn2);
            conv(p + ".conv2", blk.conv2);
            if (blk.skip) conv(p + ".skip", *blk.skip);
            if (blk.fms1) fms(p + ".fms", *blk.fms1);
            if (blk.fms2) fms(p + ".fms2", *blk.fms2);
        }
        fn("gru.wz", gru.wz.v, &gru.wz.g, true);
        fn("gru.uz", gru.uz.v, &gru.uz.g, true);
        fn("gru.bz", gru.bz.v, &gru.bz.g, true);
        fn("gru.wr", gru.wr.v, &gru.wr.g, true);
        fn("gru.ur", gru.ur.v, &gru.ur.g, true);
        fn("gru.br", gru.br.v, &gru.br.g, true);
        fn("gru.wh", gru.wh.v, &gru.wh.g, true);
        fn("gru.uh", gru.uh.v, &gru.uh.g, true);
        fn("gru.bh", gru.bh.v, &gru.bh.g, true);
        fn("embed.weight", embed.w.v, &embed.w.g, true);
        fn("embed.bias", embed.b.v, &embed.b.g, true);
        fn("out.weight", out.w.v, &out.w.g, true);
        fn("out.bias", out.b.v, &out.b.g, true);
    }

    void zero_grads() {
        for_each_tensor([](const std::string&, Tensor<T>&, Tensor<T>* g, bool) {
            if (g) std::fill(g->data.begin(), g->data.end(), T(0));
        });
    }

    size_t learnable_count() {
        size_t n = 0;
        for_each_tensor([&](const std::string&, Tensor<T>& v, Tensor<T>*, bool learnable) {
            if (learnable) n += v.numel();
        });
        return n;
    }
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

template <typename T>
Tensor<T> uniform_init(Rng& rng, Shape shape, size_t fan_in) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <typename T>
void init_conv(Rng& rng, ConvP<T>& c, size_t K, size_t fin, size_t fout) {
    c.w.init(uniform_init<T>(rng, {K, fin, fout}, K * fin));
    c.b.init(Tensor<T>::zeros({fout}));
}

template <typename T>
void init_bn(BnP<T>& b, size_t f) {
    b.gamma.init(Tensor<T>::full({f}, T(1)));
    b.beta.init(Tensor<T>::zeros({f}));
    b.running.mean = Tensor<T>::zeros({f});
    b.running.var = Tensor<T>::full({f}, T(1));
}

template <typename T>
void init_fms(Rng& rng, FmsP<T>& p, size_t f) {
    p.w.init(uniform_init<T>(rng, {f, f}, f));
    p.b.init(Tensor<T>::zeros({f}));
}

} // namespace detail

// Instantiate all parameters for a configuration. All randomness comes from
// the seed; the same (config, seed) pair always yields bit-identical tensors.
template <typename T>
ModelParams<T> build_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
    ModelParams<T> p;
    p.config = config;

    const size_t Ff = config.frontend_filters;
    const size_t K = config.frontend_filter_len;
    if (config.frontend == Frontend::sinc_conv) {
        // Cutoffs start mel-spaced between f_min and just below Nyquist; the
        // band parameter stores the spacing above the minimum band.
        SincP<T> s;
        const double lo = kSincFMin;
        const double hi = 0.5 * static_cast<double>(config.sample_rate) - 2.0 * kSincFMin;
        const double m0 = detail::hz_to_mel(lo), m1 = detail::hz_to_mel(hi);
        std::vector<double> edges(Ff + 1);
        for (size_t i = 0; i <= Ff; ++i)
            edges[i] = detail::mel_to_hz(m0 + (m1 - m0) * static_cast<double>(i) /
                                                  static_cast<double>(Ff));
        Tensor<T> f_low = Tensor<T>::zeros({Ff});
        Tensor<T> bw = Tensor<T>::zeros({Ff});
        for (size_t i = 0; i < Ff; ++i) {
            f_low.data[i] = static_cast<T>(edges[i] - kSincFMin);
            bw.data[i] = static_cast<T>(std::max(edges[i + 1] - edges[i] - kSincFMin, 0.0));
        }
        s.f_low.init(std::move(f_low));
        s.bandwidth.init(std::move(bw));
        p.front_sinc = std::move(s);
    } else {
        ConvP<T> c;
        detail::init_conv(rng, c, K, 1, Ff);
        p.front_conv = std::move(c);
    }
    detail::init_bn(p.front_bn, Ff);

    size_t in_f = Ff;
    bool first = true;
    for (const BlockSpec& spec : config.block_group_specs) {
        for (size_t r = 0; r < spec.repeat; ++r) {
            BlockP<T> blk;
            blk.in_filters = in_f;
            blk.out_filters = spec.filters;
            blk.has_pre = !first;
            if (blk.has_pre) {
                BnP<T> bn;
                detail::init_bn(bn, in_f);
                blk.bn1 = std::move(bn);
            }
            detail::init_conv(rng, blk.conv1, 3, in_f, spec.filters);
            detail::init_bn(blk.bn2, spec.filters);
            detail::init_conv(rng, blk.conv2, 3, spec.filters, spec.filters);
            if (in_f != spec.filters) {
                ConvP<T> skip;
                detail::init_conv(rng, skip, 1, in_f, spec.filters);
                blk.skip = std::move(skip);
            }
            if (config.fms_kind != FmsKind::none) {
                FmsP<T> f1;
                detail::init_fms(rng, f1, spec.filters);
                blk.fms1 = std::move(f1);
                if (config.fms_kind == FmsKind::mul_add_separate) {
                    FmsP<T> f2;
                    detail::init_fms(rng, f2, spec.filters);
                    blk.fms2 = std::move(f2);
                }
            }
            p.blocks.push_back(std::move(blk));
            in_f = spec.filters;
            first = false;
        }
    }

    const size_t H = config.gru_hidden;
    p.gru.wz.init(detail::uniform_init<T>(rng, {in_f, H}, in_f));
    p.gru.uz.init(detail::uniform_init<T>(rng, {H, H}, H));
    p.gru.bz.init(Tensor<T>::zeros({H}));
    p.gru.wr.init(detail::uniform_init<T>(rng, {in_f, H}, in_f));
    p.gru.ur.init(detail::uniform_init<T>(rng, {H, H}, H));
    p.gru.br.init(Tensor<T>::zeros({H}));
    p.gru.wh.init(detail::uniform_init<T>(rng, {in_f, H}, in_f));
    p.gru.uh.init(detail::uniform_init<T>(rng, {H, H}, H));
    p.gru.bh.init(Tensor<T>::zeros({H}));

    p.embed.w.init(detail::uniform_init<T>(rng, {H, config.embedding_dim}, H));
    p.embed.b.init(Tensor<T>::zeros({config.embedding_dim}));
    p.out.w.init(
        detail::uniform_init<T>(rng, {config.embedding_dim, config.n_speakers},
                                config.embedding_dim));
    p.out.b.init(Tensor<T>::zeros({config.n_speakers}));
    return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct ShapeTrace {
    std::pair<size_t, size_t> frontend;                // (T,F) after the front-end stack
    std::vector<std::pair<size_t, size_t>> groups;     // (T,F) after each block group
    size_t gru = 0;
    size_t embedding = 0;
};

template <typename T>
struct ModelForward {
    NodeId embedding;
    NodeId logits;
    ShapeTrace trace;
};

// Forward of a batch of preprocessed crops, input [B, input_len]. In
// training mode parameter leaves accumulate gradients and BN updates running
// statistics; in inference mode BN uses the stored statistics.
template <typename T>
ModelForward<T> model_forward(Tape<T>& tp, ModelParams<T>& p, const Tensor<T>& input,
                              bool training) {
    const ModelConfig& cfg = p.config;
    if (input.rank() != 2 || input.shape[1] != cfg.input_len)
        throw ShapeError("model input must be [B," + std::to_string(cfg.input_len) + "], got " +
                         shape_str(input.shape));
    const size_t B = input.shape[0];
    const T mom = static_cast<T>(kBnMomentum);
    const T eps = static_cast<T>(kBnEpsilon);
    const T slope = static_cast<T>(kLeakySlope);

    auto leaf = [&](ParamTensor<T>& q) {
        return tp.leaf(q.v, training ? &q.g : nullptr, training);
    };
    auto bn_layer = [&](NodeId x, BnP<T>& bn) {
        return batchnorm(tp, x, leaf(bn.gamma), leaf(bn.beta), bn.running, mom, eps, training);
    };

    ModelForward<T> fw;
    NodeId x = tp.reshape(tp.leaf(input, nullptr, false), {B, cfg.input_len, 1});

    // Front-end: (sinc-)conv, pool, BN, activation. Symmetric padding keeps
    // T equal to input_len ahead of the pool.
    const size_t pad = (cfg.frontend_filter_len - 1) / 2;
    NodeId y;
    if (cfg.frontend == Frontend::sinc_conv) {
        SincNodes<T> sn =
            materialize_sinc(tp, leaf(p.front_sinc->f_low), leaf(p.front_sinc->bandwidth),
                             cfg.frontend_filter_len, static_cast<double>(cfg.sample_rate));
        y = conv1d_raw(tp, x, sn.kernels, 1, pad);
    } else {
        y = conv1d(tp, x, leaf(p.front_conv->w), leaf(p.front_conv->b), size_t(1), pad);
    }
    y = maxpool1d(tp, y, cfg.pool_width);
    y = bn_layer(y, p.front_bn);
    y = tp.leaky_relu(y, slope);
    fw.trace.frontend = {tp.value(y).shape[1], tp.value(y).shape[2]};

    size_t block_idx = 0;
    for (const BlockSpec& spec : cfg.block_group_specs) {
        for (size_t r = 0; r < spec.repeat; ++r, ++block_idx) {
            BlockP<T>& blk = p.blocks[block_idx];
            NodeId in = y;
            NodeId body = in;
            if (blk.has_pre) body = tp.leaky_relu(bn_layer(body, *blk.bn1), slope);
            body = conv1d(tp, body, leaf(blk.conv1.w), leaf(blk.conv1.b), size_t(1), size_t(1));
            body = tp.leaky_relu(bn_layer(body, blk.bn2), slope);
            body = conv1d(tp, body, leaf(blk.conv2.w), leaf(blk.conv2.b), size_t(1), size_t(1));
            NodeId shortcut =
                blk.skip ? conv1d(tp, in, leaf(blk.skip->w), leaf(blk.skip->b), size_t(1),
                                  size_t(0))
                         : in;
            y = tp.add(body, shortcut);
            y = maxpool1d(tp, y, cfg.pool_width);
            if (blk.fms1) {
                FmsParamNodes<T> fn;
                fn.w1 = leaf(blk.fms1->w);
                fn.b1 = leaf(blk.fms1->b);
                if (blk.fms2) {
                    fn.w2 = leaf(blk.fms2->w);
                    fn.b2 = leaf(blk.fms2->b);
                    fn.has_second = true;
                }
                y = apply_fms(tp, y, cfg.fms_kind, fn);
            }
        }
        fw.trace.groups.push_back({tp.value(y).shape[1], tp.value(y).shape[2]});
    }

    GruNodes gn{leaf(p.gru.wz), leaf(p.gru.uz), leaf(p.gru.bz),
                leaf(p.gru.wr), leaf(p.gru.ur), leaf(p.gru.br),
                leaf(p.gru.wh), leaf(p.gru.uh), leaf(p.gru.bh)};
    NodeId h = gru_forward(tp, y, gn, cfg.gru_hidden);
    fw.trace.gru = tp.value(h).shape[1];

    fw.embedding = fully_connected(tp, h, leaf(p.embed.w), leaf(p.embed.b));
    fw.trace.embedding = tp.value(fw.embedding).shape[1];
    fw.logits = fully_connected(tp, fw.embedding, leaf(p.out.w), leaf(p.out.b));
    return fw;
}

// ---------------------------------------------------------------------------
// Embedding extraction
// ---------------------------------------------------------------------------

// Waveform-level preprocessing is tied to the front-end: pre-emphasis for the
// plain convolution, per-crop layer normalization (and no pre-emphasis) for
// the sinc front-end.
template <typename T>
std::vector<T> extract_embedding(ModelParams<T>& params, const Waveform& w, bool tta,
                                 double overlap = kTtaOverlap) {
    const ModelConfig& cfg = params.config;
    const size_t L = cfg.input_len;
    Waveform pre = cfg.frontend == Frontend::plain_conv ? pre_emphasis(w, kPreEmphasisAlpha) : w;
    CropPlan plan;
    if (tta) {
        plan = plan_crops(pre.size(), L, overlap);
    } else {
        plan.crop_len = L;
        plan.starts = {0};
    }

    std::vector<double> acc(cfg.embedding_dim, 0.0);
    for (size_t start : plan.starts) {
        std::vector<double> crop = extract_crop(pre, start, L);
        if (cfg.frontend == Frontend::sinc_conv) {
            Waveform cw{std::move(crop), pre.sample_rate};
            crop = layer_norm_waveform(cw, kLayerNormEpsilon).samples;
        }
        Tensor<T> x = Tensor<T>::zeros({1, L});
        for (size_t i = 0; i < L; ++i) x.data[i] = static_cast<T>(crop[i]);
        Tape<T> tp;
        ModelForward<T> fw = model_forward(tp, params, x, false);
        const Tensor<T>& e = tp.value(fw.embedding);
        for (size_t i = 0; i < cfg.embedding_dim; ++i)
            acc[i] += static_cast<double>(e.data[i]);
    }
    std::vector<T> emb(cfg.embedding_dim);
    const double n = static_cast<double>(plan.starts.size());
    for (size_t i = 0; i < emb.size(); ++i) emb[i] = static_cast<T>(acc[i] / n);
    return emb;
}

// ---------------------------------------------------------------------------
// Serialization: "RWN2" | u16 version | config text | tensor records | crc32
// Tensor record: name | u32 rank | u64 dims | f32 data (little-endian).
// ---------------------------------------------------------------------------

inline constexpr uint16_t kWeightFileVersion = 1;

template <typename T>
void save_model(ModelParams<T>& params, const std::string& path) {
    BinWriter w;
    w.bytes("RWN2", 4);
    w.u16(kWeightFileVersion);
    w.str(params.config.to_text());
    uint32_t count = 0;
    params.for_each_tensor(
        [&](const std::string&, Tensor<T>&, Tensor<T>*, bool) { ++count; });
    w.u32(count);
    params.for_each_tensor([&](const std::string& name, Tensor<T>& t, Tensor<T>*, bool) {
        w.str(name);
        w.u32(static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape) w.u64(d);
        for (T v : t.data) w.f32(static_cast<float>(v));
    });
    w.u32(crc32(w.buf.data(), w.buf.size()));
    atomic_write_file(path, w.buf);
}

template <typename T>
ModelParams<T> load_model(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    if (bytes.size() < 10) throw FormatError(path + ": file too small");
    const uint32_t expect = crc32(bytes.data(), bytes.size() - 4);
    BinReader r(bytes.data(), bytes.size());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "RWN2", 4) != 0) throw FormatError(path + ": bad magic");
    const uint16_t version = r.u16();
    if (version != kWeightFileVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    {
        BinReader tail(bytes.data() + bytes.size() - 4, 4);
        if (tail.u32() != expect) throw FormatError(path + ": checksum mismatch");
    }
    const ModelConfig config = ModelConfig::from_text(r.str());
    const uint32_t count = r.u32();

    std::map<std::string, Tensor<T>> records;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = r.u64();
        Tensor<T> t = Tensor<T>::zeros(shape);
        for (T& v : t.data) v = static_cast<T>(r.f32());
        records.emplace(name, std::move(t));
    }

    ModelParams<T> params = build_model<T>(config, 0);
    params.for_each_tensor([&](const std::string& name, Tensor<T>& t, Tensor<T>*, bool) {
        auto it = records.find(name);
        if (it == records.end()) throw ConfigError(path + ": missing tensor " + name);
        if (it->second.shape != t.shape)
            throw ConfigError(path + ": tensor " + name + " has shape " +
                              shape_str(it->second.shape) + ", config implies " +
                              shape_str(t.shape));
        t = std::move(it->second);
        records.erase(it);
    });
    if (!records.empty())
        throw ConfigError(path + ": unexpected tensor " + records.begin()->first);
    params.zero_grads();
    return params;
}

} // namespace rawnet
