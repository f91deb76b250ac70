#pragma once

#include <string>

#include "rawnet/tape.hpp"

namespace rawnet {

// Filter-wise feature map scaling. A per-filter scale vector in (0,1) is
// derived from the feature map itself (global average pooling over time,
// one fully-connected layer, sigmoid) and applied back onto the map.
enum class FmsKind {
    none,
    add,              // c'_f = c_f + s_f
    mul,              // c'_f = c_f * s_f
    add_then_mul,     // c'_f = (c_f + s_f) * s_f
    mul_then_add,     // c'_f = c_f * s_f + s_f
    mul_add_separate, // c'_f = c_f * s1_f + s2_f
};

inline std::string fms_kind_name(FmsKind k) {
    switch (k) {
        case FmsKind::none: return "none";
        case FmsKind::add: return "add";
        case FmsKind::mul: return "mul";
        case FmsKind::add_then_mul: return "add_mul";
        case FmsKind::mul_then_add: return "mul_add";
        case FmsKind::mul_add_separate: return "mul_add_sep";
    }
    return "none";
}

inline FmsKind parse_fms_kind(const std::string& s) {
    if (s == "none") return FmsKind::none;
    if (s == "add") return FmsKind::add;
    if (s == "mul") return FmsKind::mul;
    if (s == "add_mul") return FmsKind::add_then_mul;
    if (s == "mul_add") return FmsKind::mul_then_add;
    if (s == "mul_add_sep") return FmsKind::mul_add_separate;
    throw ConfigError("unknown fms_kind '" + s + "'");
}

// s = sigmoid(mean_over_time(c) W + b); c [B,T,F], W [F,F], b [F] -> [B,F].
// Every entry lies strictly in (0,1).
template <typename T>
NodeId derive_scale(Tape<T>& tp, NodeId c, NodeId w, NodeId b) {
    const Tensor<T>& C = tp.value(c);
    if (C.rank() != 3) throw ShapeError("derive_scale expects [B,T,F]");
    const size_t F = C.shape[2];
    const Tensor<T>& W = tp.value(w);
    if (W.rank() != 2 || W.shape[0] != F || W.shape[1] != F)
        throw ShapeError("derive_scale: weights must be [F,F] with F=" + std::to_string(F));
    NodeId pooled = tp.reduce_mean(c, 1); // [B,F]
    return tp.sigmoid(tp.add(tp.matmul(pooled, w), b));
}

template <typename T>
struct FmsParamNodes {
    NodeId w1, b1;
    // Second scale vector, used by mul_add_separate only.
    NodeId w2{}, b2{};
    bool has_second = false;
};

// Scale vectors are broadcast along time: every combination pairs c[b,t,f]
// with s[b,f]. The shared-vector kinds compute s once per call.
template <typename T>
NodeId apply_fms(Tape<T>& tp, NodeId c, FmsKind kind, const FmsParamNodes<T>& p) {
    if (kind == FmsKind::none) return c;
    NodeId s = derive_scale(tp, c, p.w1, p.b1);
    switch (kind) {
        case FmsKind::add: return tp.add(c, s);
        case FmsKind::mul: return tp.mul(c, s);
        case FmsKind::add_then_mul: return tp.mul(tp.add(c, s), s);
        case FmsKind::mul_then_add: return tp.add(tp.mul(c, s), s);
        case FmsKind::mul_add_separate: {
            if (!p.has_second)
                throw ShapeError("mul_add_sep requires a second FMS parameter set");
            NodeId s2 = derive_scale(tp, c, p.w2, p.b2);
            return tp.add(tp.mul(c, s), s2);
        }
        case FmsKind::none: break;
    }
    return c;
}

} // namespace rawnet
