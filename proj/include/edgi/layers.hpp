#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "edgi/schema.hpp"
#include "edgi/tensor.hpp"

namespace edgi {

// Layers over the internal representation [H, n, n_c, 4] (slot 0 scalar,
// slots 1-3 vector). Each layer acts on exactly one symmetry axis and leaves
// the others untouched. No layer adds a bias to vector slots.

template <class S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

namespace detail {

template <class S>
Tensor<S> named_param(ParamList<S>& out, const std::string& name, Tensor<S> t) {
    out.emplace_back(name, t);
    return t;
}

}  // namespace detail

// Split the internal tensor into its scalar [H,n,C] and vector [H,n,C,3] parts.
template <class S>
Tensor<S> internal_scalars(const Tensor<S>& x) {
    auto s = slice(x, 3, 0, 1);
    return reshape(s, {x.dim(0), x.dim(1), x.dim(2)});
}

template <class S>
Tensor<S> internal_vectors(const Tensor<S>& x) {
    return slice(x, 3, 1, 3);
}

template <class S>
Tensor<S> join_internal(const Tensor<S>& scalars, const Tensor<S>& vectors) {
    auto s4 = reshape(scalars, {scalars.dim(0), scalars.dim(1), scalars.dim(2), Dim(1)});
    return concat<S>({s4, vectors}, 3);
}

// ----------------------------------------------------------------------------
// Temporal layer: bias-free 1D convolution along time, per object and per
// geometric slot, mixing only channels. Kernel size 5 in the network.
// ----------------------------------------------------------------------------

template <class S>
struct TemporalConv {
    Tensor<S> kernel;  // [C_out, C_in, K]
    PadMode pad_mode = PadMode::kZero;

    static TemporalConv init(Dim c_in, Dim c_out, Dim k, Rng& rng, PadMode mode) {
        TemporalConv layer;
        S std_dev = static_cast<S>(1.0 / std::sqrt(static_cast<double>(c_in * k)));
        layer.kernel = Tensor<S>::randn({c_out, c_in, k}, rng, std_dev, true);
        layer.pad_mode = mode;
        return layer;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        // [H,n,C,4] -> [n,4,C,H] -> conv over last axis -> back
        auto xt = permute(x, {1, 3, 2, 0});
        auto yt = conv1d(xt, kernel, pad_mode);
        return permute(yt, {3, 0, 2, 1});
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".kernel", kernel);
    }
};

// ----------------------------------------------------------------------------
// Object layer: permutation-equivariant multi-head self-attention over the
// object axis. Keys/queries/values are bias-free channel maps applied per
// (t, o, slot); the logit contracts channel and geometric slots jointly, so
// each head's weight is a sum of scalar products and vector inner products
// and therefore SO(3)-invariant.
// ----------------------------------------------------------------------------

template <class S>
struct ObjectAttention {
    std::vector<Tensor<S>> wk, wq, wv;  // per head [head_dim, C]
    Tensor<S> w_out;                    // [C, heads*head_dim]
    Dim head_dim = 32;

    static ObjectAttention init(Dim c, Dim heads, Dim head_dim, Rng& rng) {
        ObjectAttention layer;
        layer.head_dim = head_dim;
        S std_in = static_cast<S>(1.0 / std::sqrt(static_cast<double>(c)));
        for (Dim h = 0; h < heads; ++h) {
            layer.wk.push_back(Tensor<S>::randn({head_dim, c}, rng, std_in, true));
            layer.wq.push_back(Tensor<S>::randn({head_dim, c}, rng, std_in, true));
            layer.wv.push_back(Tensor<S>::randn({head_dim, c}, rng, std_in, true));
        }
        S std_out = static_cast<S>(1.0 / std::sqrt(static_cast<double>(heads * head_dim)));
        layer.w_out = Tensor<S>::randn({c, heads * head_dim}, rng, std_out, true);
        return layer;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        Dim H = x.dim(0), n = x.dim(1);
        auto xp = permute(x, {0, 1, 3, 2});  // [H,n,4,C]
        std::vector<Tensor<S>> heads;
        S logit_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim * 4)));
        for (size_t h = 0; h < wk.size(); ++h) {
            auto k = matmul(xp, permute(wk[h], {1, 0}));  // [H,n,4,D]
            auto q = matmul(xp, permute(wq[h], {1, 0}));
            auto v = matmul(xp, permute(wv[h], {1, 0}));
            auto kr = reshape(k, {H, n, 4 * head_dim});
            auto qr = reshape(q, {H, n, 4 * head_dim});
            auto vr = reshape(v, {H, n, 4 * head_dim});
            auto logits = scale(matmul(qr, permute(kr, {0, 2, 1})), logit_scale);  // [H,n,n]
            auto attn = softmax(logits, 2);
            auto mixed = matmul(attn, vr);               // [H,n,4D]
            heads.push_back(reshape(mixed, {H, n, Dim(4), head_dim}));
        }
        auto joined = concat<S>(heads, 3);                    // [H,n,4,heads*D]
        auto projected = matmul(joined, permute(w_out, {1, 0}));  // [H,n,4,C]
        return permute(projected, {0, 1, 3, 2});
    }

    // Attention weights of head 0, for invariance tests: [H, n, n].
    Tensor<S> head_logits(const Tensor<S>& x) const {
        Dim H = x.dim(0), n = x.dim(1);
        auto xp = permute(x, {0, 1, 3, 2});
        auto k = reshape(matmul(xp, permute(wk[0], {1, 0})), {H, n, 4 * head_dim});
        auto q = reshape(matmul(xp, permute(wq[0], {1, 0})), {H, n, 4 * head_dim});
        return matmul(q, permute(k, {0, 2, 1}));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        for (size_t h = 0; h < wk.size(); ++h) {
            out.emplace_back(prefix + ".k" + std::to_string(h), wk[h]);
            out.emplace_back(prefix + ".q" + std::to_string(h), wq[h]);
            out.emplace_back(prefix + ".v" + std::to_string(h), wv[h]);
        }
        out.emplace_back(prefix + ".out", w_out);
    }
};

// ----------------------------------------------------------------------------
// Two-hidden-layer MLP on invariants (biases allowed: inputs are rho_0).
// ----------------------------------------------------------------------------

template <class S>
struct InvariantMlp {
    Tensor<S> w1, b1, w2, b2, w3, b3;

    static InvariantMlp init(Dim d_in, Dim hidden, Dim d_out, Rng& rng, S out_scale = S(1)) {
        InvariantMlp mlp;
        auto std_of = [](Dim fan_in) {
            return static_cast<S>(1.0 / std::sqrt(static_cast<double>(fan_in)));
        };
        mlp.w1 = Tensor<S>::randn({hidden, d_in}, rng, std_of(d_in), true);
        mlp.b1 = Tensor<S>::leaf({hidden}, true);
        mlp.w2 = Tensor<S>::randn({hidden, hidden}, rng, std_of(hidden), true);
        mlp.b2 = Tensor<S>::leaf({hidden}, true);
        mlp.w3 = Tensor<S>::randn({d_out, hidden}, rng,
                                  static_cast<S>(out_scale) * std_of(hidden), true);
        mlp.b3 = Tensor<S>::leaf({d_out}, true);
        return mlp;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        auto h1 = relu(add(matmul(x, permute(w1, {1, 0})), b1));
        auto h2 = relu(add(matmul(h1, permute(w2, {1, 0})), b2));
        return add(matmul(h2, permute(w3, {1, 0})), b3);
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".w1", w1);
        out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2);
        out.emplace_back(prefix + ".b2", b2);
        out.emplace_back(prefix + ".w3", w3);
        out.emplace_back(prefix + ".b3", b3);
    }
};

// ----------------------------------------------------------------------------
// Geometric layer: the SO(3)-equivariant scalar/vector interaction. Vectors
// are down-projected to 16 channels, the complete invariant set is the input
// scalars plus the 136 upper-triangle Gram entries of those 16 vectors; MLPs
// phi and psi emit output scalars and vector-combination coefficients; a
// residual adds the inputs.
// ----------------------------------------------------------------------------

template <class S>
struct GeometricLayer {
    Tensor<S> v_down;  // [16, C_v]
    Tensor<S> v_up;    // [C_v, 16]
    InvariantMlp<S> phi;  // invariants -> C_s scalars
    InvariantMlp<S> psi;  // invariants -> 16*16 coefficients
    Dim n_down = 16;

    static GeometricLayer init(Dim c_scalar, Dim c_vector, Dim hidden, Rng& rng) {
        GeometricLayer layer;
        Dim nd = layer.n_down;
        Dim n_inv = c_scalar + nd * (nd + 1) / 2;
        S std_down = static_cast<S>(1.0 / std::sqrt(static_cast<double>(c_vector)));
        layer.v_down = Tensor<S>::randn({nd, c_vector}, rng, std_down, true);
        S std_up = static_cast<S>(1.0 / std::sqrt(static_cast<double>(nd)));
        layer.v_up = Tensor<S>::randn({c_vector, nd}, rng, std_up, true);
        layer.phi = InvariantMlp<S>::init(n_inv, hidden, c_scalar, rng, S(0.1));
        layer.psi = InvariantMlp<S>::init(n_inv, hidden, nd * nd, rng, S(0.1));
        return layer;
    }

    // scalars [H,n,Cs], vectors [H,n,Cv,3] -> same shapes, residual included.
    std::pair<Tensor<S>, Tensor<S>> forward_parts(const Tensor<S>& scalars,
                                                  const Tensor<S>& vectors) const {
        Dim H = vectors.dim(0), n = vectors.dim(1);
        auto vt = permute(vectors, {0, 1, 3, 2});              // [H,n,3,Cv]
        auto vd = permute(matmul(vt, permute(v_down, {1, 0})), {0, 1, 3, 2});  // [H,n,16,3]
        auto gram = matmul(vd, permute(vd, {0, 1, 3, 2}));      // [H,n,16,16]
        auto invariants = concat<S>({scalars, triu_vec(gram)}, 2);
        auto s_delta = phi.forward(invariants);
        auto coeffs = reshape(psi.forward(invariants), {H, n, n_down, n_down});
        auto v_mixed = matmul(coeffs, vd);                      // [H,n,16,3]
        auto v_delta = permute(matmul(permute(v_mixed, {0, 1, 3, 2}), permute(v_up, {1, 0})),
                               {0, 1, 3, 2});                   // [H,n,Cv,3]
        return {add(scalars, s_delta), add(vectors, v_delta)};
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        auto [s, v] = forward_parts(internal_scalars(x), internal_vectors(x));
        return join_internal(s, v);
    }

    // The invariant set alone, for the bit-identical-scalars check.
    Tensor<S> invariants_of(const Tensor<S>& x) const {
        auto vectors = internal_vectors(x);
        auto vt = permute(vectors, {0, 1, 3, 2});
        auto vd = permute(matmul(vt, permute(v_down, {1, 0})), {0, 1, 3, 2});
        auto gram = matmul(vd, permute(vd, {0, 1, 3, 2}));
        return concat<S>({internal_scalars(x), triu_vec(gram)}, 2);
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".v_down", v_down);
        out.emplace_back(prefix + ".v_up", v_up);
        phi.collect(prefix + ".phi", out);
        psi.collect(prefix + ".psi", out);
    }
};

// ----------------------------------------------------------------------------
// Equivariant normalization: one global scale per sample, no mean shift.
// ----------------------------------------------------------------------------

template <class S>
Tensor<S> equi_norm(const Tensor<S>& x, S eps_guard = S(1e-5)) {
    auto ms = mean_all(square(x));
    auto denom = sqrt_op(add(ms, Tensor<S>::scalar(eps_guard)));
    return div(x, denom);
}

// ----------------------------------------------------------------------------
// Context block: sinusoidal diffusion-step embedding concatenated with the
// conditioning-mask summary, Mish, linear, then embedded into scalar slots
// only (zero elsewhere keeps the increment rotation-invariant).
// ----------------------------------------------------------------------------

constexpr Dim kStepEmbedDim = 32;

template <class S>
std::vector<S> sinusoidal_step_embedding(Dim step) {
    std::vector<S> emb(static_cast<size_t>(kStepEmbedDim));
    Dim half = kStepEmbedDim / 2;
    for (Dim i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(1e4) * static_cast<double>(i) / static_cast<double>(half - 1));
        emb[static_cast<size_t>(i)] = static_cast<S>(std::sin(static_cast<double>(step) * freq));
        emb[static_cast<size_t>(half + i)] = static_cast<S>(std::cos(static_cast<double>(step) * freq));
    }
    return emb;
}

template <class S>
struct ContextBlock {
    Tensor<S> w;  // [C, kStepEmbedDim + 1]
    Tensor<S> b;  // [C]

    static ContextBlock init(Dim c, Rng& rng) {
        ContextBlock block;
        S std_w = static_cast<S>(1.0 / std::sqrt(static_cast<double>(kStepEmbedDim + 1)));
        block.w = Tensor<S>::randn({c, kStepEmbedDim + 1}, rng, std_w, true);
        block.b = Tensor<S>::leaf({c}, true);
        return block;
    }

    // Channel increment [1,1,C,4] with zero vector slots; broadcasts over (t,o).
    Tensor<S> forward(Dim step, S mask_summary) const {
        auto emb = sinusoidal_step_embedding<S>(step);
        emb.push_back(mask_summary);
        auto ctx = Tensor<S>::from({Dim(1), kStepEmbedDim + 1}, std::move(emb));
        auto hidden = mish(ctx);
        auto out = add(matmul(hidden, permute(w, {1, 0})), b);  // [1, C]
        Dim c = w.shape()[0];
        auto s4 = reshape(out, {Dim(1), Dim(1), c, Dim(1)});
        return concat<S>({s4, Tensor<S>::zeros({1, 1, c, 3})}, 3);
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

// ----------------------------------------------------------------------------
// Residual linear attention over time. Keys and queries are built from
// SO(3)-invariant features (scalar slots plus vector norms); values are a
// bias-free per-slot channel map. The key softmax runs over the time axis, so
// attention aggregates globally over time with invariant weights.
// ----------------------------------------------------------------------------

template <class S>
struct LinearTimeAttention {
    Tensor<S> wk, wq;  // [d_attn, 2C]
    Tensor<S> wv;      // [C, C]
    Dim d_attn = 16;

    static LinearTimeAttention init(Dim c, Rng& rng) {
        LinearTimeAttention layer;
        S std_kq = static_cast<S>(1.0 / std::sqrt(static_cast<double>(2 * c)));
        layer.wk = Tensor<S>::randn({layer.d_attn, 2 * c}, rng, std_kq, true);
        layer.wq = Tensor<S>::randn({layer.d_attn, 2 * c}, rng, std_kq, true);
        layer.wv = Tensor<S>::randn({c, c}, rng, static_cast<S>(0.3 / std::sqrt(static_cast<double>(c))), true);
        return layer;
    }

    Tensor<S> invariant_features(const Tensor<S>& x) const {
        auto v = internal_vectors(x);
        auto norms = sqrt_op(add(sum(square(v), 3), Tensor<S>::scalar(S(1e-12))));
        return concat<S>({internal_scalars(x), norms}, 2);  // [H,n,2C]
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        Dim H = x.dim(0), n = x.dim(1), c = x.dim(2);
        auto feats = invariant_features(x);
        auto k = softmax(matmul(feats, permute(wk, {1, 0})), 0);  // [H,n,A] over time
        auto q = scale(matmul(feats, permute(wq, {1, 0})),
                       static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_attn))));
        auto v = matmul(permute(x, {0, 1, 3, 2}), permute(wv, {1, 0}));  // [H,n,4,C]
        auto vr = permute(reshape(v, {H, n, 4 * c}), {1, 0, 2});         // [n,H,4C]
        auto kt = permute(k, {1, 2, 0});                                  // [n,A,H]
        auto context = matmul(kt, vr);                                    // [n,A,4C]
        auto out = matmul(permute(q, {1, 0, 2}), context);                // [n,H,4C]
        auto y = permute(reshape(out, {n, H, Dim(4), c}), {1, 0, 3, 2});  // [H,n,C,4]
        return add(x, y);
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".k", wk);
        out.emplace_back(prefix + ".q", wq);
        out.emplace_back(prefix + ".v", wv);
    }
};

// ----------------------------------------------------------------------------
// Non-equivariant counterparts for the ablation model: attention projections
// act on the flattened 4-slot feature (head width 8 keeps parameter parity
// with the per-slot 32-wide equivariant heads), and the geometric layer is
// replaced by a per-(t,o) MLP on the flattened features.
// ----------------------------------------------------------------------------

template <class S>
struct FlatObjectAttention {
    std::vector<Tensor<S>> wk, wq, wv;  // per head [head_dim, 4C]
    Tensor<S> w_out;                    // [4C, heads*head_dim]
    Dim head_dim = 8;

    static FlatObjectAttention init(Dim c, Dim heads, Dim head_dim, Rng& rng) {
        FlatObjectAttention layer;
        layer.head_dim = head_dim;
        S std_in = static_cast<S>(1.0 / std::sqrt(static_cast<double>(4 * c)));
        for (Dim h = 0; h < heads; ++h) {
            layer.wk.push_back(Tensor<S>::randn({head_dim, 4 * c}, rng, std_in, true));
            layer.wq.push_back(Tensor<S>::randn({head_dim, 4 * c}, rng, std_in, true));
            layer.wv.push_back(Tensor<S>::randn({head_dim, 4 * c}, rng, std_in, true));
        }
        S std_out = static_cast<S>(1.0 / std::sqrt(static_cast<double>(heads * head_dim)));
        layer.w_out = Tensor<S>::randn({4 * c, heads * head_dim}, rng, std_out, true);
        return layer;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        Dim H = x.dim(0), n = x.dim(1), c = x.dim(2);
        auto xf = reshape(x, {H, n, 4 * c});  // raw flattened features
        std::vector<Tensor<S>> heads;
        S logit_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim)));
        for (size_t h = 0; h < wk.size(); ++h) {
            auto k = matmul(xf, permute(wk[h], {1, 0}));
            auto q = matmul(xf, permute(wq[h], {1, 0}));
            auto v = matmul(xf, permute(wv[h], {1, 0}));
            auto logits = scale(matmul(q, permute(k, {0, 2, 1})), logit_scale);
            heads.push_back(matmul(softmax(logits, 2), v));
        }
        auto joined = concat<S>(heads, 2);
        auto projected = matmul(joined, permute(w_out, {1, 0}));  // [H,n,4C]
        return reshape(projected, {H, n, c, Dim(4)});
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        for (size_t h = 0; h < wk.size(); ++h) {
            out.emplace_back(prefix + ".k" + std::to_string(h), wk[h]);
            out.emplace_back(prefix + ".q" + std::to_string(h), wq[h]);
            out.emplace_back(prefix + ".v" + std::to_string(h), wv[h]);
        }
        out.emplace_back(prefix + ".out", w_out);
    }
};

template <class S>
struct FlatMlpLayer {
    InvariantMlp<S> mlp;  // 4C -> hidden -> hidden -> 4C

    static FlatMlpLayer init(Dim c, Dim hidden, Rng& rng) {
        FlatMlpLayer layer;
        layer.mlp = InvariantMlp<S>::init(4 * c, hidden, 4 * c, rng, S(0.1));
        return layer;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        Dim H = x.dim(0), n = x.dim(1), c = x.dim(2);
        auto xf = reshape(x, {H, n, 4 * c});
        auto y = add(xf, mlp.forward(xf));
        return reshape(y, {H, n, c, Dim(4)});
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        mlp.collect(prefix + ".mlp", out);
    }
};

}  // namespace edgi
