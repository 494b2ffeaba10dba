#pragma once

#include <string>
#include <vector>

#include "edgi/layers.hpp"
#include "edgi/schema.hpp"
#include "edgi/tensor.hpp"

namespace edgi {

// Representation mixer: maps the heterogeneous data representation (scalar and
// vector features, per-object and global) into the internal representation
// [H, n, n_c, 4]. The channel maps are shared across objects; per-object
// weights would make objects distinguishable and break permutation
// equivariance. At concatenation initialization channel c carries exactly one
// input feature, in the order: object scalars, global scalars (scalar slot),
// then object vectors, global vectors (vector slots).

template <class S>
struct MixerParams {
    Tensor<S> w_obj_scalar;   // [n_c, n_s_object]
    Tensor<S> w_obj_vector;   // [n_c, n_v_object]
    Tensor<S> w_glob_scalar;  // [n_c, n_s_global]
    Tensor<S> w_glob_vector;  // [n_c, n_v_global]
    Dim n_channels = 0;

    static Dim concat_channels(const TrajectorySchema& sc) {
        return sc.n_s_object() + sc.n_s_global() + sc.n_v_object() + sc.n_v_global();
    }

    // Block-selection matrices realizing exact feature concatenation, plus
    // optional zero-mean tie-breaking noise.
    static MixerParams init_concat(const TrajectorySchema& sc, Dim n_c, Rng& rng,
                                   S noise_scale = S(1e-3)) {
        if (n_c < concat_channels(sc))
            throw std::invalid_argument("mixer: n_c must be >= total feature count for concat init");
        MixerParams p;
        p.n_channels = n_c;
        auto build = [&](Dim n_f, Dim channel_offset) {
            auto w = Tensor<S>::leaf({n_c, n_f}, true);
            for (Dim c = 0; c < n_c; ++c)
                for (Dim f = 0; f < n_f; ++f) {
                    S v = (c == channel_offset + f) ? S(1) : S(0);
                    if (noise_scale != S(0)) v += static_cast<S>(rng.normal()) * noise_scale;
                    w.value()[static_cast<size_t>(c * n_f + f)] = v;
                }
            return w;
        };
        Dim off = 0;
        p.w_obj_scalar = build(sc.n_s_object(), off);
        off += sc.n_s_object();
        p.w_glob_scalar = build(sc.n_s_global(), off);
        off += sc.n_s_global();
        p.w_obj_vector = build(sc.n_v_object(), off);
        off += sc.n_v_object();
        p.w_glob_vector = build(sc.n_v_global(), off);
        return p;
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".obj_scalar", w_obj_scalar);
        out.emplace_back(prefix + ".obj_vector", w_obj_vector);
        out.emplace_back(prefix + ".glob_scalar", w_glob_scalar);
        out.emplace_back(prefix + ".glob_vector", w_glob_vector);
    }
};

namespace detail {

// Slice the flat [H, D] trajectory into its four blocks.
template <class S>
struct FlatBlocks {
    Tensor<S> object_scalars;  // [H, n, n_s_o]
    Tensor<S> object_vectors;  // [H, n, n_v_o, 3]
    Tensor<S> global_scalars;  // [H, n_s_g]
    Tensor<S> global_vectors;  // [H, n_v_g, 3]
};

template <class S>
FlatBlocks<S> split_flat(const TrajectorySchema& sc, const Tensor<S>& flat) {
    if (flat.rank() != 2 || flat.dim(0) != sc.horizon || flat.dim(1) != sc.flat_dim())
        throw std::invalid_argument("mixer: flat trajectory must be [H, flat_dim], got " +
                                    shape_str(flat.shape()));
    Dim H = sc.horizon, n = sc.n_objects;
    Dim so = n * sc.n_s_object(), vo = n * sc.n_v_object() * 3, sg = sc.n_s_global();
    FlatBlocks<S> b;
    Dim off = 0;
    b.object_scalars = reshape(slice(flat, 1, off, so), {H, n, sc.n_s_object()});
    off += so;
    b.object_vectors = reshape(slice(flat, 1, off, vo), {H, n, sc.n_v_object(), 3});
    off += vo;
    b.global_scalars = slice(flat, 1, off, sg);
    off += sg;
    b.global_vectors = reshape(slice(flat, 1, off, sc.n_v_global() * 3), {H, sc.n_v_global(), 3});
    return b;
}

}  // namespace detail

// mix: flat data-space trajectory [H, D] -> internal tensor [H, n, n_c, 4].
template <class S>
Tensor<S> mix(const TrajectorySchema& sc, const MixerParams<S>& p, const Tensor<S>& flat) {
    Dim H = sc.horizon, n = sc.n_objects, n_c = p.n_channels;
    auto check_w = [&](const Tensor<S>& w, Dim n_f, const char* name) {
        if (n_f == 0) return;
        if (w.rank() != 2 || w.dim(0) != n_c || w.dim(1) != n_f)
            throw std::invalid_argument(std::string("mix: weight ") + name + " has shape " +
                                        shape_str(w.shape()) + ", schema requires " +
                                        shape_str({n_c, n_f}));
    };
    check_w(p.w_obj_scalar, sc.n_s_object(), "obj_scalar");
    check_w(p.w_obj_vector, sc.n_v_object(), "obj_vector");
    check_w(p.w_glob_scalar, sc.n_s_global(), "glob_scalar");
    check_w(p.w_glob_vector, sc.n_v_global(), "glob_vector");
    auto blocks = detail::split_flat(sc, flat);

    auto scalar_slot = Tensor<S>::zeros({H, n, n_c});
    auto vector_slot = Tensor<S>::zeros({H, n, n_c, 3});
    bool have_scalar = false, have_vector = false;
    auto acc = [](Tensor<S>& into, bool& have, const Tensor<S>& t) {
        into = have ? add(into, t) : t;
        have = true;
    };

    if (sc.n_s_object() > 0)
        acc(scalar_slot, have_scalar,
            matmul(blocks.object_scalars, permute(p.w_obj_scalar, {1, 0})));
    if (sc.n_s_global() > 0) {
        auto mixed = matmul(blocks.global_scalars, permute(p.w_glob_scalar, {1, 0}));  // [H,C]
        acc(scalar_slot, have_scalar, add(Tensor<S>::zeros({H, n, n_c}), reshape(mixed, {H, Dim(1), n_c})));
    }
    if (sc.n_v_object() > 0) {
        auto vt = permute(blocks.object_vectors, {0, 1, 3, 2});  // [H,n,3,F]
        auto mixed = matmul(vt, permute(p.w_obj_vector, {1, 0}));  // [H,n,3,C]
        acc(vector_slot, have_vector, permute(mixed, {0, 1, 3, 2}));
    }
    if (sc.n_v_global() > 0) {
        auto vt = permute(blocks.global_vectors, {0, 2, 1});      // [H,3,F]
        auto mixed = matmul(vt, permute(p.w_glob_vector, {1, 0}));  // [H,3,C]
        auto per_obj = reshape(permute(mixed, {0, 2, 1}), {H, Dim(1), n_c, 3});
        acc(vector_slot, have_vector, add(Tensor<S>::zeros({H, n, n_c, 3}), per_obj));
    }
    return join_internal(scalar_slot, vector_slot);
}

// ----------------------------------------------------------------------------
// Representation unmixer. Object features come from linear maps shared across
// objects (inverse analog of the mixer). Global features are aggregated over
// objects (mean/min/max for scalar slots; mean only for vector slots, since
// per-component extrema are not rotation-equivariant), concatenated on the
// channel axis, passed through one geometric layer, then mapped linearly.
// ----------------------------------------------------------------------------

template <class S>
struct UnmixerParams {
    Tensor<S> v_obj_scalar;   // [n_s_o, n_c]
    Tensor<S> v_obj_vector;   // [n_v_o, n_c]
    GeometricLayer<S> agg_geometric;  // scalars 3*n_c, vectors n_c
    Tensor<S> u_glob_scalar;  // [n_s_g, 3*n_c]
    Tensor<S> u_glob_vector;  // [n_v_g, n_c]
    Dim n_channels = 0;

    static UnmixerParams init(const TrajectorySchema& sc, Dim n_c, Dim geom_hidden, Rng& rng) {
        UnmixerParams p;
        p.n_channels = n_c;
        S std_c = static_cast<S>(1.0 / std::sqrt(static_cast<double>(n_c)));
        p.v_obj_scalar = Tensor<S>::randn({sc.n_s_object(), n_c}, rng, std_c, true);
        p.v_obj_vector = Tensor<S>::randn({sc.n_v_object(), n_c}, rng, std_c, true);
        p.agg_geometric = GeometricLayer<S>::init(3 * n_c, n_c, geom_hidden, rng);
        S std_3c = static_cast<S>(1.0 / std::sqrt(static_cast<double>(3 * n_c)));
        p.u_glob_scalar = Tensor<S>::randn({sc.n_s_global(), 3 * n_c}, rng, std_3c, true);
        p.u_glob_vector = Tensor<S>::randn({sc.n_v_global(), n_c}, rng, std_c, true);
        return p;
    }

    // Object maps selecting back the concatenation channels; exact inverse of
    // the noise-free concat mixer for object features.
    static UnmixerParams init_identity_objects(const TrajectorySchema& sc, Dim n_c,
                                               Dim geom_hidden, Rng& rng) {
        auto p = init(sc, n_c, geom_hidden, rng);
        std::fill(p.v_obj_scalar.value().begin(), p.v_obj_scalar.value().end(), S(0));
        std::fill(p.v_obj_vector.value().begin(), p.v_obj_vector.value().end(), S(0));
        Dim vec_off = sc.n_s_object() + sc.n_s_global();
        for (Dim f = 0; f < sc.n_s_object(); ++f)
            p.v_obj_scalar.value()[static_cast<size_t>(f * n_c + f)] = S(1);
        for (Dim f = 0; f < sc.n_v_object(); ++f)
            p.v_obj_vector.value()[static_cast<size_t>(f * n_c + vec_off + f)] = S(1);
        return p;
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".obj_scalar", v_obj_scalar);
        out.emplace_back(prefix + ".obj_vector", v_obj_vector);
        agg_geometric.collect(prefix + ".agg_geom", out);
        out.emplace_back(prefix + ".glob_scalar", u_glob_scalar);
        out.emplace_back(prefix + ".glob_vector", u_glob_vector);
    }
};

// unmix: internal tensor [H, n, n_c, 4] -> flat data-space trajectory [H, D].
template <class S>
Tensor<S> unmix(const TrajectorySchema& sc, const UnmixerParams<S>& p, const Tensor<S>& internal) {
    Dim H = sc.horizon, n = sc.n_objects, n_c = p.n_channels;
    if (internal.rank() != 4 || internal.dim(0) != H || internal.dim(1) != n ||
        internal.dim(2) != n_c || internal.dim(3) != 4)
        throw std::invalid_argument("unmix: internal tensor shape " + shape_str(internal.shape()) +
                                    " does not match schema");
    auto s_int = internal_scalars(internal);   // [H,n,C]
    auto v_int = internal_vectors(internal);   // [H,n,C,3]

    std::vector<Tensor<S>> pieces;
    if (sc.n_s_object() > 0) {
        auto so = matmul(s_int, permute(p.v_obj_scalar, {1, 0}));  // [H,n,F]
        pieces.push_back(reshape(so, {H, n * sc.n_s_object()}));
    }
    if (sc.n_v_object() > 0) {
        auto vt = permute(v_int, {0, 1, 3, 2});                     // [H,n,3,C]
        auto vo = matmul(vt, permute(p.v_obj_vector, {1, 0}));      // [H,n,3,F]
        pieces.push_back(reshape(permute(vo, {0, 1, 3, 2}), {H, n * sc.n_v_object() * 3}));
    }
    if (sc.n_s_global() > 0 || sc.n_v_global() > 0) {
        auto s_agg = concat<S>({mean(s_int, 1), min_reduce(s_int, 1), max_reduce(s_int, 1)}, 1);
        auto v_agg = mean(v_int, 1);  // [H,C,3]
        auto [s_geo, v_geo] = p.agg_geometric.forward_parts(
            reshape(s_agg, {H, Dim(1), 3 * n_c}), reshape(v_agg, {H, Dim(1), n_c, 3}));
        auto s_flat = reshape(s_geo, {H, 3 * n_c});
        auto v_flat = reshape(v_geo, {H, n_c, 3});
        if (sc.n_s_global() > 0)
            pieces.push_back(matmul(s_flat, permute(p.u_glob_scalar, {1, 0})));
        if (sc.n_v_global() > 0) {
            auto gv = matmul(permute(v_flat, {0, 2, 1}), permute(p.u_glob_vector, {1, 0}));
            pieces.push_back(reshape(permute(gv, {0, 2, 1}), {H, sc.n_v_global() * 3}));
        }
    }
    return concat<S>(pieces, 1);
}

}  // namespace edgi
