#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "edgi/group.hpp"
#include "edgi/tensor.hpp"

namespace edgi {

// Typed feature layout of a state-action trajectory: scalar/vector features,
// each either per-object or global (agent/robot). Vector features are stored
// relative to the declared reference point and transform under rho_1.

struct FeatureDef {
    std::string label;
    bool conditionable = true;  // may be pinned by a ConditioningSpec
    double scale = 1.0;         // invariant divisor applied entering model space
};

struct TrajectorySchema {
    Dim n_objects = 1;
    Dim horizon = 2;
    std::vector<FeatureDef> object_scalars;
    std::vector<FeatureDef> object_vectors;
    std::vector<FeatureDef> global_scalars;
    std::vector<FeatureDef> global_vectors;

    Dim n_s_object() const { return static_cast<Dim>(object_scalars.size()); }
    Dim n_v_object() const { return static_cast<Dim>(object_vectors.size()); }
    Dim n_s_global() const { return static_cast<Dim>(global_scalars.size()); }
    Dim n_v_global() const { return static_cast<Dim>(global_vectors.size()); }

    // Flattened feature width of one trajectory step; blocks in order:
    // object scalars, object vectors, global scalars, global vectors.
    Dim flat_dim() const {
        return n_objects * n_s_object() + n_objects * n_v_object() * 3 + n_s_global() +
               n_v_global() * 3;
    }

    void validate() const {
        if (n_objects < 1) throw std::invalid_argument("schema: n_objects must be >= 1");
        if (horizon < 2) throw std::invalid_argument("schema: horizon must be >= 2");
        std::unordered_set<std::string> seen;
        auto check = [&seen](const std::vector<FeatureDef>& defs) {
            for (const auto& d : defs)
                if (!seen.insert(d.label).second)
                    throw std::invalid_argument("schema: duplicate feature label '" + d.label + "'");
        };
        check(object_scalars);
        check(object_vectors);
        check(global_scalars);
        check(global_vectors);
    }
};

// Dense trajectory storage matching a schema:
//   object_scalars [H, n, n_s_o], object_vectors [H, n, n_v_o, 3],
//   global_scalars [H, n_s_g],    global_vectors [H, n_v_g, 3].
template <class S>
struct Trajectory {
    std::vector<S> object_scalars;
    std::vector<S> object_vectors;
    std::vector<S> global_scalars;
    std::vector<S> global_vectors;

    static Trajectory zeros(const TrajectorySchema& schema) {
        Trajectory t;
        t.object_scalars.assign(
            static_cast<size_t>(schema.horizon * schema.n_objects * schema.n_s_object()), S(0));
        t.object_vectors.assign(
            static_cast<size_t>(schema.horizon * schema.n_objects * schema.n_v_object() * 3), S(0));
        t.global_scalars.assign(static_cast<size_t>(schema.horizon * schema.n_s_global()), S(0));
        t.global_vectors.assign(static_cast<size_t>(schema.horizon * schema.n_v_global() * 3), S(0));
        return t;
    }

    void check_shapes(const TrajectorySchema& schema) const {
        auto expect = zeros(schema);
        if (object_scalars.size() != expect.object_scalars.size() ||
            object_vectors.size() != expect.object_vectors.size() ||
            global_scalars.size() != expect.global_scalars.size() ||
            global_vectors.size() != expect.global_vectors.size())
            throw std::invalid_argument("trajectory: block sizes do not match schema");
    }

    S& os(const TrajectorySchema& sc, Dim t, Dim o, Dim f) {
        return object_scalars[static_cast<size_t>((t * sc.n_objects + o) * sc.n_s_object() + f)];
    }
    S& ov(const TrajectorySchema& sc, Dim t, Dim o, Dim f, Dim k) {
        return object_vectors[static_cast<size_t>(
            ((t * sc.n_objects + o) * sc.n_v_object() + f) * 3 + k)];
    }
    S& gs(const TrajectorySchema& sc, Dim t, Dim f) {
        return global_scalars[static_cast<size_t>(t * sc.n_s_global() + f)];
    }
    S& gv(const TrajectorySchema& sc, Dim t, Dim f, Dim k) {
        return global_vectors[static_cast<size_t>((t * sc.n_v_global() + f) * 3 + k)];
    }
    S os(const TrajectorySchema& sc, Dim t, Dim o, Dim f) const {
        return object_scalars[static_cast<size_t>((t * sc.n_objects + o) * sc.n_s_object() + f)];
    }
    S ov(const TrajectorySchema& sc, Dim t, Dim o, Dim f, Dim k) const {
        return object_vectors[static_cast<size_t>(
            ((t * sc.n_objects + o) * sc.n_v_object() + f) * 3 + k)];
    }
    S gs(const TrajectorySchema& sc, Dim t, Dim f) const {
        return global_scalars[static_cast<size_t>(t * sc.n_s_global() + f)];
    }
    S gv(const TrajectorySchema& sc, Dim t, Dim f, Dim k) const {
        return global_vectors[static_cast<size_t>((t * sc.n_v_global() + f) * 3 + k)];
    }
};

// ----------------------------------------------------------------------------
// Flat layout [H, flat_dim]: per step the blocks in schema order. This is the
// array the diffusion process operates on.
// ----------------------------------------------------------------------------

template <class S>
std::vector<S> flatten_trajectory(const TrajectorySchema& sc, const Trajectory<S>& traj) {
    traj.check_shapes(sc);
    Dim d = sc.flat_dim();
    std::vector<S> flat(static_cast<size_t>(sc.horizon * d));
    Dim so = sc.n_objects * sc.n_s_object();
    Dim vo = sc.n_objects * sc.n_v_object() * 3;
    Dim sg = sc.n_s_global();
    for (Dim t = 0; t < sc.horizon; ++t) {
        S* row = flat.data() + t * d;
        std::copy_n(traj.object_scalars.data() + t * so, so, row);
        std::copy_n(traj.object_vectors.data() + t * vo, vo, row + so);
        std::copy_n(traj.global_scalars.data() + t * sg, sg, row + so + vo);
        std::copy_n(traj.global_vectors.data() + t * sc.n_v_global() * 3, sc.n_v_global() * 3,
                    row + so + vo + sg);
    }
    return flat;
}

template <class S>
Trajectory<S> unflatten_trajectory(const TrajectorySchema& sc, const std::vector<S>& flat) {
    Dim d = sc.flat_dim();
    if (static_cast<Dim>(flat.size()) != sc.horizon * d)
        throw std::invalid_argument("unflatten: flat length does not match schema");
    auto traj = Trajectory<S>::zeros(sc);
    Dim so = sc.n_objects * sc.n_s_object();
    Dim vo = sc.n_objects * sc.n_v_object() * 3;
    Dim sg = sc.n_s_global();
    for (Dim t = 0; t < sc.horizon; ++t) {
        const S* row = flat.data() + t * d;
        std::copy_n(row, so, traj.object_scalars.data() + t * so);
        std::copy_n(row + so, vo, traj.object_vectors.data() + t * vo);
        std::copy_n(row + so + vo, sg, traj.global_scalars.data() + t * sg);
        std::copy_n(row + so + vo + sg, sc.n_v_global() * 3,
                    traj.global_vectors.data() + t * sc.n_v_global() * 3);
    }
    return traj;
}

// ----------------------------------------------------------------------------
// Group action on trajectories: vectors rotate, scalars are untouched, the
// object axis permutes (globals do not), the time axis shifts. Cyclic shifts
// wrap; zero mode shifts within range and zero-fills vacated steps.
// ----------------------------------------------------------------------------

template <class S>
Trajectory<S> apply_group_action(const TrajectorySchema& sc, const Trajectory<S>& traj,
                                 const GroupElement& g, PadMode padding = PadMode::kCircular) {
    traj.check_shapes(sc);
    if (static_cast<Dim>(g.permutation.size()) != sc.n_objects)
        throw std::invalid_argument("group action: permutation size does not match n_objects");
    if (padding == PadMode::kZero && std::abs(g.time_shift) >= sc.horizon)
        throw std::invalid_argument("group action: |time_shift| must be < horizon in zero mode");
    auto out = Trajectory<S>::zeros(sc);
    Dim H = sc.horizon;
    auto dest_time = [&](Dim t, Dim& td) {
        td = t + g.time_shift;
        if (padding == PadMode::kCircular) {
            td = ((td % H) + H) % H;
            return true;
        }
        return td >= 0 && td < H;
    };
    for (Dim t = 0; t < H; ++t) {
        Dim td;
        if (!dest_time(t, td)) continue;
        for (Dim o = 0; o < sc.n_objects; ++o) {
            Dim od = g.permutation[static_cast<size_t>(o)];
            for (Dim f = 0; f < sc.n_s_object(); ++f) out.os(sc, td, od, f) = traj.os(sc, t, o, f);
            for (Dim f = 0; f < sc.n_v_object(); ++f) {
                Vec3 v{static_cast<double>(traj.ov(sc, t, o, f, 0)),
                       static_cast<double>(traj.ov(sc, t, o, f, 1)),
                       static_cast<double>(traj.ov(sc, t, o, f, 2))};
                Vec3 rv = mat3_apply(g.rotation, v);
                for (Dim k = 0; k < 3; ++k) out.ov(sc, td, od, f, k) = static_cast<S>(rv[static_cast<size_t>(k)]);
            }
        }
        for (Dim f = 0; f < sc.n_s_global(); ++f) out.gs(sc, td, f) = traj.gs(sc, t, f);
        for (Dim f = 0; f < sc.n_v_global(); ++f) {
            Vec3 v{static_cast<double>(traj.gv(sc, t, f, 0)),
                   static_cast<double>(traj.gv(sc, t, f, 1)),
                   static_cast<double>(traj.gv(sc, t, f, 2))};
            Vec3 rv = mat3_apply(g.rotation, v);
            for (Dim k = 0; k < 3; ++k) out.gv(sc, td, f, k) = static_cast<S>(rv[static_cast<size_t>(k)]);
        }
    }
    return out;
}

template <class S>
std::vector<S> apply_group_action_flat(const TrajectorySchema& sc, const std::vector<S>& flat,
                                       const GroupElement& g, PadMode padding = PadMode::kCircular) {
    return flatten_trajectory(sc, apply_group_action(sc, unflatten_trajectory(sc, flat), g, padding));
}

// ----------------------------------------------------------------------------
// Internal representation [H, n, n_c, 4]: slot 0 carries the SO(3) scalar,
// slots 1-3 the SO(3) vector. Raw-array action helpers back the equivariance
// tests (the reference side of f(g x) = g f(x)).
// ----------------------------------------------------------------------------

template <class S>
std::vector<S> act_on_internal(const std::vector<S>& values, Dim H, Dim n, Dim c,
                               const GroupElement& g, PadMode padding = PadMode::kCircular) {
    std::vector<S> out(values.size(), S(0));
    for (Dim t = 0; t < H; ++t) {
        Dim td = t + g.time_shift;
        if (padding == PadMode::kCircular)
            td = ((td % H) + H) % H;
        else if (td < 0 || td >= H)
            continue;
        for (Dim o = 0; o < n; ++o) {
            Dim od = g.permutation[static_cast<size_t>(o)];
            for (Dim ch = 0; ch < c; ++ch) {
                size_t src = static_cast<size_t>(((t * n + o) * c + ch) * 4);
                size_t dst = static_cast<size_t>(((td * n + od) * c + ch) * 4);
                out[dst] = values[src];
                Vec3 v{static_cast<double>(values[src + 1]), static_cast<double>(values[src + 2]),
                       static_cast<double>(values[src + 3])};
                Vec3 rv = mat3_apply(g.rotation, v);
                for (int k = 0; k < 3; ++k) out[dst + 1 + static_cast<size_t>(k)] = static_cast<S>(rv[static_cast<size_t>(k)]);
            }
        }
    }
    return out;
}

// Max elementwise deviation normalized by the reference magnitude scale.
template <class S>
double max_rel_error(const std::vector<S>& got, const std::vector<S>& want) {
    if (got.size() != want.size()) throw std::invalid_argument("max_rel_error: size mismatch");
    double scale = 0.0;
    for (S w : want) scale = std::max(scale, std::abs(static_cast<double>(w)));
    scale = std::max(scale, 1e-12);
    double worst = 0.0;
    for (size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst,
                         std::abs(static_cast<double>(got[i]) - static_cast<double>(want[i])) / scale);
    return worst;
}

}  // namespace edgi
