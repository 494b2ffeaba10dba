#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "edgi/mixer.hpp"
#include "edgi/schema.hpp"

using namespace edgi;

namespace {

TrajectorySchema toy_schema(Dim n = 3, Dim h = 6) {
    TrajectorySchema sc;
    sc.n_objects = n;
    sc.horizon = h;
    sc.object_scalars = {{"mass", true, 1.0}};
    sc.object_vectors = {{"pos", true, 1.0}};
    sc.global_scalars = {{"charge", true, 1.0}};
    sc.global_vectors = {{"vel", true, 1.0}, {"goal", true, 1.0}};
    return sc;
}

template <class S>
Trajectory<S> random_trajectory(const TrajectorySchema& sc, Rng& rng) {
    auto t = Trajectory<S>::zeros(sc);
    for (auto* block : {&t.object_scalars, &t.object_vectors, &t.global_scalars, &t.global_vectors})
        for (auto& x : *block) x = static_cast<S>(rng.normal());
    return t;
}

}  // namespace

TEST_CASE("pose_embed of the identity gives the first two basis vectors") {
    Vec3 u, v;
    pose_embed(mat3_identity(), u, v);
    CHECK(u == Vec3{1, 0, 0});
    CHECK(v == Vec3{0, 1, 0});
}

TEST_CASE("pose_embed of a 90 degree z rotation") {
    Vec3 u, v;
    pose_embed(rotation_about_z(M_PI / 2), u, v);
    CHECK(u[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(u[1] == doctest::Approx(1.0));
    CHECK(v[0] == doctest::Approx(-1.0));
    CHECK(v[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pose_embed rejects non-rotation input") {
    Mat3 bad = mat3_identity();
    bad[0] = 2.0;
    Vec3 u, v;
    CHECK_THROWS_AS(pose_embed(bad, u, v), std::invalid_argument);
}

TEST_CASE("pose_project recovers orthonormal and scaled frames") {
    Mat3 r = pose_project({1, 0, 0}, {0, 1, 0});
    Mat3 r2 = pose_project({2, 0, 0}, {0, 1, 0});
    for (int i = 0; i < 9; ++i) {
        CHECK(r[static_cast<size_t>(i)] == doctest::Approx(mat3_identity()[static_cast<size_t>(i)]));
        CHECK(r2[static_cast<size_t>(i)] == doctest::Approx(mat3_identity()[static_cast<size_t>(i)]));
    }
}

TEST_CASE("pose_project rejects degenerate input") {
    CHECK_THROWS_AS(pose_project({1, 0, 0}, {1, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(pose_project({0, 0, 0}, {0, 1, 0}), std::invalid_argument);
}

TEST_CASE("pose_project composed with pose_embed is the identity on SO(3)") {
    Rng rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        Mat3 r = random_rotation(rng);
        Vec3 u, v;
        pose_embed(r, u, v);
        Mat3 back = pose_project(u, v);
        for (int k = 0; k < 9; ++k)
            worst = std::max(worst, std::abs(back[static_cast<size_t>(k)] - r[static_cast<size_t>(k)]));
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("random rotations are valid group elements") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        auto g = random_group_element(rng, 4, 3);
        CHECK_NOTHROW(g.validate());
    }
}

TEST_CASE("identity group action leaves trajectories unchanged") {
    auto sc = toy_schema();
    Rng rng(5);
    auto traj = random_trajectory<double>(sc, rng);
    auto out = apply_group_action(sc, traj, GroupElement::identity(sc.n_objects));
    CHECK(out.object_vectors == traj.object_vectors);
    CHECK(out.object_scalars == traj.object_scalars);
    CHECK(out.global_scalars == traj.global_scalars);
    CHECK(out.global_vectors == traj.global_vectors);
}

TEST_CASE("group actions compose") {
    auto sc = toy_schema();
    Rng rng(6);
    auto traj = random_trajectory<double>(sc, rng);
    auto g1 = random_group_element(rng, sc.n_objects, 2);
    auto g2 = random_group_element(rng, sc.n_objects, 2);
    auto seq = apply_group_action(sc, apply_group_action(sc, traj, g1), g2);
    auto direct = apply_group_action(sc, traj, compose(g2, g1));
    for (size_t i = 0; i < seq.object_vectors.size(); ++i)
        CHECK(seq.object_vectors[i] == doctest::Approx(direct.object_vectors[i]).epsilon(1e-12));
    for (size_t i = 0; i < seq.global_vectors.size(); ++i)
        CHECK(seq.global_vectors[i] == doctest::Approx(direct.global_vectors[i]).epsilon(1e-12));
    CHECK(seq.object_scalars == direct.object_scalars);
}

TEST_CASE("rotation preserves pairwise inner products of vector features") {
    auto sc = toy_schema(2, 4);
    Rng rng(8);
    auto traj = random_trajectory<double>(sc, rng);
    GroupElement g = GroupElement::identity(sc.n_objects);
    g.rotation = random_rotation(rng);
    auto rotated = apply_group_action(sc, traj, g);
    for (Dim t = 0; t < sc.horizon; ++t)
        for (Dim o = 0; o < sc.n_objects; ++o) {
            double dot0 = 0.0, dot1 = 0.0;
            for (Dim k = 0; k < 3; ++k) {
                dot0 += traj.ov(sc, t, o, 0, k) * traj.gv(sc, t, 0, k);
                dot1 += rotated.ov(sc, t, o, 0, k) * rotated.gv(sc, t, 0, k);
            }
            CHECK(dot0 == doctest::Approx(dot1).epsilon(1e-10));
        }
}

TEST_CASE("zero-pad time shift truncates and rejects out-of-range shifts") {
    auto sc = toy_schema(2, 4);
    Rng rng(9);
    auto traj = random_trajectory<double>(sc, rng);
    GroupElement g = GroupElement::identity(sc.n_objects);
    g.time_shift = 1;
    auto shifted = apply_group_action(sc, traj, g, PadMode::kZero);
    for (Dim f = 0; f < sc.n_s_global(); ++f) CHECK(shifted.gs(sc, 0, f) == 0.0);
    CHECK(shifted.gs(sc, 1, 0) == traj.gs(sc, 0, 0));
    g.time_shift = 4;
    CHECK_THROWS_AS(apply_group_action(sc, traj, g, PadMode::kZero), std::invalid_argument);
}

TEST_CASE("schema validation rejects duplicate labels and tiny horizons") {
    auto sc = toy_schema();
    CHECK_NOTHROW(sc.validate());
    sc.object_vectors.push_back({"mass", true, 1.0});
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    auto sc2 = toy_schema(1, 1);
    CHECK_THROWS_AS(sc2.validate(), std::invalid_argument);
}

TEST_CASE("mix at concatenation init is a pure feature concatenation") {
    // spec anchor: n_s_object=1, n_v_object=1, no globals, n_c=2
    TrajectorySchema sc;
    sc.n_objects = 2;
    sc.horizon = 3;
    sc.object_scalars = {{"s", true, 1.0}};
    sc.object_vectors = {{"v", true, 1.0}};
    Rng rng(10);
    auto p = MixerParams<float>::init_concat(sc, 2, rng, 0.0f);
    auto traj = random_trajectory<float>(sc, rng);
    auto flat = Tensor<float>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, traj));
    auto internal = mix(sc, p, flat);
    CHECK(internal.shape() == Shape{3, 2, 2, 4});
    for (Dim t = 0; t < 3; ++t)
        for (Dim o = 0; o < 2; ++o) {
            auto at = [&](Dim c, Dim slot) {
                return internal.value()[static_cast<size_t>(((t * 2 + o) * 2 + c) * 4 + slot)];
            };
            // channel 0 carries (s, 0); channel 1 carries (0, v)
            CHECK(at(0, 0) == traj.os(sc, t, o, 0));
            CHECK(at(0, 1) == 0.0f);
            CHECK(at(0, 2) == 0.0f);
            CHECK(at(0, 3) == 0.0f);
            CHECK(at(1, 0) == 0.0f);
            for (Dim k = 0; k < 3; ++k) CHECK(at(1, 1 + k) == traj.ov(sc, t, o, 0, k));
        }
}

TEST_CASE("mix of the zero trajectory is the zero internal tensor") {
    auto sc = toy_schema();
    Rng rng(11);
    auto p = MixerParams<float>::init_concat(sc, 8, rng, 1e-3f);
    auto flat = Tensor<float>::zeros({sc.horizon, sc.flat_dim()});
    auto internal = mix(sc, p, flat);
    for (float v : internal.value()) CHECK(v == 0.0f);
}

TEST_CASE("mix commutes with rotations") {
    auto sc = toy_schema();
    Rng rng(12);
    auto p = MixerParams<double>::init_concat(sc, 8, rng, 1e-3);
    auto traj = random_trajectory<double>(sc, rng);
    GroupElement g = GroupElement::identity(sc.n_objects);
    g.rotation = random_rotation(rng);
    auto flat = Tensor<double>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, traj));
    auto rotated = apply_group_action(sc, traj, g);
    auto flat_rot = Tensor<double>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, rotated));
    auto lhs = mix(sc, p, flat_rot);  // mix(R tau)
    auto rhs = act_on_internal(mix(sc, p, flat).value(), sc.horizon, sc.n_objects, 8, g);
    CHECK(max_rel_error(lhs.value(), rhs) <= 1e-12);
}

TEST_CASE("mix rejects mismatched weights") {
    auto sc = toy_schema();
    Rng rng(13);
    auto p = MixerParams<float>::init_concat(sc, 8, rng, 0.0f);
    p.w_obj_scalar = Tensor<float>::zeros({sc.n_objects, 8, 5});
    auto flat = Tensor<float>::zeros({sc.horizon, sc.flat_dim()});
    CHECK_THROWS_WITH_AS(mix(sc, p, flat), doctest::Contains("obj_scalar"), std::invalid_argument);
}

TEST_CASE("unmix with identity object maps inverts the concat mixer on object features") {
    auto sc = toy_schema(3, 4);
    Rng rng(14);
    auto mp = MixerParams<double>::init_concat(sc, 8, rng, 0.0);
    auto up = UnmixerParams<double>::init_identity_objects(sc, 8, 16, rng);
    auto traj = random_trajectory<double>(sc, rng);
    auto flat = Tensor<double>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, traj));
    auto round = unmix(sc, up, mix(sc, mp, flat));
    auto out = unflatten_trajectory(sc, round.value());
    for (size_t i = 0; i < traj.object_scalars.size(); ++i)
        CHECK(out.object_scalars[i] == doctest::Approx(traj.object_scalars[i]).epsilon(1e-12));
    for (size_t i = 0; i < traj.object_vectors.size(); ++i)
        CHECK(out.object_vectors[i] == doctest::Approx(traj.object_vectors[i]).epsilon(1e-12));
}

TEST_CASE("unmix global outputs are invariant under object permutations") {
    auto sc = toy_schema(4, 4);
    Rng rng(15);
    auto mp = MixerParams<double>::init_concat(sc, 8, rng, 1e-3);
    auto up = UnmixerParams<double>::init(sc, 8, 16, rng);
    auto traj = random_trajectory<double>(sc, rng);
    GroupElement g = GroupElement::identity(sc.n_objects);
    g.permutation = {2, 0, 3, 1};
    auto flat = Tensor<double>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, traj));
    auto permuted = apply_group_action(sc, traj, g);
    auto flat_p = Tensor<double>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, permuted));
    auto a = unflatten_trajectory(sc, unmix(sc, up, mix(sc, mp, flat)).value());
    auto b = unflatten_trajectory(sc, unmix(sc, up, mix(sc, mp, flat_p)).value());
    CHECK(max_rel_error(a.global_scalars, b.global_scalars) <= 1e-12);
    CHECK(max_rel_error(a.global_vectors, b.global_vectors) <= 1e-12);
}

TEST_CASE("mix and unmix are equivariant for rotation plus permutation") {
    auto sc = toy_schema(3, 4);
    Rng rng(16);
    auto mp = MixerParams<float>::init_concat(sc, 8, rng, 1e-3f);
    auto up = UnmixerParams<float>::init(sc, 8, 16, rng);
    for (int trial = 0; trial < 20; ++trial) {
        auto traj = random_trajectory<float>(sc, rng);
        auto g = random_group_element(rng, sc.n_objects, 0);
        auto flat = Tensor<float>::from({sc.horizon, sc.flat_dim()}, flatten_trajectory(sc, traj));
        auto internal = mix(sc, mp, flat);
        // unmix(g x) vs g unmix(x)
        auto gx = Tensor<float>::from(internal.shape(),
                                      act_on_internal(internal.value(), sc.horizon, sc.n_objects, 8, g));
        auto lhs = unmix(sc, up, gx).value();
        auto rhs = apply_group_action_flat(sc, unmix(sc, up, internal).value(), g);
        CHECK(max_rel_error(lhs, rhs) <= 1e-5);
    }
}
