#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "aotomo/tomography.hpp"

using namespace aotomo;
using Catch::Approx;

namespace {

LayerStack random_stack(const std::vector<LayerGrid>& grids, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    LayerStack s;
    for (const auto& g : grids) {
        LayerField f(g.size());
        for (int i = 0; i < g.size(); ++i) f[i] = normal(rng);
        s.layers.push_back(std::move(f));
    }
    return s;
}

WavefrontSet random_fronts(const TomographyOperator& op, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    WavefrontSet d;
    for (int g = 0; g < op.star_count(); ++g) {
        Eigen::VectorXd v(op.pupil_size());
        for (int i = 0; i < v.size(); ++i) v[i] = normal(rng);
        d.star_data.push_back(std::move(v));
    }
    return d;
}

}  // namespace

TEST_CASE("aligned ground layer acts as a selection operator") {
    const Aperture ap(0.0, 5.0);
    const int n_ap = 5;  // spacing 2.5, nodes at multiples of 2.5
    const std::vector<GuideStar> stars = {GuideStar::ngs({0.0, 0.0})};
    const std::vector<LayerGrid> grids = {LayerGrid(0.0, Vec2(-7.5, -7.5), 2.5, 7, 7)};
    const auto op = build_operator(ap, n_ap, stars, grids);

    // 5x5 nodes minus the 12 outside the disk of radius 5
    CHECK(op.pupil_size() == 13);
    CHECK(op.aperture_spacing() == Approx(2.5));
    CHECK(op.cell_area() == Approx(6.25));

    SECTION("forward picks exact node values") {
        LayerStack phi;
        phi.layers.push_back(LayerField::Zero(grids[0].size()));
        for (int i = 0; i < grids[0].size(); ++i) phi.layers[0][i] = 10.0 + i;
        const auto data = op.forward(phi);
        for (int p = 0; p < op.pupil_size(); ++p) {
            const Vec2 r = op.pupil_nodes()[p];
            const int i = static_cast<int>(std::lround((r.x() + 7.5) / 2.5));
            const int j = static_cast<int>(std::lround((r.y() + 7.5) / 2.5));
            CHECK(data.star_data[0][p] == phi.layers[0][i + 7 * j]);
        }
    }

    SECTION("spectral norm of A^T A is exactly one") {
        const auto est = estimate_spectral_norm(op, NoiseModel{});
        CHECK(est.converged);
        CHECK(est.lambda_max == Approx(1.0).epsilon(1e-6));
    }

    SECTION("G coincident stars scale the norm to G") {
        const std::vector<GuideStar> trio(3, GuideStar::ngs({0.0, 0.0}));
        const auto op3 = build_operator(ap, n_ap, trio, grids);
        const auto est = estimate_spectral_norm(op3, NoiseModel{});
        CHECK(est.lambda_max == Approx(3.0).epsilon(1e-6));
    }

    SECTION("noise weighting scales the norm by 1/sigma^2") {
        const auto est = estimate_spectral_norm(op, NoiseModel(2.0, 0));
        CHECK(est.lambda_max == Approx(0.25).epsilon(1e-6));
    }
}

TEST_CASE("interpolation weights sum to one") {
    const Aperture ap(0.5, 4.0);
    const auto stars = circular_asterism(4, 1.0);
    const std::vector<double> altitudes = {0.0, 4000.0, 12000.0};
    const auto grids = default_layer_grids(ap, 9, stars, altitudes);
    const auto op = build_operator(ap, 9, stars, grids);

    // a constant-one stack maps to L per pupil node for every star
    LayerStack ones;
    for (const auto& g : grids) ones.layers.push_back(LayerField::Ones(g.size()));
    const auto data = op.forward(ones);
    for (int g = 0; g < op.star_count(); ++g)
        for (int p = 0; p < op.pupil_size(); ++p)
            CHECK(data.star_data[g][p] == Approx(3.0).epsilon(1e-14));
}

TEST_CASE("forward is linear") {
    const Aperture ap(0.0, 4.0);
    const auto stars = circular_asterism(3, 1.2);
    const auto grids = default_layer_grids(ap, 7, stars, {0.0, 9000.0});
    const auto op = build_operator(ap, 7, stars, grids);

    const auto x = random_stack(grids, 1);
    const auto y = random_stack(grids, 2);
    LayerStack combo = x;
    combo *= 2.5;
    LayerStack my = y;
    my *= -0.75;
    combo += my;

    auto lhs = op.forward(combo);
    auto fx = op.forward(x);
    auto fy = op.forward(y);
    fx *= 2.5;
    fy *= -0.75;
    for (int g = 0; g < op.star_count(); ++g) {
        const Eigen::VectorXd expect = fx.star_data[g] + fy.star_data[g];
        CHECK((lhs.star_data[g] - expect).norm() <= 1e-12 * expect.norm());
    }
}

TEST_CASE("adjoint identity <A phi, d> = <phi, A^T d>") {
    const Aperture ap(0.25, 4.0);
    std::vector<GuideStar> stars = circular_asterism(3, 1.5);
    stars.push_back(GuideStar::lgs({1e-4, -2e-4}, 90000.0));
    const auto grids = default_layer_grids(ap, 11, stars, {0.0, 4000.0, 12000.0});
    const auto op = build_operator(ap, 11, stars, grids);

    for (std::uint64_t trial = 0; trial < 4; ++trial) {
        const auto phi = random_stack(grids, 100 + trial);
        const auto d = random_fronts(op, 200 + trial);
        const double lhs = dot(op.forward(phi), d);
        const double rhs = dot(phi, op.adjoint(d));
        CHECK(lhs == Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("adjoint is deterministic") {
    const Aperture ap(0.0, 4.0);
    const auto stars = circular_asterism(6, 1.5);
    const auto grids = default_layer_grids(ap, 9, stars, {0.0, 10000.0});
    const auto op = build_operator(ap, 9, stars, grids);
    const auto d = random_fronts(op, 77);
    const auto a = op.adjoint(d);
    const auto b = op.adjoint(d);
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        CHECK((a.layers[l] - b.layers[l]).norm() == 0.0);
}

TEST_CASE("coverage errors identify the offending star and layer") {
    const Aperture ap(0.0, 5.0);
    const auto stars = circular_asterism(6, 1.5);
    // grid far too small for the shifted footprint at altitude
    const std::vector<LayerGrid> grids = {LayerGrid(10000.0, Vec2(-6.0, -6.0), 1.0, 13, 13)};
    CHECK_THROWS_AS(build_operator(ap, 9, stars, grids), grid_coverage_error);
    try {
        build_operator(ap, 9, stars, grids);
    } catch (const grid_coverage_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("star") != std::string::npos);
        CHECK(msg.find("layer") != std::string::npos);
    }
}

TEST_CASE("operator input validation") {
    const Aperture ap(0.0, 4.0);
    const auto stars = circular_asterism(2, 1.0);
    const auto grids = default_layer_grids(ap, 7, stars, {0.0, 5000.0});
    const auto op = build_operator(ap, 7, stars, grids);

    LayerStack wrong_count;
    wrong_count.layers.push_back(LayerField::Zero(grids[0].size()));
    CHECK_THROWS_AS(op.forward(wrong_count), constraint_violation_error);

    LayerStack wrong_size;
    wrong_size.layers.push_back(LayerField::Zero(grids[0].size()));
    wrong_size.layers.push_back(LayerField::Zero(3));
    CHECK_THROWS_AS(op.forward(wrong_size), constraint_violation_error);

    WavefrontSet bad;
    bad.star_data.push_back(Eigen::VectorXd::Zero(op.pupil_size()));
    CHECK_THROWS_AS(op.adjoint(bad), constraint_violation_error);

    CHECK_THROWS_AS(build_operator(ap, 1, stars, grids), invalid_geometry_error);
    CHECK_THROWS_AS(build_operator(ap, 7, {}, grids), invalid_geometry_error);
}

TEST_CASE("additive noise") {
    const Aperture ap(0.0, 4.0);
    const auto stars = circular_asterism(4, 1.0);
    const auto grids = default_layer_grids(ap, 33, stars, {0.0});
    const auto op = build_operator(ap, 33, stars, grids);
    WavefrontSet clean;
    for (int g = 0; g < op.star_count(); ++g)
        clean.star_data.push_back(Eigen::VectorXd::Zero(op.pupil_size()));

    SECTION("sigma = 0 is a passthrough") {
        const auto out = add_noise(clean, NoiseModel{});
        CHECK(out.squared_norm() == 0.0);
    }

    SECTION("deterministic per seed, empirical std close to sigma") {
        const NoiseModel noise(0.3, 99);
        const auto a = add_noise(clean, noise);
        const auto b = add_noise(clean, noise);
        double sq = 0.0;
        long long count = 0;
        for (int g = 0; g < a.star_count(); ++g) {
            CHECK((a.star_data[g] - b.star_data[g]).norm() == 0.0);
            sq += a.star_data[g].squaredNorm();
            count += a.star_data[g].size();
        }
        CHECK(std::sqrt(sq / count) == Approx(0.3).epsilon(0.02));
        const auto c = add_noise(clean, NoiseModel(0.3, 100));
        CHECK((a.star_data[0] - c.star_data[0]).norm() > 0.0);
    }
}

TEST_CASE("per-iteration flop counts") {
    CHECK(flop_cost(6, 40, 1) == 3908);
    CHECK(flop_cost(6, 9, 1) == 839);
    CHECK(flop_cost(6, 5, 1) == 443);
    CHECK(flop_cost(6, 3, 1) == 245);
    CHECK(flop_cost(6, 40, 1000) == 3908000);
    CHECK(static_cast<double>(flop_cost(6, 40, 1)) / flop_cost(6, 5, 1) ==
          Approx(8.8).epsilon(0.01));
    CHECK(static_cast<double>(flop_cost(6, 9, 1)) / flop_cost(6, 3, 1) ==
          Approx(3.4).epsilon(0.01));
    CHECK_THROWS_AS(flop_cost(0, 1, 1), std::domain_error);
}
