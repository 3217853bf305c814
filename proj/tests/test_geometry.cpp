#include <catch2/catch_amalgamated.hpp>

#include "aotomo/geometry.hpp"

using namespace aotomo;
using Catch::Approx;

TEST_CASE("cone scale") {
    const auto ngs = GuideStar::ngs({0.0, 0.0});
    const auto lgs = GuideStar::lgs({0.0, 0.0}, 90000.0);

    CHECK(cone_scale(10000.0, ngs) == 1.0);
    CHECK(cone_scale(0.0, lgs) == 1.0);
    CHECK(cone_scale(10000.0, lgs) == Approx(1.0 - 10000.0 / 90000.0).epsilon(1e-14));
    CHECK_THROWS_AS(cone_scale(90000.0, lgs), invalid_geometry_error);
    CHECK_THROWS_AS(cone_scale(95000.0, lgs), invalid_geometry_error);

    // monotonically decreasing in altitude for LGS
    double prev = 2.0;
    for (double h : {0.0, 5000.0, 20000.0, 60000.0, 89000.0}) {
        const double c = cone_scale(h, lgs);
        CHECK(c < prev);
        CHECK(c > 0.0);
        CHECK(c <= 1.0);
        prev = c;
    }
}

TEST_CASE("project point") {
    const auto ngs = GuideStar::ngs({4.3633e-4, 0.0});

    const Vec2 ground = project_point({1.0, 0.0}, 0.0, GuideStar::ngs({0.1, 0.2}));
    CHECK(ground.x() == Approx(1.0));
    CHECK(ground.y() == Approx(0.0));

    const Vec2 shifted = project_point({0.0, 0.0}, 10000.0, ngs);
    CHECK(shifted.x() == Approx(4.3633).epsilon(1e-12));
    CHECK(shifted.y() == Approx(0.0));

    const auto lgs = GuideStar::lgs({0.0, 0.0}, 90000.0);
    const Vec2 compressed = project_point({2.0, 0.0}, 10000.0, lgs);
    CHECK(compressed.x() == Approx(2.0 * 8.0 / 9.0).epsilon(1e-14));

    // affine in r: translation part for NGS
    const Vec2 a = project_point({1.5, -2.0}, 8000.0, ngs);
    const Vec2 b = project_point({0.0, 0.0}, 8000.0, ngs);
    CHECK((a - b).x() == Approx(1.5).epsilon(1e-12));
    CHECK((a - b).y() == Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("visible domain") {
    const Aperture ap(0.0, 5.0);

    SECTION("ground layer equals aperture box") {
        const auto stars = circular_asterism(6, 1.5);
        const Rect box = visible_domain(0.0, stars, ap);
        CHECK(box.xmin == Approx(-5.0));
        CHECK(box.xmax == Approx(5.0));
        CHECK(box.ymin == Approx(-5.0));
        CHECK(box.ymax == Approx(5.0));
    }

    SECTION("single off-axis star shifts the disk") {
        const std::vector<GuideStar> stars = {GuideStar::ngs({4.3633e-4, 0.0})};
        const Rect box = visible_domain(10000.0, stars, ap);
        CHECK(box.xmin == Approx(-5.0 + 4.3633).epsilon(1e-10));
        CHECK(box.xmax == Approx(5.0 + 4.3633).epsilon(1e-10));
        CHECK(box.ymin == Approx(-5.0));
        CHECK(box.ymax == Approx(5.0));
    }

    SECTION("six-star circle gives a symmetric square") {
        const auto stars = circular_asterism(6, 1.5);
        const Rect box = visible_domain(10000.0, stars, ap);
        const double half = 5.0 + 10000.0 * arcmin_to_rad(1.5);
        CHECK(box.xmax == Approx(half).epsilon(1e-10));
        CHECK(box.xmin == Approx(-half).epsilon(1e-10));
        CHECK(half == Approx(9.3633).epsilon(1e-4));
    }

    SECTION("grows with altitude for NGS asterisms") {
        const auto stars = circular_asterism(4, 1.0);
        Rect prev = visible_domain(0.0, stars, ap);
        for (double h : {2000.0, 8000.0, 16000.0}) {
            Rect cur = visible_domain(h, stars, ap);
            CHECK(cur.xmax >= prev.xmax);
            CHECK(cur.xmin <= prev.xmin);
            prev = cur;
        }
    }
}

TEST_CASE("circular asterism") {
    SECTION("single on-axis star") {
        const auto stars = circular_asterism(1, 0.0);
        REQUIRE(stars.size() == 1);
        CHECK(stars[0].direction.norm() == 0.0);
        CHECK(stars[0].kind == StarKind::NGS);
    }

    SECTION("reference asterism: six stars at 1.5 arcmin") {
        const auto stars = circular_asterism(6, 1.5);
        REQUIRE(stars.size() == 6);
        for (std::size_t k = 0; k < stars.size(); ++k) {
            CHECK(stars[k].direction.norm() == Approx(4.3633e-4).epsilon(1e-4));
            const double angle = std::atan2(stars[k].direction.y(), stars[k].direction.x());
            const double expect = 2.0 * M_PI * k / 6.0;
            const double wrapped = expect > M_PI ? expect - 2.0 * M_PI : expect;
            CHECK(angle == Approx(wrapped).margin(1e-12));
        }
    }

    SECTION("four stars at 1 arcmin hit the axes") {
        const auto stars = circular_asterism(4, 1.0);
        CHECK(stars[0].direction.x() == Approx(2.9089e-4).epsilon(1e-4));
        CHECK(stars[1].direction.y() == Approx(2.9089e-4).epsilon(1e-4));
        CHECK(stars[2].direction.x() == Approx(-2.9089e-4).epsilon(1e-4));
        CHECK(stars[3].direction.y() == Approx(-2.9089e-4).epsilon(1e-4));
    }
}

TEST_CASE("layer grid and cover_domain") {
    const Rect box{-5.0, 5.0, -5.0, 5.0};
    const LayerGrid grid = cover_domain(box, 1000.0, 0.5);
    CHECK(grid.covers(box));
    // padded by at least one cell on each side
    CHECK(grid.origin.x() <= box.xmin - 0.5);
    CHECK(grid.origin.y() <= box.ymin - 0.5);
    CHECK(grid.origin.x() + grid.spacing * (grid.nx - 1) >= box.xmax + 0.5);

    CHECK_THROWS_AS(LayerGrid(0.0, Vec2(0, 0), -1.0, 4, 4), invalid_geometry_error);
    CHECK_THROWS_AS(LayerGrid(0.0, Vec2(0, 0), 1.0, 1, 4), invalid_geometry_error);
}

TEST_CASE("aperture validation") {
    CHECK_THROWS_AS(Aperture(5.0, 5.0), invalid_geometry_error);
    CHECK_THROWS_AS(Aperture(-1.0, 5.0), invalid_geometry_error);
    const Aperture annulus(1.0, 5.0);
    CHECK(annulus.contains({3.0, 0.0}));
    CHECK(!annulus.contains({0.5, 0.0}));
    CHECK(!annulus.contains({6.0, 0.0}));
}

TEST_CASE("evaluation grid") {
    const auto grid = EvaluationGrid::square(5, 3.0);
    REQUIRE(grid.directions.size() == 25);
    const double half = arcmin_to_rad(1.5);
    CHECK(grid.directions.front().x() == Approx(-half));
    CHECK(grid.directions.back().y() == Approx(half));
    // contains the center
    bool has_center = false;
    for (const auto& d : grid.directions)
        if (d.norm() < 1e-15) has_center = true;
    CHECK(has_center);
}
