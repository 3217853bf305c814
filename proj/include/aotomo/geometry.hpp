#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "aotomo/common.hpp"

namespace aotomo {

using Vec2 = Eigen::Vector2d;

/// Annular telescope pupil. Radii in meters, outer > inner >= 0.
struct Aperture {
    double inner_radius = 0.0;
    double outer_radius = 0.0;

    Aperture() = default;
    Aperture(double inner, double outer) : inner_radius(inner), outer_radius(outer) {
        if (!(outer > inner) || inner < 0.0)
            throw invalid_geometry_error("aperture radii must satisfy outer > inner >= 0");
    }

    bool contains(const Vec2& r) const {
        const double n = r.norm();
        return n >= inner_radius && n <= outer_radius;
    }
};

enum class StarKind { NGS, LGS };

/// Guide star direction (x/y components of the 3D direction vector with unit
/// z-component, i.e. small angles in radians). LGS carry a beacon altitude.
struct GuideStar {
    Vec2 direction = Vec2::Zero();
    StarKind kind = StarKind::NGS;
    double beacon_altitude = 0.0;  // meters, LGS only

    static GuideStar ngs(const Vec2& direction) {
        return GuideStar{direction, StarKind::NGS, 0.0};
    }
    static GuideStar lgs(const Vec2& direction, double beacon_altitude) {
        if (!(beacon_altitude > 0.0))
            throw invalid_geometry_error("LGS beacon altitude must be positive");
        return GuideStar{direction, StarKind::LGS, beacon_altitude};
    }
};

/// Cone compression factor for a layer at altitude h seen through this star.
/// 1 for NGS, 1 - h/h_lgs for LGS.
inline double cone_scale(double altitude, const GuideStar& star) {
    if (star.kind == StarKind::NGS) return 1.0;
    if (altitude >= star.beacon_altitude)
        throw invalid_geometry_error("layer at or above LGS beacon altitude");
    return 1.0 - altitude / star.beacon_altitude;
}

/// Aperture point r mapped onto the layer plane at the given altitude:
/// c_l * r + h * alpha.
inline Vec2 project_point(const Vec2& r, double altitude, const GuideStar& star) {
    return cone_scale(altitude, star) * r + altitude * star.direction;
}

/// Axis-aligned rectangle, meters.
struct Rect {
    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }

    void expand_to(const Rect& other) {
        xmin = std::min(xmin, other.xmin);
        xmax = std::max(xmax, other.xmax);
        ymin = std::min(ymin, other.ymin);
        ymax = std::max(ymax, other.ymax);
    }
};

/// Bounding box of the union over all stars of the scaled-and-shifted aperture
/// footprints on the layer at the given altitude.
inline Rect visible_domain(double altitude, const std::vector<GuideStar>& stars,
                           const Aperture& aperture) {
    if (stars.empty())
        throw invalid_geometry_error("visible_domain requires a nonempty asterism");
    bool first = true;
    Rect box;
    for (const auto& star : stars) {
        const double c = cone_scale(altitude, star);
        const Vec2 shift = altitude * star.direction;
        const double half = c * aperture.outer_radius;
        Rect footprint{shift.x() - half, shift.x() + half, shift.y() - half, shift.y() + half};
        if (first) {
            box = footprint;
            first = false;
        } else {
            box.expand_to(footprint);
        }
    }
    return box;
}

/// Regular Cartesian grid on a layer plane. Nodes at origin + (i,j)*spacing,
/// i in [0, nx), j in [0, ny); flat index = i + nx*j.
struct LayerGrid {
    double altitude = 0.0;
    Vec2 origin = Vec2::Zero();
    double spacing = 0.0;
    int nx = 0, ny = 0;

    LayerGrid() = default;
    LayerGrid(double altitude_, const Vec2& origin_, double spacing_, int nx_, int ny_)
        : altitude(altitude_), origin(origin_), spacing(spacing_), nx(nx_), ny(ny_) {
        if (!(spacing > 0.0) || nx < 2 || ny < 2)
            throw invalid_geometry_error("layer grid needs spacing > 0 and nx, ny >= 2");
    }

    int size() const { return nx * ny; }

    Vec2 node(int flat) const {
        const int i = flat % nx;
        const int j = flat / nx;
        return origin + spacing * Vec2(i, j);
    }

    bool covers(const Rect& r) const {
        const double xmax = origin.x() + spacing * (nx - 1);
        const double ymax = origin.y() + spacing * (ny - 1);
        return r.xmin >= origin.x() && r.xmax <= xmax && r.ymin >= origin.y() && r.ymax <= ymax;
    }
};

/// Grid covering the rectangle with one extra interpolation cell of padding on
/// every side.
inline LayerGrid cover_domain(const Rect& box, double altitude, double spacing) {
    if (!(spacing > 0.0)) throw invalid_geometry_error("grid spacing must be positive");
    const double x0 = box.xmin - spacing;
    const double y0 = box.ymin - spacing;
    const int nx = static_cast<int>(std::ceil((box.xmax + spacing - x0) / spacing)) + 1;
    const int ny = static_cast<int>(std::ceil((box.ymax + spacing - y0) / spacing)) + 1;
    return LayerGrid(altitude, Vec2(x0, y0), spacing, std::max(nx, 2), std::max(ny, 2));
}

/// n NGS directions equally spaced on a circle of the given angular radius,
/// first star at angle zero.
inline std::vector<GuideStar> circular_asterism(int n, double radius_arcmin) {
    if (n < 1 || radius_arcmin < 0.0)
        throw invalid_geometry_error("circular_asterism needs n >= 1 and radius >= 0");
    const double radius = arcmin_to_rad(radius_arcmin);
    std::vector<GuideStar> stars;
    stars.reserve(n);
    for (int k = 0; k < n; ++k) {
        const double phi = 2.0 * 3.14159265358979323846 * k / n;
        stars.push_back(GuideStar::ngs(radius * Vec2(std::cos(phi), std::sin(phi))));
    }
    return stars;
}

/// Directions (radians) in which reconstruction quality is evaluated.
struct EvaluationGrid {
    std::vector<Vec2> directions;

    /// k x k Cartesian grid spanning a square field of view of the given width.
    static EvaluationGrid square(int k, double fov_arcmin) {
        if (k < 1) throw invalid_geometry_error("evaluation grid needs k >= 1");
        EvaluationGrid grid;
        const double half = arcmin_to_rad(fov_arcmin) / 2.0;
        for (int j = 0; j < k; ++j)
            for (int i = 0; i < k; ++i) {
                const double x = (k == 1) ? 0.0 : -half + 2.0 * half * i / (k - 1);
                const double y = (k == 1) ? 0.0 : -half + 2.0 * half * j / (k - 1);
                grid.directions.emplace_back(x, y);
            }
        return grid;
    }
};

}  // namespace aotomo
