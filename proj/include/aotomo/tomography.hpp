#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "aotomo/common.hpp"
#include "aotomo/geometry.hpp"
#include "aotomo/turbulence.hpp"

namespace aotomo {

/// One wavefront per guide star, values on the in-pupil aperture nodes.
struct WavefrontSet {
    std::vector<Eigen::VectorXd> star_data;

    int star_count() const { return static_cast<int>(star_data.size()); }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& d : star_data) s += d.squaredNorm();
        return s;
    }

    WavefrontSet& operator-=(const WavefrontSet& other) {
        for (std::size_t g = 0; g < star_data.size(); ++g) star_data[g] -= other.star_data[g];
        return *this;
    }
    WavefrontSet& operator*=(double a) {
        for (auto& d : star_data) d *= a;
        return *this;
    }
};

inline double dot(const WavefrontSet& a, const WavefrontSet& b) {
    double s = 0.0;
    for (std::size_t g = 0; g < a.star_data.size(); ++g) s += a.star_data[g].dot(b.star_data[g]);
    return s;
}

/// Gaussian measurement noise, C_eta = sigma^2 I. sigma = 0 means noiseless
/// data with unit noise weighting in the functionals.
struct NoiseModel {
    double sigma = 0.0;
    std::uint64_t seed = 0;

    NoiseModel() = default;
    NoiseModel(double sigma_, std::uint64_t seed_) : sigma(sigma_), seed(seed_) {
        if (sigma < 0.0) throw invalid_geometry_error("noise sigma must be nonnegative");
    }

    double inv_variance() const { return sigma > 0.0 ? 1.0 / (sigma * sigma) : 1.0; }
};

/// Bilinear interpolation stencil: four layer-grid node indices and weights.
struct Stencil {
    int idx[4];
    double w[4];
};

/// Discretized tomography operator: per star and layer, one bilinear stencil
/// for every in-pupil aperture node. Immutable after construction.
class TomographyOperator {
  public:
    const Aperture& aperture() const { return aperture_; }
    const std::vector<GuideStar>& stars() const { return stars_; }
    const std::vector<LayerGrid>& layer_grids() const { return layer_grids_; }
    int star_count() const { return static_cast<int>(stars_.size()); }
    int layer_count() const { return static_cast<int>(layer_grids_.size()); }
    int pupil_size() const { return static_cast<int>(pupil_nodes_.size()); }
    double cell_area() const { return spacing_ * spacing_; }
    double aperture_spacing() const { return spacing_; }
    const std::vector<Vec2>& pupil_nodes() const { return pupil_nodes_; }

    WavefrontSet forward(const LayerStack& phi) const {
        check_stack(phi);
        WavefrontSet out;
        out.star_data.resize(stars_.size());
        const int np = pupil_size();
        for (std::size_t g = 0; g < stars_.size(); ++g) {
            Eigen::VectorXd data = Eigen::VectorXd::Zero(np);
            for (std::size_t l = 0; l < layer_grids_.size(); ++l) {
                const auto& st = stencils_[g][l];
                const auto& field = phi.layers[l];
                for (int p = 0; p < np; ++p) {
                    const Stencil& s = st[p];
                    data[p] += s.w[0] * field[s.idx[0]] + s.w[1] * field[s.idx[1]] +
                               s.w[2] * field[s.idx[2]] + s.w[3] * field[s.idx[3]];
                }
            }
            out.star_data[g] = std::move(data);
        }
        return out;
    }

    /// Exact transpose of forward: splat each pupil value to its stencil
    /// nodes. Accumulation order over stars and layers is fixed so results
    /// are bitwise reproducible.
    LayerStack adjoint(const WavefrontSet& data) const {
        if (data.star_count() != star_count())
            throw constraint_violation_error("wavefront set does not match asterism");
        LayerStack out;
        out.layers.reserve(layer_grids_.size());
        for (const auto& grid : layer_grids_) out.layers.push_back(LayerField::Zero(grid.size()));
        const int np = pupil_size();
        for (std::size_t g = 0; g < stars_.size(); ++g) {
            for (std::size_t l = 0; l < layer_grids_.size(); ++l) {
                const auto& st = stencils_[g][l];
                auto& field = out.layers[l];
                for (int p = 0; p < np; ++p) {
                    const Stencil& s = st[p];
                    const double v = data.star_data[g][p];
                    field[s.idx[0]] += s.w[0] * v;
                    field[s.idx[1]] += s.w[1] * v;
                    field[s.idx[2]] += s.w[2] * v;
                    field[s.idx[3]] += s.w[3] * v;
                }
            }
        }
        return out;
    }

    friend TomographyOperator build_operator(const Aperture& aperture, int n_ap,
                                             const std::vector<GuideStar>& stars,
                                             const std::vector<LayerGrid>& layer_grids);

  private:
    void check_stack(const LayerStack& phi) const {
        if (phi.layer_count() != layer_count())
            throw constraint_violation_error("layer stack does not match operator grids");
        for (std::size_t l = 0; l < layer_grids_.size(); ++l)
            if (phi.layers[l].size() != layer_grids_[l].size())
                throw constraint_violation_error("layer field size does not match its grid");
    }

    Aperture aperture_;
    std::vector<GuideStar> stars_;
    std::vector<LayerGrid> layer_grids_;
    std::vector<Vec2> pupil_nodes_;
    double spacing_ = 0.0;
    // stencils_[g][l][p]
    std::vector<std::vector<std::vector<Stencil>>> stencils_;
};

/// Build stencils for all in-pupil nodes of an n_ap x n_ap aperture sampling.
inline TomographyOperator build_operator(const Aperture& aperture, int n_ap,
                                         const std::vector<GuideStar>& stars,
                                         const std::vector<LayerGrid>& layer_grids) {
    if (n_ap < 2) throw invalid_geometry_error("aperture sampling needs n_ap >= 2");
    if (stars.empty()) throw invalid_geometry_error("operator needs a nonempty asterism");

    TomographyOperator op;
    op.aperture_ = aperture;
    op.stars_ = stars;
    op.layer_grids_ = layer_grids;
    op.spacing_ = 2.0 * aperture.outer_radius / (n_ap - 1);

    const double R = aperture.outer_radius;
    const double tol = 1e-9 * R;
    for (int j = 0; j < n_ap; ++j)
        for (int i = 0; i < n_ap; ++i) {
            const Vec2 r(-R + op.spacing_ * i, -R + op.spacing_ * j);
            const double n = r.norm();
            if (n >= aperture.inner_radius - tol && n <= R + tol) op.pupil_nodes_.push_back(r);
        }

    op.stencils_.resize(stars.size());
    for (std::size_t g = 0; g < stars.size(); ++g) {
        op.stencils_[g].resize(layer_grids.size());
        for (std::size_t l = 0; l < layer_grids.size(); ++l) {
            const LayerGrid& grid = layer_grids[l];
            auto& st = op.stencils_[g][l];
            st.resize(op.pupil_nodes_.size());
            for (std::size_t p = 0; p < op.pupil_nodes_.size(); ++p) {
                const Vec2 src = project_point(op.pupil_nodes_[p], grid.altitude, stars[g]);
                const double fx = (src.x() - grid.origin.x()) / grid.spacing;
                const double fy = (src.y() - grid.origin.y()) / grid.spacing;
                const int ix = static_cast<int>(std::floor(fx));
                const int iy = static_cast<int>(std::floor(fy));
                if (ix < 0 || iy < 0 || ix + 1 >= grid.nx || iy + 1 >= grid.ny)
                    throw grid_coverage_error(
                        "source point outside layer grid for star " + std::to_string(g) +
                        ", layer " + std::to_string(l));
                const double tx = fx - ix;
                const double ty = fy - iy;
                Stencil s;
                s.idx[0] = ix + grid.nx * iy;
                s.idx[1] = (ix + 1) + grid.nx * iy;
                s.idx[2] = ix + grid.nx * (iy + 1);
                s.idx[3] = (ix + 1) + grid.nx * (iy + 1);
                s.w[0] = (1.0 - tx) * (1.0 - ty);
                s.w[1] = tx * (1.0 - ty);
                s.w[2] = (1.0 - tx) * ty;
                s.w[3] = tx * ty;
                st[p] = s;
            }
        }
    }
    return op;
}

/// Default layer grids for an operator: bounding box of the visible domain at
/// each altitude (for the given stars plus any extra directions that must be
/// covered), sampled at the aperture spacing unless overridden.
inline std::vector<LayerGrid> default_layer_grids(const Aperture& aperture, int n_ap,
                                                  const std::vector<GuideStar>& stars,
                                                  const std::vector<double>& altitudes,
                                                  const std::vector<Vec2>& extra_directions = {},
                                                  double spacing_override = 0.0) {
    std::vector<GuideStar> all = stars;
    for (const auto& d : extra_directions) all.push_back(GuideStar::ngs(d));
    const double spacing =
        spacing_override > 0.0 ? spacing_override : 2.0 * aperture.outer_radius / (n_ap - 1);
    std::vector<LayerGrid> grids;
    grids.reserve(altitudes.size());
    for (double h : altitudes)
        grids.push_back(cover_domain(visible_domain(h, all, aperture), h, spacing));
    return grids;
}

struct SpectralNormEstimate {
    double lambda_max = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Power iteration on a self-adjoint positive map given as a callable
/// v -> M v on Eigen vectors stacked into a single flat vector.
template <class Apply>
SpectralNormEstimate power_iteration(const Apply& apply, Eigen::Index dim, double tol = 1e-6,
                                     int max_iter = 500, std::uint64_t seed = 12345) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd x(dim);
    for (Eigen::Index i = 0; i < dim; ++i) x[i] = normal(rng);
    x.normalize();

    SpectralNormEstimate est;
    double prev = 0.0;
    for (int k = 0; k < max_iter; ++k) {
        Eigen::VectorXd y = apply(x);
        const double rayleigh = x.dot(y);
        est.lambda_max = rayleigh;
        est.iterations = k + 1;
        const double norm = y.norm();
        if (norm == 0.0) {
            est.converged = true;
            est.lambda_max = 0.0;
            return est;
        }
        x = y / norm;
        if (k > 0 && std::abs(rayleigh - prev) <= tol * std::abs(rayleigh)) {
            est.converged = true;
            return est;
        }
        prev = rayleigh;
    }
    return est;  // best estimate, converged stays false
}

namespace detail {

inline Eigen::VectorXd flatten(const LayerStack& s) {
    Eigen::Index total = 0;
    for (const auto& f : s.layers) total += f.size();
    Eigen::VectorXd out(total);
    Eigen::Index at = 0;
    for (const auto& f : s.layers) {
        out.segment(at, f.size()) = f;
        at += f.size();
    }
    return out;
}

inline LayerStack unflatten(const Eigen::VectorXd& v, const std::vector<LayerGrid>& grids) {
    LayerStack s;
    Eigen::Index at = 0;
    for (const auto& g : grids) {
        s.layers.push_back(v.segment(at, g.size()));
        at += g.size();
    }
    return s;
}

}  // namespace detail

/// Largest eigenvalue of A^T C_eta^{-1} A by power iteration.
inline SpectralNormEstimate estimate_spectral_norm(const TomographyOperator& op,
                                                   const NoiseModel& noise) {
    Eigen::Index dim = 0;
    for (const auto& g : op.layer_grids()) dim += g.size();
    const double w = noise.inv_variance();
    auto apply = [&](const Eigen::VectorXd& x) {
        LayerStack s = detail::unflatten(x, op.layer_grids());
        WavefrontSet d = op.forward(s);
        d *= w;
        return detail::flatten(op.adjoint(d));
    };
    return power_iteration(apply, dim);
}

/// Add i.i.d. zero-mean Gaussian noise of std sigma per node.
inline WavefrontSet add_noise(const WavefrontSet& data, const NoiseModel& noise) {
    if (noise.sigma == 0.0) return data;
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> normal(0.0, noise.sigma);
    WavefrontSet out = data;
    for (auto& d : out.star_data)
        for (Eigen::Index i = 0; i < d.size(); ++i) d[i] += normal(rng);
    return out;
}

/// Per-gradient-iteration flop count (16G+3) n L + (2-9G) n.
inline long long flop_cost(long long G, long long L, long long n) {
    if (G < 1 || L < 1 || n < 1) throw std::domain_error("flop_cost needs positive counts");
    return (16 * G + 3) * n * L + (2 - 9 * G) * n;
}

}  // namespace aotomo
