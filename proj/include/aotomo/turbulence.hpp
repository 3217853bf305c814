#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "aotomo/common.hpp"
#include "aotomo/geometry.hpp"

namespace aotomo {

using LayerField = Eigen::VectorXd;

/// von Karman statistics of the cumulative turbulence.
struct TurbulenceStatistics {
    double r0 = 0.15;  // Fried parameter, meters
    double L0 = 25.0;  // outer scale, meters

    TurbulenceStatistics() = default;
    TurbulenceStatistics(double r0_, double L0_) : r0(r0_), L0(L0_) {
        if (!(r0 > 0.0) || !(L0 > 0.0))
            throw invalid_profile_error("turbulence statistics need r0 > 0 and L0 > 0");
    }
};

namespace detail {

// c = 2^(1/6) Gamma(11/6) / pi^(8/3) * ((24/5) Gamma(6/5))^(5/6)
inline double von_karman_constant() {
    static const double c = [] {
        const double g116 = std::tgamma(11.0 / 6.0);
        const double g65 = std::tgamma(6.0 / 5.0);
        return std::pow(2.0, 1.0 / 6.0) * g116 / std::pow(M_PI, 8.0 / 3.0) *
               std::pow(24.0 / 5.0 * g65, 5.0 / 6.0);
    }();
    return c;
}

}  // namespace detail

/// Stationary covariance of the cumulative turbulence at separation delta_x.
/// The zero-separation value is the analytic limit of z^(5/6) K_{5/6}(z).
inline double von_karman_covariance(double delta_x, const TurbulenceStatistics& stats) {
    if (delta_x < 0.0)
        throw std::domain_error("von_karman_covariance: negative separation");
    const double c = detail::von_karman_constant();
    const double prefactor = std::pow(stats.L0 / stats.r0, 5.0 / 3.0) * c / 2.0;
    if (delta_x == 0.0)
        return prefactor * std::tgamma(5.0 / 6.0) * std::pow(2.0, -1.0 / 6.0);
    const double z = 2.0 * M_PI * delta_x / stats.L0;
    const double bessel = std::cyl_bessel_k(5.0 / 6.0, z);
    return prefactor * std::pow(z, 5.0 / 6.0) * bessel;
}

/// Normalize nonnegative layer weights to sum one.
inline std::vector<double> normalize_profile(const std::vector<double>& rho) {
    double sum = 0.0;
    for (double r : rho) {
        if (r < 0.0) throw invalid_profile_error("layer weight is negative");
        sum += r;
    }
    if (!(sum > 0.0)) throw invalid_profile_error("layer weights sum to zero");
    std::vector<double> out(rho.size());
    for (std::size_t i = 0; i < rho.size(); ++i) out[i] = rho[i] / sum;
    return out;
}

/// Layer altitudes, relative strengths and common statistics.
struct AtmosphereProfile {
    std::vector<double> altitudes;  // meters, strictly increasing
    std::vector<double> rho;        // normalized to sum 1
    TurbulenceStatistics stats;

    AtmosphereProfile() = default;
    AtmosphereProfile(std::vector<double> altitudes_, std::vector<double> rho_,
                      TurbulenceStatistics stats_)
        : altitudes(std::move(altitudes_)), rho(normalize_profile(rho_)), stats(stats_) {
        if (altitudes.empty() || altitudes.size() != rho.size())
            throw invalid_profile_error("profile needs matching altitude and weight lists");
        if (altitudes.front() < 0.0)
            throw invalid_profile_error("profile altitudes must be nonnegative");
        for (std::size_t l = 1; l < altitudes.size(); ++l)
            if (!(altitudes[l] > altitudes[l - 1]))
                throw invalid_profile_error("profile altitudes must be strictly increasing");
    }

    int layer_count() const { return static_cast<int>(altitudes.size()); }
};

/// Dense von Karman covariance over the nodes of one layer grid, held as a
/// Cholesky factorization of C + jitter*I. Immutable after construction; the
/// factorized solves are read-only and safe to share across threads.
class LayerCovariance {
  public:
    LayerCovariance() = default;

    const LayerGrid& grid() const { return grid_; }
    const TurbulenceStatistics& stats() const { return stats_; }
    double jitter() const { return jitter_; }

    /// Covariance kernel entry between two grid nodes (without jitter).
    double entry(int p, int q) const {
        return von_karman_covariance((grid_.node(p) - grid_.node(q)).norm(), stats_);
    }

    /// C * f via the triangular factor: L (L^T f).
    LayerField apply_cov(const LayerField& f) const {
        check(f);
        return llt_.matrixL() * (llt_.matrixL().transpose() * f);
    }

    /// C^{-1} * f via two triangular solves.
    LayerField apply_inv_cov(const LayerField& f) const {
        check(f);
        return llt_.solve(f);
    }

    /// f^T C^{-1} f >= 0 via one triangular solve.
    double inv_cov_quadratic(const LayerField& f) const {
        check(f);
        const LayerField half = llt_.matrixL().solve(f);
        return half.squaredNorm();
    }

    /// || C^{-1/2} f ||.
    double half_norm(const LayerField& f) const { return std::sqrt(inv_cov_quadratic(f)); }

    /// Draw one zero-mean field with covariance C from i.i.d. standard normals.
    template <class Rng>
    LayerField sample(Rng& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        LayerField z(grid_.size());
        for (int i = 0; i < z.size(); ++i) z[i] = normal(rng);
        return llt_.matrixL() * z;
    }

    friend LayerCovariance build_layer_covariance(const LayerGrid& grid,
                                                 const TurbulenceStatistics& stats,
                                                 int dense_cap);

  private:
    void check(const LayerField& f) const {
        if (f.size() != grid_.size())
            throw constraint_violation_error("field length does not match covariance grid");
    }

    LayerGrid grid_;
    TurbulenceStatistics stats_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double jitter_ = 0.0;
};

/// Assemble the dense covariance and factorize, escalating a diagonal jitter
/// from 1e-12 to 1e-8 of the mean diagonal if the factorization fails.
inline LayerCovariance build_layer_covariance(const LayerGrid& grid,
                                              const TurbulenceStatistics& stats,
                                              int dense_cap = 4096) {
    const int n = grid.size();
    if (n > dense_cap)
        throw ill_conditioned_covariance_error(
            "layer grid exceeds the dense factorization cap (" + std::to_string(n) + " > " +
            std::to_string(dense_cap) + " nodes)");

    Eigen::MatrixXd cov(n, n);
    for (int q = 0; q < n; ++q) {
        const Vec2 xq = grid.node(q);
        for (int p = q; p < n; ++p) {
            const double v = von_karman_covariance((grid.node(p) - xq).norm(), stats);
            cov(p, q) = v;
            cov(q, p) = v;
        }
    }

    LayerCovariance out;
    out.grid_ = grid;
    out.stats_ = stats;
    const double mean_diag = cov.diagonal().mean();
    for (double rel : {0.0, 1e-12, 1e-10, 1e-8}) {
        Eigen::MatrixXd attempt = cov;
        if (rel > 0.0) attempt.diagonal().array() += rel * mean_diag;
        out.llt_.compute(attempt);
        if (out.llt_.info() == Eigen::Success) {
            out.jitter_ = rel * mean_diag;
            return out;
        }
    }
    throw ill_conditioned_covariance_error(
        "covariance factorization failed even with maximum jitter");
}

/// Per-layer fields, each bound to its layer grid.
struct LayerStack {
    std::vector<LayerField> layers;

    LayerStack() = default;
    explicit LayerStack(std::vector<LayerField> layers_) : layers(std::move(layers_)) {}

    static LayerStack zeros_like(const std::vector<LayerCovariance>& covs) {
        LayerStack s;
        s.layers.reserve(covs.size());
        for (const auto& c : covs) s.layers.push_back(LayerField::Zero(c.grid().size()));
        return s;
    }

    int layer_count() const { return static_cast<int>(layers.size()); }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& f : layers) s += f.squaredNorm();
        return s;
    }

    LayerStack& operator+=(const LayerStack& other) {
        for (std::size_t l = 0; l < layers.size(); ++l) layers[l] += other.layers[l];
        return *this;
    }
    LayerStack& operator-=(const LayerStack& other) {
        for (std::size_t l = 0; l < layers.size(); ++l) layers[l] -= other.layers[l];
        return *this;
    }
    LayerStack& operator*=(double a) {
        for (auto& f : layers) f *= a;
        return *this;
    }
};

inline double dot(const LayerStack& a, const LayerStack& b) {
    double s = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) s += a.layers[l].dot(b.layers[l]);
    return s;
}

/// Independent zero-mean Gaussian fields with covariance rho_l * C_Phi per
/// layer. Deterministic for a given seed.
inline LayerStack sample_atmosphere(const AtmosphereProfile& profile,
                                    const std::vector<LayerCovariance>& covs,
                                    std::uint64_t seed) {
    if (static_cast<std::size_t>(profile.layer_count()) != covs.size())
        throw invalid_profile_error("profile layer count does not match covariance list");
    std::mt19937_64 rng(seed);
    LayerStack stack;
    stack.layers.reserve(covs.size());
    for (std::size_t l = 0; l < covs.size(); ++l)
        stack.layers.push_back(std::sqrt(profile.rho[l]) * covs[l].sample(rng));
    return stack;
}

}  // namespace aotomo
