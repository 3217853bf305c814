#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "aotomo/common.hpp"
#include "aotomo/tomography.hpp"
#include "aotomo/turbulence.hpp"

namespace aotomo {

/// Disjoint cover of the layers {0..L-1} with prescribed cluster energies d_i.
struct ClusterPartition {
    std::vector<std::vector<int>> clusters;
    std::vector<double> d;

    ClusterPartition() = default;
    ClusterPartition(std::vector<std::vector<int>> clusters_, std::vector<double> d_, int layer_count)
        : clusters(std::move(clusters_)), d(std::move(d_)) {
        if (clusters.empty() || clusters.size() != d.size())
            throw constraint_violation_error("cluster sets and energies must match and be nonempty");
        std::vector<int> seen(layer_count, 0);
        for (const auto& b : clusters) {
            if (b.empty()) throw constraint_violation_error("empty cluster");
            for (int l : b) {
                if (l < 0 || l >= layer_count || seen[l]++)
                    throw constraint_violation_error("clusters must disjointly cover all layers");
            }
        }
        for (int s : seen)
            if (!s) throw constraint_violation_error("clusters must disjointly cover all layers");
        double sum = 0.0;
        for (double di : d) {
            if (!(di > 0.0)) throw constraint_violation_error("cluster energies must be positive");
            sum += di;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw constraint_violation_error("cluster energies must sum to 1");
    }

    static ClusterPartition single(int layer_count) {
        std::vector<int> all(layer_count);
        std::iota(all.begin(), all.end(), 0);
        return ClusterPartition({all}, {1.0}, layer_count);
    }

    int cluster_count() const { return static_cast<int>(clusters.size()); }
};

enum class SolverVariant { AM, AMDirect, ISTA, FISTA };
enum class StepsizeRule { Constant, SteepestDescent };

struct SolverConfig {
    SolverVariant variant = SolverVariant::AM;
    double alpha = 0.1;
    double epsilon = 1e-6;   // weight-matrix floor (AM); AM-direct default is 1e-10
    int inner = 10;
    int outer = 100;
    double lambda = 0.0;     // stepsize denominator; <= 0 means auto (1.05 x spectral estimate)
    StepsizeRule stepsize_rule = StepsizeRule::Constant;
    std::vector<double> rho_init;  // empty means ground-heavy
    bool freeze_rho = false;       // fixed-weight gradient baseline
    double rel_tol = 1e-9;

    void validate() const {
        if (!(alpha > 0.0)) throw config_error("solver alpha must be positive");
        if (epsilon < 0.0) throw config_error("solver epsilon must be nonnegative");
        if (inner < 1 || outer < 1) throw config_error("iteration counts must be >= 1");
    }
};

/// Named initial-weight presets.
inline std::vector<double> rho_init_ground_heavy(int layer_count) {
    std::vector<double> rho(layer_count, layer_count > 1 ? 0.5 / (layer_count - 1) : 1.0);
    rho[0] = layer_count > 1 ? 0.5 : 1.0;
    return rho;
}

inline std::vector<double> rho_init_uniform(int layer_count) {
    return std::vector<double>(layer_count, 1.0 / layer_count);
}

struct ReconstructionResult {
    LayerStack phi;
    std::vector<double> rho;
    std::vector<double> objective_trace;               // one value per outer iteration
    std::vector<std::vector<double>> gamma_trace;      // ISTA/FISTA threshold history
    bool converged = false;
    bool diverged = false;
    int iterations = 0;
    double lambda_used = 0.0;
    double offending_stepsize = 0.0;  // set when diverged
};

// ---------------------------------------------------------------------------
// Objectives

inline double data_misfit(const TomographyOperator& op, const LayerStack& phi,
                          const WavefrontSet& data, const NoiseModel& noise) {
    WavefrontSet r = op.forward(phi);
    r -= data;
    return noise.inv_variance() * r.squared_norm();
}

/// K(Psi, rho): data fit of A W_rho Psi plus alpha * sum_l Psi^T C^{-1} Psi.
inline double objective_K(const LayerStack& psi, const std::vector<double>& rho,
                          const TomographyOperator& op, const WavefrontSet& data,
                          const NoiseModel& noise, double alpha,
                          const std::vector<LayerCovariance>& covs) {
    LayerStack phi = psi;
    for (std::size_t l = 0; l < phi.layers.size(); ++l) {
        if (rho[l] < 0.0) throw constraint_violation_error("negative layer weight");
        phi.layers[l] *= std::sqrt(rho[l]);
    }
    double penalty = 0.0;
    for (std::size_t l = 0; l < psi.layers.size(); ++l)
        penalty += covs[l].inv_cov_quadratic(psi.layers[l]);
    return data_misfit(op, phi, data, noise) + alpha * penalty;
}

/// F(Phi, rho): data fit plus alpha * sum_{rho_l > 0} (1/rho_l) Phi^T C^{-1} Phi.
/// Layers with rho_l = 0 must be identically zero (the pseudoinverse range
/// constraint).
inline double objective_F(const LayerStack& phi, const std::vector<double>& rho,
                          const TomographyOperator& op, const WavefrontSet& data,
                          const NoiseModel& noise, double alpha,
                          const std::vector<LayerCovariance>& covs) {
    double penalty = 0.0;
    for (std::size_t l = 0; l < phi.layers.size(); ++l) {
        if (rho[l] < 0.0) throw constraint_violation_error("negative layer weight");
        if (rho[l] == 0.0) {
            if (phi.layers[l].squaredNorm() > 0.0)
                throw constraint_violation_error("nonzero layer with zero weight");
            continue;
        }
        penalty += covs[l].inv_cov_quadratic(phi.layers[l]) / rho[l];
    }
    return data_misfit(op, phi, data, noise) + alpha * penalty;
}

/// The epsilon-regularized F actually iterated by the alternating scheme.
inline double objective_F_regularized(const LayerStack& phi, const std::vector<double>& rho,
                                      double epsilon, const TomographyOperator& op,
                                      const WavefrontSet& data, const NoiseModel& noise,
                                      double alpha, const std::vector<LayerCovariance>& covs) {
    double penalty = 0.0;
    for (std::size_t l = 0; l < phi.layers.size(); ++l)
        penalty += covs[l].inv_cov_quadratic(phi.layers[l]) / (rho[l] + epsilon);
    return data_misfit(op, phi, data, noise) + alpha * penalty;
}

/// G(Phi): data fit plus alpha * sum_i (1/d_i) (sum_{l in B_i} ||C^{-1/2} Phi_l||)^2.
inline double objective_G(const LayerStack& phi, const ClusterPartition& partition,
                          const TomographyOperator& op, const WavefrontSet& data,
                          const NoiseModel& noise, double alpha,
                          const std::vector<LayerCovariance>& covs) {
    double penalty = 0.0;
    for (std::size_t i = 0; i < partition.clusters.size(); ++i) {
        double s = 0.0;
        for (int l : partition.clusters[i]) s += covs[l].half_norm(phi.layers[l]);
        penalty += s * s / partition.d[i];
    }
    return data_misfit(op, phi, data, noise) + alpha * penalty;
}

// ---------------------------------------------------------------------------
// Closed-form strength update

/// Weight update: per cluster, rho_l proportional to ||C^{-1/2} Phi_l||,
/// normalized to the cluster energy. All-zero clusters get a uniform split.
inline std::vector<double> rho_update(const LayerStack& phi, const ClusterPartition& partition,
                                      const std::vector<LayerCovariance>& covs) {
    std::vector<double> rho(phi.layers.size(), 0.0);
    for (std::size_t i = 0; i < partition.clusters.size(); ++i) {
        const auto& b = partition.clusters[i];
        double sum = 0.0;
        std::vector<double> norms(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) {
            norms[k] = covs[b[k]].half_norm(phi.layers[b[k]]);
            sum += norms[k];
        }
        if (sum > 0.0) {
            for (std::size_t k = 0; k < b.size(); ++k)
                rho[b[k]] = partition.d[i] * norms[k] / sum;
        } else {
            for (int l : b) rho[l] = partition.d[i] / b.size();
        }
    }
    return rho;
}

namespace detail {

/// Exact minimizer of sum_l n_l^2 / (rho_l + eps) over the cluster simplex,
/// the regularized counterpart of the closed-form update. Reduces to it for
/// eps = 0; the projection handles entries driven negative by the shift.
inline void rho_update_regularized_cluster(const std::vector<double>& norms, double d, double eps,
                                           std::vector<double>& out) {
    const std::size_t m = norms.size();
    out.assign(m, 0.0);
    double total = 0.0;
    for (double n : norms) total += n;
    if (total == 0.0) {
        out.assign(m, d / m);
        return;
    }
    // Active-set solve for rho_l = max(0, t * n_l - eps) with sum = d.
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
    double active_sum = 0.0;
    double t = 0.0;
    std::size_t active = 0;
    for (std::size_t k = 0; k < m; ++k) {
        if (norms[order[k]] <= 0.0) break;
        active_sum += norms[order[k]];
        const double t_try = (d + (k + 1) * eps) / active_sum;
        // valid if the next candidate would stay at zero
        const double next = (k + 1 < m) ? norms[order[k + 1]] : 0.0;
        if (t_try * next - eps <= 0.0) {
            t = t_try;
            active = k + 1;
            break;
        }
    }
    for (std::size_t k = 0; k < active; ++k)
        out[order[k]] = std::max(0.0, t * norms[order[k]] - eps);
    // renormalize away clipping round-off
    double s = 0.0;
    for (double r : out) s += r;
    if (s > 0.0)
        for (double& r : out) r *= d / s;
}

inline std::vector<double> rho_update_regularized(const LayerStack& phi,
                                                  const ClusterPartition& partition,
                                                  const std::vector<LayerCovariance>& covs,
                                                  double eps) {
    std::vector<double> rho(phi.layers.size(), 0.0);
    std::vector<double> norms, cluster_rho;
    for (std::size_t i = 0; i < partition.clusters.size(); ++i) {
        const auto& b = partition.clusters[i];
        norms.resize(b.size());
        for (std::size_t k = 0; k < b.size(); ++k)
            norms[k] = covs[b[k]].half_norm(phi.layers[b[k]]);
        rho_update_regularized_cluster(norms, partition.d[i], eps, cluster_rho);
        for (std::size_t k = 0; k < b.size(); ++k) rho[b[k]] = cluster_rho[k];
    }
    return rho;
}

inline LayerStack grad_data(const TomographyOperator& op, const LayerStack& phi,
                            const WavefrontSet& data, const NoiseModel& noise) {
    WavefrontSet r = data;
    r -= op.forward(phi);
    r *= noise.inv_variance();
    return op.adjoint(r);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Proximal machinery

/// Group soft-threshold parameters, one per cluster. Norms are sorted in
/// descending order (ties broken by layer index) and the threshold is
/// gamma_m = beta/(1 + l* beta) * sum of the l* largest norms, beta = 2 alpha / (lambda d_m).
inline std::vector<double> prox_thresholds(const LayerStack& phi, const ClusterPartition& partition,
                                           double alpha, double lambda,
                                           const std::vector<LayerCovariance>& covs) {
    if (!(lambda > 0.0)) throw config_error("prox_thresholds needs lambda > 0");
    std::vector<double> gammas(partition.clusters.size(), 0.0);
    for (std::size_t m = 0; m < partition.clusters.size(); ++m) {
        const auto& b = partition.clusters[m];
        std::vector<double> norms(b.size());
        for (std::size_t k = 0; k < b.size(); ++k)
            norms[k] = covs[b[k]].half_norm(phi.layers[b[k]]);
        std::stable_sort(norms.begin(), norms.end(), std::greater<double>());
        if (norms[0] == 0.0) continue;
        const double beta = 2.0 * alpha / (lambda * partition.d[m]);
        double prefix = 0.0;
        int l_star = 0;
        double gamma = 0.0;
        for (std::size_t l = 1; l <= norms.size(); ++l) {
            prefix += norms[l - 1];
            const double factor = beta / (1.0 + l * beta);
            if (norms[l - 1] - factor * prefix > 0.0) {
                l_star = static_cast<int>(l);
                gamma = factor * prefix;
            }
        }
        (void)l_star;
        gammas[m] = gamma;
    }
    return gammas;
}

/// Radial shrinkage in the C^{-1/2} norm: layers at or below the threshold are
/// set exactly to zero, the rest are scaled by (n - gamma)/n.
inline LayerStack shrink(const LayerStack& phi, const std::vector<double>& gammas,
                         const ClusterPartition& partition,
                         const std::vector<LayerCovariance>& covs) {
    LayerStack out = phi;
    for (std::size_t m = 0; m < partition.clusters.size(); ++m) {
        for (int l : partition.clusters[m]) {
            const double n = covs[l].half_norm(phi.layers[l]);
            if (n <= gammas[m]) {
                out.layers[l].setZero();
            } else if (gammas[m] > 0.0) {
                out.layers[l] *= (n - gammas[m]) / n;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spectral-norm helpers for stepsize selection

/// lambda_max of the prior-whitened data operator L^T A^T C_eta^{-1} A L
/// (equal to that of C^{1/2} A^T C_eta^{-1} A C^{1/2}).
inline SpectralNormEstimate estimate_whitened_norm(const TomographyOperator& op,
                                                   const NoiseModel& noise,
                                                   const std::vector<LayerCovariance>& covs) {
    Eigen::Index dim = 0;
    for (const auto& g : op.layer_grids()) dim += g.size();
    const double w = noise.inv_variance();
    // The map x -> C A^T C_eta^{-1} A x has the same spectrum as the whitened
    // operator (they are similar matrices), so plain power iteration on it
    // converges to the same dominant eigenvalue.
    auto apply = [&](const Eigen::VectorXd& x) {
        LayerStack theta = detail::unflatten(x, op.layer_grids());
        WavefrontSet d = op.forward(theta);
        d *= w;
        LayerStack back = op.adjoint(d);
        for (std::size_t l = 0; l < back.layers.size(); ++l)
            back.layers[l] = covs[l].apply_cov(back.layers[l]);
        return detail::flatten(back);
    };
    return power_iteration(apply, dim, 1e-6, 500);
}

/// Upper bound for lambda_max of A^T C_eta^{-1} A + alpha P(rho)^{-1} C^{-1}:
/// data-term norm plus alpha * max_l lambda_max(C_l^{-1}) / (rho_l + eps).
struct AmStepsizeBound {
    double data_norm = 0.0;
    std::vector<double> inv_cov_norms;

    static AmStepsizeBound compute(const TomographyOperator& op, const NoiseModel& noise,
                                   const std::vector<LayerCovariance>& covs) {
        AmStepsizeBound b;
        b.data_norm = estimate_spectral_norm(op, noise).lambda_max;
        b.inv_cov_norms.reserve(covs.size());
        for (const auto& c : covs) {
            auto apply = [&](const Eigen::VectorXd& x) { return c.apply_inv_cov(x); };
            b.inv_cov_norms.push_back(power_iteration(apply, c.grid().size(), 1e-4, 200).lambda_max);
        }
        return b;
    }

    double lambda(const std::vector<double>& rho, double alpha, double eps) const {
        double prior = 0.0;
        for (std::size_t l = 0; l < inv_cov_norms.size(); ++l)
            prior = std::max(prior, alpha * inv_cov_norms[l] / (rho[l] + eps));
        return data_norm + prior;
    }
};

// ---------------------------------------------------------------------------
// Solvers

namespace detail {

inline std::vector<double> resolve_rho_init(const SolverConfig& config, int layer_count) {
    if (config.rho_init.empty()) return rho_init_ground_heavy(layer_count);
    if (static_cast<int>(config.rho_init.size()) != layer_count)
        throw config_error("rho_init length does not match layer count");
    for (double r : config.rho_init)
        if (r < 0.0) throw config_error("rho_init entries must be nonnegative");
    return config.rho_init;
}

inline bool check_divergence(ReconstructionResult& result, double stepsize) {
    const double obj = result.objective_trace.back();
    const double initial = result.objective_trace.front();
    if (!std::isfinite(obj) || (result.objective_trace.size() > 1 && obj > 10.0 * initial)) {
        result.diverged = true;
        result.offending_stepsize = stepsize;
        return true;
    }
    return false;
}

inline bool check_convergence(const std::vector<double>& trace, double rel_tol) {
    if (trace.size() < 2) return false;
    const double prev = trace[trace.size() - 2];
    const double cur = trace.back();
    const double scale = std::max(std::abs(prev), 1e-300);
    return (prev - cur) / scale < rel_tol && prev >= cur;
}

}  // namespace detail

/// Alternating minimization (Algorithm family: INNER gradient steps on the
/// epsilon-regularized quadratic in Phi, then the closed-form weight update).
inline ReconstructionResult am_reconstruct(const WavefrontSet& data, const TomographyOperator& op,
                                           const std::vector<LayerCovariance>& covs,
                                           const ClusterPartition& partition,
                                           const SolverConfig& config,
                                           const NoiseModel& noise = NoiseModel{}) {
    config.validate();
    const int L = op.layer_count();
    const double eps = config.epsilon;
    const double w = noise.inv_variance();

    ReconstructionResult result;
    result.rho = detail::resolve_rho_init(config, L);
    result.phi = LayerStack::zeros_like(covs);

    AmStepsizeBound bound;
    const bool auto_lambda =
        config.stepsize_rule == StepsizeRule::Constant && !(config.lambda > 0.0);
    if (auto_lambda) bound = AmStepsizeBound::compute(op, noise, covs);

    auto apply_prior = [&](const LayerStack& s, const std::vector<double>& rho) {
        LayerStack out = s;
        for (int l = 0; l < L; ++l)
            out.layers[l] = (config.alpha / (rho[l] + eps)) * covs[l].apply_inv_cov(s.layers[l]);
        return out;
    };

    double tau = 0.0;
    for (int i = 0; i < config.outer; ++i) {
        if (config.stepsize_rule == StepsizeRule::Constant) {
            const double lambda =
                config.lambda > 0.0 ? config.lambda
                                    : 1.05 * bound.lambda(result.rho, config.alpha, eps);
            result.lambda_used = lambda;
            tau = 1.0 / lambda;
        }
        for (int k = 0; k < config.inner; ++k) {
            LayerStack g = detail::grad_data(op, result.phi, data, noise);
            g -= apply_prior(result.phi, result.rho);
            if (config.stepsize_rule == StepsizeRule::SteepestDescent) {
                // exact line search on the quadratic: tau = <g,g> / <g, M g>
                WavefrontSet ag = op.forward(g);
                LayerStack mg = apply_prior(g, result.rho);
                const double denom = w * ag.squared_norm() + dot(g, mg);
                const double num = g.squared_norm();
                tau = denom > 0.0 ? num / denom : 0.0;
            }
            LayerStack step = g;
            step *= tau;
            result.phi += step;
        }
        if (!config.freeze_rho)
            result.rho = detail::rho_update_regularized(result.phi, partition, covs, eps);
        result.objective_trace.push_back(objective_F_regularized(
            result.phi, result.rho, eps, op, data, noise, config.alpha, covs));
        result.iterations = i + 1;
        if (detail::check_divergence(result, tau)) break;
        if (detail::check_convergence(result.objective_trace, config.rel_tol)) {
            result.converged = true;
            break;
        }
    }
    return result;
}

/// Alternating scheme with exact dense solves of the optimality system
/// (A^T C_eta^{-1} A + alpha P(rho)^{-1} C^{-1}) Phi = A^T C_eta^{-1} phi.
inline ReconstructionResult am_direct_solve(const WavefrontSet& data, const TomographyOperator& op,
                                            const std::vector<LayerCovariance>& covs,
                                            const ClusterPartition& partition,
                                            const SolverConfig& config,
                                            const NoiseModel& noise = NoiseModel{},
                                            int dense_cap = 4000) {
    config.validate();
    const int L = op.layer_count();
    const double eps = config.epsilon;
    const double w = noise.inv_variance();

    Eigen::Index dim = 0;
    for (const auto& g : op.layer_grids()) dim += g.size();
    if (dim > dense_cap)
        throw numerical_error("am_direct_solve: unknown count exceeds the dense cap");

    // Assemble dense A and per-layer C^{-1} once.
    const int np = op.pupil_size();
    const int G = op.star_count();
    Eigen::MatrixXd A(static_cast<Eigen::Index>(np) * G, dim);
    {
        LayerStack basis = LayerStack::zeros_like(covs);
        Eigen::Index col = 0;
        for (int l = 0; l < L; ++l) {
            for (int j = 0; j < covs[l].grid().size(); ++j, ++col) {
                basis.layers[l][j] = 1.0;
                WavefrontSet out = op.forward(basis);
                for (int g = 0; g < G; ++g) A.block(g * np, col, np, 1) = out.star_data[g];
                basis.layers[l][j] = 0.0;
            }
        }
    }
    std::vector<Eigen::MatrixXd> inv_cov(L);
    for (int l = 0; l < L; ++l) {
        const int n = covs[l].grid().size();
        Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
        inv_cov[l].resize(n, n);
        for (int j = 0; j < n; ++j) inv_cov[l].col(j) = covs[l].apply_inv_cov(eye.col(j));
    }
    Eigen::VectorXd rhs(dim);
    {
        LayerStack b = op.adjoint(data);
        rhs = w * detail::flatten(b);
    }
    const Eigen::MatrixXd AtA = w * (A.transpose() * A);

    ReconstructionResult result;
    result.rho = detail::resolve_rho_init(config, L);
    result.phi = LayerStack::zeros_like(covs);

    for (int i = 0; i < config.outer; ++i) {
        Eigen::MatrixXd M = AtA;
        Eigen::Index at = 0;
        for (int l = 0; l < L; ++l) {
            const int n = covs[l].grid().size();
            M.block(at, at, n, n) += (config.alpha / (result.rho[l] + eps)) * inv_cov[l];
            at += n;
        }
        Eigen::LDLT<Eigen::MatrixXd> solver(M);
        if (solver.info() != Eigen::Success)
            throw numerical_error("am_direct_solve: optimality system is singular");
        const Eigen::VectorXd sol = solver.solve(rhs);
        result.phi = detail::unflatten(sol, op.layer_grids());
        if (!config.freeze_rho)
            result.rho = detail::rho_update_regularized(result.phi, partition, covs, eps);
        result.objective_trace.push_back(objective_F_regularized(
            result.phi, result.rho, eps, op, data, noise, config.alpha, covs));
        result.iterations = i + 1;
        if (detail::check_convergence(result.objective_trace, config.rel_tol)) {
            result.converged = true;
            break;
        }
    }
    return result;
}

/// Iterative shrinkage-thresholding on the reduced functional G. The gradient
/// step is preconditioned by the prior covariance; the group soft-threshold
/// after each inner block uses alpha/2 so that the composite step is a
/// textbook proximal-gradient step for G itself (monotone for
/// lambda >= lambda_max of the whitened data operator).
inline ReconstructionResult ista_reconstruct(const WavefrontSet& data, const TomographyOperator& op,
                                             const std::vector<LayerCovariance>& covs,
                                             const ClusterPartition& partition,
                                             const SolverConfig& config,
                                             const NoiseModel& noise = NoiseModel{}) {
    config.validate();
    const double w = noise.inv_variance();
    const double lambda = config.lambda > 0.0
                              ? config.lambda
                              : 1.05 * estimate_whitened_norm(op, noise, covs).lambda_max;

    ReconstructionResult result;
    result.lambda_used = lambda;
    result.phi = LayerStack::zeros_like(covs);

    double tau = 1.0 / lambda;
    for (int i = 0; i < config.outer; ++i) {
        for (int k = 0; k < config.inner; ++k) {
            WavefrontSet r = data;
            r -= op.forward(result.phi);
            r *= w;
            LayerStack p = op.adjoint(r);
            for (std::size_t l = 0; l < p.layers.size(); ++l)
                p.layers[l] = covs[l].apply_cov(p.layers[l]);
            if (config.stepsize_rule == StepsizeRule::SteepestDescent) {
                WavefrontSet ap = op.forward(p);
                const double denom = w * ap.squared_norm();
                tau = denom > 0.0 ? dot(ap, r) / denom : 0.0;
            } else {
                tau = 1.0 / lambda;
            }
            p *= tau;
            result.phi += p;
        }
        const std::vector<double> gammas =
            prox_thresholds(result.phi, partition, config.alpha / 2.0, lambda, covs);
        result.phi = shrink(result.phi, gammas, partition, covs);
        result.gamma_trace.push_back(gammas);
        result.objective_trace.push_back(
            objective_G(result.phi, partition, op, data, noise, config.alpha, covs));
        result.iterations = i + 1;
        if (detail::check_divergence(result, tau)) break;
        if (detail::check_convergence(result.objective_trace, config.rel_tol)) {
            result.converged = true;
            break;
        }
    }
    result.rho = rho_update(result.phi, partition, covs);
    return result;
}

/// FISTA: the ISTA step with two-sequence momentum extrapolation. INNER is
/// fixed at one gradient step per proximal application.
inline ReconstructionResult fista_reconstruct(const WavefrontSet& data,
                                              const TomographyOperator& op,
                                              const std::vector<LayerCovariance>& covs,
                                              const ClusterPartition& partition,
                                              const SolverConfig& config,
                                              const NoiseModel& noise = NoiseModel{}) {
    config.validate();
    const double w = noise.inv_variance();
    const double lambda = config.lambda > 0.0
                              ? config.lambda
                              : 1.05 * estimate_whitened_norm(op, noise, covs).lambda_max;

    ReconstructionResult result;
    result.lambda_used = lambda;
    result.phi = LayerStack::zeros_like(covs);
    LayerStack y = result.phi;
    LayerStack phi_old = result.phi;
    double t = 1.0;

    const double tau = 1.0 / lambda;
    for (int i = 0; i < config.outer; ++i) {
        WavefrontSet r = data;
        r -= op.forward(y);
        r *= w;
        LayerStack p = op.adjoint(r);
        for (std::size_t l = 0; l < p.layers.size(); ++l)
            p.layers[l] = covs[l].apply_cov(p.layers[l]);
        p *= tau;
        LayerStack u = y;
        u += p;
        const std::vector<double> gammas =
            prox_thresholds(u, partition, config.alpha / 2.0, lambda, covs);
        phi_old = result.phi;
        result.phi = shrink(u, gammas, partition, covs);
        result.gamma_trace.push_back(gammas);

        const double t_new = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
        y = result.phi;
        LayerStack diff = result.phi;
        diff -= phi_old;
        diff *= (t - 1.0) / t_new;
        y += diff;
        t = t_new;

        result.objective_trace.push_back(
            objective_G(result.phi, partition, op, data, noise, config.alpha, covs));
        result.iterations = i + 1;
        if (detail::check_divergence(result, tau)) break;
        if (detail::check_convergence(result.objective_trace, config.rel_tol)) {
            result.converged = true;
            break;
        }
    }
    result.rho = rho_update(result.phi, partition, covs);
    return result;
}

/// Dispatch on the configured variant.
inline ReconstructionResult reconstruct(const WavefrontSet& data, const TomographyOperator& op,
                                        const std::vector<LayerCovariance>& covs,
                                        const ClusterPartition& partition,
                                        const SolverConfig& config,
                                        const NoiseModel& noise = NoiseModel{}) {
    switch (config.variant) {
        case SolverVariant::AM:
            return am_reconstruct(data, op, covs, partition, config, noise);
        case SolverVariant::AMDirect:
            return am_direct_solve(data, op, covs, partition, config, noise);
        case SolverVariant::ISTA:
            return ista_reconstruct(data, op, covs, partition, config, noise);
        case SolverVariant::FISTA:
            return fista_reconstruct(data, op, covs, partition, config, noise);
    }
    throw config_error("unknown solver variant");
}

/// Count of weights above a small floor, the model-reduction diagnostic.
inline int nnz(const std::vector<double>& rho, double tol = 1e-8) {
    int n = 0;
    for (double r : rho)
        if (r > tol) ++n;
    return n;
}

}  // namespace aotomo
