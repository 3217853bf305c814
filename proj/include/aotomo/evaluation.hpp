#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Core>

#include "aotomo/common.hpp"
#include "aotomo/tomography.hpp"

namespace aotomo {

/// Propagate the stack along one direction onto the pupil nodes of an
/// evaluation operator built with that direction's synthetic NGS.
inline Eigen::VectorXd propagate_direction(const LayerStack& phi, const TomographyOperator& eval_op,
                                           int direction_index) {
    WavefrontSet all = eval_op.forward(phi);
    return all.star_data.at(direction_index);
}

/// Center-direction projection of the reconstructed layers, the shape of the
/// single ground-conjugated deformable mirror.
inline Eigen::VectorXd dm_shape(const LayerStack& phi, const TomographyOperator& center_op) {
    return center_op.forward(phi).star_data.at(0);
}

/// Residual phase in one direction after subtracting the DM correction.
inline Eigen::VectorXd residual(const LayerStack& phi_true, const Eigen::VectorXd& dm,
                                const TomographyOperator& eval_op, int direction_index) {
    return propagate_direction(phi_true, eval_op, direction_index) - dm;
}

/// Short-exposure Strehl via the Marechal criterion: exp(-pupil variance of
/// the piston-removed residual). The discrete pupil measure cancels, leaving
/// the node-mean of squared deviations.
inline double strehl(const Eigen::VectorXd& residual_phase) {
    if (residual_phase.size() == 0) throw undefined_metric_error("empty residual");
    const double mean = residual_phase.mean();
    const double var = (residual_phase.array() - mean).square().mean();
    return std::exp(-var);
}

/// Relative error in a guide-star direction, the difference of propagated
/// norms over the truth norm. Signed; zero reconstruction gives 1.
inline double relative_error(const LayerStack& phi_true, const LayerStack& phi_rec,
                             const TomographyOperator& op, int star_index) {
    const double norm_true = op.forward(phi_true).star_data.at(star_index).norm();
    if (!(norm_true > 0.0))
        throw undefined_metric_error("relative_error: zero-norm truth wavefront");
    const double norm_rec = op.forward(phi_rec).star_data.at(star_index).norm();
    return (norm_true - norm_rec) / norm_true;
}

/// Residual-norm form of the directional error, emitted alongside the printed
/// metric for comparison.
inline double residual_relative_error(const LayerStack& phi_true, const LayerStack& phi_rec,
                                      const TomographyOperator& op, int star_index) {
    const double norm_true = op.forward(phi_true).star_data.at(star_index).norm();
    if (!(norm_true > 0.0))
        throw undefined_metric_error("relative_error: zero-norm truth wavefront");
    LayerStack diff = phi_true;
    diff -= phi_rec;
    return op.forward(diff).star_data.at(star_index).norm() / norm_true;
}

struct QualityReport {
    std::vector<Vec2> directions;          // radians
    std::vector<double> strehl_values;     // per direction
    double center_strehl = 0.0;
    double mean_strehl = 0.0;
    std::vector<double> epsilon_per_star;           // Eq-as-printed norm difference
    std::vector<double> residual_epsilon_per_star;  // residual-norm variant
};

/// Bin directions by angular separation from center (1e-6 arcmin resolution)
/// and average Strehl within each bin.
inline std::vector<std::pair<double, double>> radial_average(
    const std::vector<Vec2>& directions, const std::vector<double>& strehl_values) {
    if (directions.empty()) throw undefined_metric_error("radial_average: empty direction set");
    std::map<long long, std::pair<double, int>> bins;
    for (std::size_t i = 0; i < directions.size(); ++i) {
        const double sep_arcmin = rad_to_arcmin(directions[i].norm());
        const long long key = static_cast<long long>(std::llround(sep_arcmin * 1e6));
        auto& [sum, count] = bins[key];
        sum += strehl_values[i];
        count += 1;
    }
    std::vector<std::pair<double, double>> out;
    out.reserve(bins.size());
    for (const auto& [key, agg] : bins)
        out.emplace_back(key * 1e-6, agg.first / agg.second);
    return out;
}

/// Full quality evaluation: DM shape from the center direction, Strehl over
/// the evaluation grid, directional errors at the guide stars.
inline QualityReport evaluate_quality(const LayerStack& phi_true, const LayerStack& phi_rec,
                                      const TomographyOperator& science_op,
                                      const TomographyOperator& eval_op,
                                      const TomographyOperator& center_op) {
    QualityReport report;
    const Eigen::VectorXd dm = dm_shape(phi_rec, center_op);
    const WavefrontSet truth_fronts = eval_op.forward(phi_true);
    report.directions.reserve(eval_op.star_count());
    for (int i = 0; i < eval_op.star_count(); ++i) {
        report.directions.push_back(eval_op.stars()[i].direction);
        report.strehl_values.push_back(strehl(truth_fronts.star_data[i] - dm));
    }
    report.mean_strehl = 0.0;
    for (double s : report.strehl_values) report.mean_strehl += s;
    report.mean_strehl /= report.strehl_values.size();

    // center = the direction closest to the origin
    int center_idx = 0;
    double best = report.directions[0].norm();
    for (std::size_t i = 1; i < report.directions.size(); ++i)
        if (report.directions[i].norm() < best) {
            best = report.directions[i].norm();
            center_idx = static_cast<int>(i);
        }
    report.center_strehl = report.strehl_values[center_idx];

    for (int g = 0; g < science_op.star_count(); ++g) {
        report.epsilon_per_star.push_back(relative_error(phi_true, phi_rec, science_op, g));
        report.residual_epsilon_per_star.push_back(
            residual_relative_error(phi_true, phi_rec, science_op, g));
    }
    return report;
}

}  // namespace aotomo
