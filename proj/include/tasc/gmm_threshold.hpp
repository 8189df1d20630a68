#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tasc {

/// Two-component 1-D mixture over scores: "known" (higher mean) and "unknown".
struct GmmParams {
    double p_known = 0.5;
    double p_unknown = 0.5;
    double mu_known = 0.0;
    double mu_unknown = 0.0;
    double sigma_known = 1.0;
    double sigma_unknown = 1.0;
};

enum class ThresholdMode { intersection, midpoint_fallback, disabled, reject_all, fixed };

std::string to_string(ThresholdMode mode);
ThresholdMode parse_threshold_mode(const std::string& text);

struct Threshold {
    double gamma = 0.0;
    ThresholdMode mode = ThresholdMode::disabled;
};

enum class FitStatus { fitted, disabled, reject_all };

struct GmmFit {
    GmmParams params;
    std::vector<double> loglik;  // one entry per EM iteration, initial state first
    FitStatus status = FitStatus::fitted;
    std::size_t iterations = 0;
    double input_p_known = 0.0;
    double input_p_unknown = 0.0;
};

inline constexpr double kSigmaFloor = 1e-4;
inline constexpr double kWeightClampLow = 0.01;
inline constexpr double kWeightClampHigh = 0.99;

/// Mixture weights from the search's class counts: (K_com, K_pri) / K.
std::pair<double, double> weights_from_counts(std::size_t k_common, std::size_t k_private);

/// EM with the mixture weights held fixed; only means and deviations move.
/// A zero known or unknown weight skips the fit and reports the matching
/// status instead of parameters.
GmmFit fit_gmm(std::span<const double> scores, double p_known, double p_unknown,
               double tolerance = 1e-8, std::size_t max_iterations = 500);

double gmm_log_likelihood(std::span<const double> scores, const GmmParams& params);

/// Point where the two equally weighted component densities cross, rising
/// towards the known component. Falls back to the midpoint of the means when
/// no such crossing lies in [mu_unknown, mu_known].
Threshold intersection_threshold(const GmmParams& params);

/// Threshold for a whole fit, honoring disabled / reject-all outcomes.
Threshold threshold_for(const GmmFit& fit);

/// known iff score >= gamma; disabled marks everything known, reject_all nothing.
std::vector<std::uint8_t> predict_known(std::span<const double> scores, const Threshold& threshold);

nlohmann::json fit_report(const GmmFit& fit, const Threshold& threshold);
Threshold threshold_from_report(const nlohmann::json& report);

}  // namespace tasc
