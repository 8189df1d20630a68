#include "tasc/gmm_threshold.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tasc/error.hpp"

namespace tasc {

namespace {

double log_normal_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double log_add(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

Moments block_moments(std::span<const double> xs) {
    Moments m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.sd += (x - m.mean) * (x - m.mean);
    m.sd = std::max(std::sqrt(m.sd / static_cast<double>(xs.size())), kSigmaFloor);
    return m;
}

}  // namespace

std::string to_string(ThresholdMode mode) {
    switch (mode) {
        case ThresholdMode::intersection: return "intersection";
        case ThresholdMode::midpoint_fallback: return "midpoint-fallback";
        case ThresholdMode::disabled: return "disabled";
        case ThresholdMode::reject_all: return "reject-all";
        case ThresholdMode::fixed: return "fixed";
    }
    return "unknown";
}

ThresholdMode parse_threshold_mode(const std::string& text) {
    for (auto m : {ThresholdMode::intersection, ThresholdMode::midpoint_fallback, ThresholdMode::disabled,
                   ThresholdMode::reject_all, ThresholdMode::fixed})
        if (text == to_string(m)) return m;
    throw FormatError("unknown threshold mode '" + text + "'");
}

std::pair<double, double> weights_from_counts(std::size_t k_common, std::size_t k_private) {
    const std::size_t k = k_common + k_private;
    if (k == 0) throw DomainError("no retained centers to derive mixture weights from");
    return {static_cast<double>(k_common) / static_cast<double>(k),
            static_cast<double>(k_private) / static_cast<double>(k)};
}

double gmm_log_likelihood(std::span<const double> scores, const GmmParams& p) {
    const double lk = std::log(p.p_known);
    const double lu = std::log(p.p_unknown);
    double total = 0.0;
    for (double x : scores)
        total += log_add(lk + log_normal_pdf(x, p.mu_known, p.sigma_known),
                         lu + log_normal_pdf(x, p.mu_unknown, p.sigma_unknown));
    return total;
}

GmmFit fit_gmm(std::span<const double> scores, double p_known, double p_unknown, double tolerance,
               std::size_t max_iterations) {
    if (!(p_known >= 0.0 && p_unknown >= 0.0) || std::abs(p_known + p_unknown - 1.0) > 1e-9)
        throw DomainError("mixture weights must be non-negative and sum to 1");
    GmmFit fit;
    fit.input_p_known = p_known;
    fit.input_p_unknown = p_unknown;
    if (p_unknown == 0.0) {
        fit.status = FitStatus::disabled;
        return fit;
    }
    if (p_known == 0.0) {
        fit.status = FitStatus::reject_all;
        return fit;
    }
    if (scores.size() < 10) throw DomainError("fit_gmm needs at least 10 scores");
    for (double s : scores)
        if (!std::isfinite(s)) throw DataError("fit_gmm: non-finite score");

    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) throw DegenerateError("fit_gmm: all scores are equal");

    const double pu = std::clamp(p_unknown, kWeightClampLow, kWeightClampHigh);
    GmmParams& p = fit.params;
    p.p_unknown = pu;
    p.p_known = 1.0 - pu;

    const std::size_t n = sorted.size();
    auto split = static_cast<std::size_t>(std::llround(pu * static_cast<double>(n)));
    split = std::clamp<std::size_t>(split, 1, n - 1);
    const auto lower = block_moments(std::span(sorted).first(split));
    const auto upper = block_moments(std::span(sorted).subspan(split));
    p.mu_unknown = lower.mean;
    p.sigma_unknown = lower.sd;
    p.mu_known = upper.mean;
    p.sigma_known = upper.sd;

    const double lk = std::log(p.p_known);
    const double lu = std::log(p.p_unknown);
    double ll = gmm_log_likelihood(scores, p);
    fit.loglik.push_back(ll);
    std::vector<double> resp(scores.size());
    for (std::size_t it = 0; it < max_iterations; ++it) {
        // E-step with the fixed weights.
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double a = lk + log_normal_pdf(scores[i], p.mu_known, p.sigma_known);
            const double b = lu + log_normal_pdf(scores[i], p.mu_unknown, p.sigma_unknown);
            resp[i] = std::exp(a - log_add(a, b));
        }
        // M-step: means and deviations only.
        double wk = 0.0, wu = 0.0, sk = 0.0, su = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            wk += resp[i];
            wu += 1.0 - resp[i];
            sk += resp[i] * scores[i];
            su += (1.0 - resp[i]) * scores[i];
        }
        GmmParams next = p;
        if (wk > 0.0) next.mu_known = sk / wk;
        if (wu > 0.0) next.mu_unknown = su / wu;
        double vk = 0.0, vu = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            vk += resp[i] * (scores[i] - next.mu_known) * (scores[i] - next.mu_known);
            vu += (1.0 - resp[i]) * (scores[i] - next.mu_unknown) * (scores[i] - next.mu_unknown);
        }
        if (wk > 0.0) next.sigma_known = std::max(std::sqrt(vk / wk), kSigmaFloor);
        if (wu > 0.0) next.sigma_unknown = std::max(std::sqrt(vu / wu), kSigmaFloor);

        p = next;
        const double next_ll = gmm_log_likelihood(scores, p);
        fit.loglik.push_back(next_ll);
        fit.iterations = it + 1;
        const double gain = next_ll - ll;
        ll = next_ll;
        if (gain < tolerance) break;
    }

    if (p.mu_known < p.mu_unknown) {
        std::swap(p.mu_known, p.mu_unknown);
        std::swap(p.sigma_known, p.sigma_unknown);
        std::swap(p.p_known, p.p_unknown);
    }
    return fit;
}

Threshold intersection_threshold(const GmmParams& params) {
    const double mk = params.mu_known, mu = params.mu_unknown;
    const double sk = params.sigma_known, su = params.sigma_unknown;
    const double mid = 0.5 * (mk + mu);
    const double lo = std::min(mu, mk), hi = std::max(mu, mk);

    // log phi_k(x) - log phi_u(x) = a x^2 + b x + c
    const double a = 0.5 / (su * su) - 0.5 / (sk * sk);
    const double b = mk / (sk * sk) - mu / (su * su);
    const double c = 0.5 * mu * mu / (su * su) - 0.5 * mk * mk / (sk * sk) + std::log(su / sk);

    std::vector<double> roots;
    if (std::abs(a) <= 1e-12 * std::max(1.0 / (sk * sk), 1.0 / (su * su))) {
        if (b != 0.0) roots.push_back(sk == su ? mid : -c / b);
    } else {
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
            if (q != 0.0) {
                roots.push_back(q / a);
                roots.push_back(c / q);
            } else {
                roots.push_back(-b / (2.0 * a));
            }
        }
    }

    // Keep the crossing where the known density overtakes the unknown one.
    for (double r : roots) {
        if (r < lo || r > hi || !std::isfinite(r)) continue;
        if (2.0 * a * r + b > 0.0) return {r, ThresholdMode::intersection};
    }
    return {mid, ThresholdMode::midpoint_fallback};
}

Threshold threshold_for(const GmmFit& fit) {
    switch (fit.status) {
        case FitStatus::disabled: return {0.0, ThresholdMode::disabled};
        case FitStatus::reject_all: return {0.0, ThresholdMode::reject_all};
        case FitStatus::fitted: break;
    }
    GmmParams equal = fit.params;
    equal.p_known = equal.p_unknown = 0.5;
    return intersection_threshold(equal);
}

std::vector<std::uint8_t> predict_known(std::span<const double> scores, const Threshold& threshold) {
    std::vector<std::uint8_t> mask(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        switch (threshold.mode) {
            case ThresholdMode::disabled: mask[i] = 1; break;
            case ThresholdMode::reject_all: mask[i] = 0; break;
            default: mask[i] = scores[i] >= threshold.gamma ? 1 : 0; break;
        }
    }
    return mask;
}

nlohmann::json fit_report(const GmmFit& fit, const Threshold& threshold) {
    nlohmann::json j;
    const char* status = fit.status == FitStatus::fitted     ? "fitted"
                         : fit.status == FitStatus::disabled ? "disabled"
                                                             : "reject-all";
    j["status"] = status;
    j["input_weights"] = {{"p_known", fit.input_p_known}, {"p_unknown", fit.input_p_unknown}};
    j["params"] = {{"p_known", fit.params.p_known},         {"p_unknown", fit.params.p_unknown},
                   {"mu_known", fit.params.mu_known},       {"mu_unknown", fit.params.mu_unknown},
                   {"sigma_known", fit.params.sigma_known}, {"sigma_unknown", fit.params.sigma_unknown}};
    j["gamma"] = threshold.gamma;
    j["mode"] = to_string(threshold.mode);
    j["iterations"] = fit.iterations;
    j["loglik_trace"] = fit.loglik;
    return j;
}

Threshold threshold_from_report(const nlohmann::json& report) {
    try {
        return {report.at("gamma").get<double>(), parse_threshold_mode(report.at("mode").get<std::string>())};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed fit report: ") + e.what());
    }
}

}  // namespace tasc
