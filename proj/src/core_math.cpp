#include "tasc/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tasc/error.hpp"

namespace tasc {

void PredictionConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(lambda_div >= 0.0)) throw ConfigError("lambda_div must be non-negative");
}

ProbVector softmax_scaled(std::span<const double> sims, double tau) {
    if (sims.empty()) throw DomainError("softmax over an empty center set");
    const double peak = *std::max_element(sims.begin(), sims.end());
    ProbVector p(sims.size());
    double total = 0.0;
    for (std::size_t j = 0; j < sims.size(); ++j) {
        p[j] = std::exp((sims[j] - peak) / tau);
        total += p[j];
    }
    for (double& v : p) v /= total;
    return p;
}

ProbVector predict(std::span<const float> z, const EmbeddingMatrix& centers, const PredictionConfig& cfg) {
    if (centers.rows == 0) throw DomainError("predict: empty center set");
    if (z.size() != centers.dims) throw ShapeError("predict: embedding dims do not match centers");
    std::vector<double> sims(centers.rows);
    for (std::size_t j = 0; j < centers.rows; ++j) sims[j] = dot(z, centers.row(j));
    return softmax_scaled(sims, cfg.tau);
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return std::max(h, 0.0);
}

double normalized_entropy(std::span<const double> p) {
    if (p.size() < 2) return 0.0;
    return std::clamp(entropy(p) / std::log(static_cast<double>(p.size())), 0.0, 1.0);
}

double im_loss(std::span<const ProbVector> preds, const PredictionConfig& cfg) {
    if (preds.empty()) throw DomainError("im_loss: empty prediction list");
    const std::size_t k = preds.front().size();
    std::vector<double> mean(k, 0.0);
    double ent = 0.0;
    for (const auto& p : preds) {
        if (p.size() != k) throw ShapeError("im_loss: predictions differ in length");
        ent += entropy(p);
        for (std::size_t j = 0; j < k; ++j) mean[j] += p[j];
    }
    const auto n = static_cast<double>(preds.size());
    for (double& v : mean) v /= n;
    return ent / n - cfg.lambda_div * entropy(mean);
}

double cross_entropy(std::span<const ProbVector> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) throw ShapeError("cross_entropy: preds/labels length mismatch");
    if (preds.empty()) throw DomainError("cross_entropy: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= preds[i].size())
            throw DomainError("cross_entropy: label " + std::to_string(y) + " out of range");
        total -= std::log(std::max(preds[i][static_cast<std::size_t>(y)], kProbabilityFloor));
    }
    return total / static_cast<double>(preds.size());
}

}  // namespace tasc
