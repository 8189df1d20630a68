#pragma once

#include <span>
#include <vector>

#include "tasc/embedding_store.hpp"

namespace tasc {

struct PredictionConfig {
    double tau = 0.02;         // softmax temperature
    double lambda_div = 0.6;   // weight of the diversity term

    void validate() const;
};

/// Probabilities over K semantic centers.
using ProbVector = std::vector<double>;

/// softmax(sims / tau) with max-subtraction.
ProbVector softmax_scaled(std::span<const double> sims, double tau);

/// Cosine-similarity classifier h(z; centers, tau). z and centers must be unit rows.
ProbVector predict(std::span<const float> z, const EmbeddingMatrix& centers, const PredictionConfig& cfg);

/// Shannon entropy in nats, with 0 log 0 = 0.
double entropy(std::span<const double> p);

/// entropy(p) / log K in [0, 1]; 0 when K == 1.
double normalized_entropy(std::span<const double> p);

/// Information-maximization clustering loss: mean per-sample entropy minus
/// lambda_div times the entropy of the mean prediction.
double im_loss(std::span<const ProbVector> preds, const PredictionConfig& cfg);

/// Mean of -log p_y with probabilities floored at 1e-12.
double cross_entropy(std::span<const ProbVector> preds, std::span<const int> labels);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace tasc
