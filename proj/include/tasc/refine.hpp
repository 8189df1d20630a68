#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tasc/core_math.hpp"
#include "tasc/embedding_store.hpp"

namespace tasc {

/// Square linear map applied to image embeddings before normalization.
/// Weights are row-major, dims x dims.
struct Adapter {
    std::size_t dims = 0;
    std::vector<float> weights;

    static Adapter identity(std::size_t d);
    static Adapter from_matrix(const Eigen::MatrixXd& w);
    Eigen::MatrixXd to_matrix() const;

    EmbeddingMatrix as_embedding_matrix() const;
    static Adapter from_embedding_matrix(const EmbeddingMatrix& m);
};

struct TrainConfig {
    double eta0 = 1e-4;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Centers and source supervision shared by every refinement loss evaluation.
struct RefineTargets {
    const EmbeddingMatrix& source_centers;  // W^s, one row per source class
    const EmbeddingMatrix& target_centers;  // S^t, the retained searched centers
};

/// normalize(W z).
std::vector<float> forward(const Adapter& adapter, std::span<const float> z);
EmbeddingMatrix forward_all(const Adapter& adapter, const EmbeddingMatrix& m);

/// Cross-entropy of adapted source embeddings against W^s plus the IM loss of
/// the adapted target batch against S^t.
double loss_all(const Eigen::MatrixXd& w, const EmbeddingMatrix& source, std::span<const int> labels,
                const EmbeddingMatrix& target_batch, const RefineTargets& centers,
                const PredictionConfig& cfg);
double loss_all(const Adapter& adapter, const EmbeddingMatrix& source, std::span<const int> labels,
                const EmbeddingMatrix& target_batch, const RefineTargets& centers,
                const PredictionConfig& cfg);

struct LossGradient {
    double loss = 0.0;
    Eigen::MatrixXd grad;  // d x d
};

/// Exact gradient of loss_all with respect to W.
LossGradient loss_and_gradient(const Eigen::MatrixXd& w, const EmbeddingMatrix& source,
                               std::span<const int> labels, const EmbeddingMatrix& target_batch,
                               const RefineTargets& centers, const PredictionConfig& cfg);

Eigen::MatrixXd grad_loss_all(const Eigen::MatrixXd& w, const EmbeddingMatrix& source,
                              std::span<const int> labels, const EmbeddingMatrix& target_batch,
                              const RefineTargets& centers, const PredictionConfig& cfg);

/// eta0 * (1 + 10 p)^-0.75 for training progress p in [0, 1].
double learning_rate(double eta0, double progress);

struct TrainResult {
    Adapter adapter;
    std::vector<double> epoch_losses;
};

/// Mini-batch gradient descent. Each step pairs a target batch (one pass over
/// the shuffled targets per epoch) with a source batch of the same size drawn
/// from a separately shuffled, cycling source order.
TrainResult train(const Adapter& init, const EmbeddingMatrix& source, std::span<const int> labels,
                  const EmbeddingMatrix& targets, const RefineTargets& centers,
                  const PredictionConfig& pcfg, const TrainConfig& tcfg);

}  // namespace tasc
