#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tasc/embedding_store.hpp"

namespace tasc {

enum class Scenario { opda, oda, pda, cda };

std::string to_string(Scenario s);

/// Class split |C| / |C_s private| / |C_t private|. Label convention: ids
/// [0, n_common) are common, [n_common, n_common + n_source_private) are
/// source-private, and ids >= n_common + n_source_private are target-private.
struct ScenarioSplit {
    std::size_t n_common = 0;
    std::size_t n_source_private = 0;
    std::size_t n_target_private = 0;

    std::size_t n_source_classes() const { return n_common + n_source_private; }
    Scenario scenario() const;
};

struct ClassAccuracies {
    double a_common = 0.0;          // percent, macro-averaged over common classes
    double a_common_no_unk = 0.0;   // same, ignoring the known mask
    std::optional<double> a_private;  // percent of target-private samples flagged unknown
    std::vector<int> excluded_classes;  // common classes without target samples
};

struct EvalReport {
    Scenario scenario = Scenario::opda;
    double a_common = 0.0;
    double a_common_no_unk = 0.0;
    std::optional<double> a_private;
    std::optional<double> h_score;
    std::optional<double> h3_score;
    std::optional<double> auroc;
    std::optional<double> nmi;
    double overall_acc = 0.0;
    std::vector<int> excluded_classes;
    std::size_t n_samples = 0;
};

double h_score(double a_common, double a_private);
double h3_score(double a_common, double a_private, double nmi);

ClassAccuracies per_class_accuracy(std::span<const int> preds, std::span<const int> gt,
                                   std::span<const std::uint8_t> known_mask, const ScenarioSplit& split);

/// Percent of target samples with mask known and pred == gt (target-private
/// samples count as correct when flagged unknown).
double overall_accuracy(std::span<const int> preds, std::span<const int> gt,
                        std::span<const std::uint8_t> known_mask, const ScenarioSplit& split);

/// Mann-Whitney estimate of P(score_known > score_unknown) in percent, ties 1/2.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> is_known);

/// Percent from twice the win count (ties count once) over `pairs` pairs.
inline double auroc_from_counts(std::uint64_t twice_wins, std::uint64_t pairs) {
    return 100.0 * static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

/// NMI (arithmetic-mean normalization) between two labelings, in percent.
double normalized_mutual_information(std::span<const int> a, std::span<const int> b);

struct KMeansResult {
    std::vector<int> assignment;
    double inertia = 0.0;
};

/// k-means++ seeding, `restarts` runs, best inertia kept.
KMeansResult kmeans(const EmbeddingMatrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t restarts = 10, std::size_t max_iterations = 300);

/// NMI of a K-means clustering of the target-private samples against their
/// labels, K = number of distinct labels. Empty when fewer than 2 classes.
std::optional<double> nmi_private(const EmbeddingMatrix& embeddings, std::span<const int> labels,
                                  std::uint64_t seed);

/// Everything at once. `embeddings` are the (adapted) target embeddings used
/// for the private-cluster NMI.
EvalReport evaluate(std::span<const int> preds, std::span<const int> gt, std::span<const std::uint8_t> known_mask,
                    std::span<const double> scores, const EmbeddingMatrix& embeddings,
                    const ScenarioSplit& split, std::uint64_t seed);

nlohmann::json eval_report_json(const EvalReport& r);
std::string eval_report_csv(const EvalReport& r);

}  // namespace tasc
