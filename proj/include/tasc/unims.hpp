#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tasc/embedding_store.hpp"

namespace tasc {

/// Normalized entropies of each source center classified against the target
/// centers (`source`) and of each target center against the source centers
/// (`target`). Low values mark likely common classes.
struct EntropyVectors {
    std::vector<double> source;
    std::vector<double> target;
};

enum class ScoreVariant { unims, ms_s, ms_t, ms_s_weighted, ms_t_weighted };

std::string to_string(ScoreVariant v);
ScoreVariant parse_variant(const std::string& text);

struct ScoreSet {
    std::vector<double> scores;
    ScoreVariant variant = ScoreVariant::unims;
};

EntropyVectors entropy_vectors(const EmbeddingMatrix& source_centers, const EmbeddingMatrix& target_centers,
                               double tau);

/// Per-sample known-ness score; higher means more likely a common class.
///   ms_s           max_i sim(z, w_i)
///   ms_t          -max_j sim(z, s_j)
///   ms_s_weighted  max_i (1 - ent_s_i) sim(z, w_i)
///   ms_t_weighted -max_j ent_t_j sim(z, s_j)
///   unims          ms_s_weighted + ms_t_weighted
ScoreSet score(const EmbeddingMatrix& targets, const EmbeddingMatrix& source_centers,
               const EmbeddingMatrix& target_centers, const EntropyVectors& ev, ScoreVariant variant);

/// CSV with header `sample_index,score,variant`, scores printed round-trip exact.
void write_scores_csv(std::ostream& out, const ScoreSet& set);
ScoreSet read_scores_csv(std::istream& in);

}  // namespace tasc
