#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tasc/core_math.hpp"
#include "tasc/embedding_store.hpp"

namespace tasc {

struct SearchConfig {
    std::size_t k0 = 100;            // upper bound on the number of centers
    std::size_t n_candidates = 300;  // candidates per noun step, incumbent included
    double gamma_ent = 0.3;          // protected-source threshold, normalized entropy
    std::size_t n_outer = 20;
    std::uint64_t seed = 0;

    void validate(std::size_t n_source, std::size_t n_nouns) const;
};

/// Discrete search variables: one cache column per slot plus a retain bit.
/// Slots [0, n_source) hold the source class-name columns and never change.
struct SearchState {
    std::vector<std::size_t> slots;
    std::vector<std::uint8_t> retained;
    std::size_t n_source = 0;

    std::size_t size() const { return slots.size(); }
    std::size_t active_count() const;
    std::vector<std::size_t> active_columns() const;

    bool operator==(const SearchState&) const = default;
};

struct ClassCountEstimate {
    std::size_t k = 0;
    std::size_t k_common = 0;
    std::size_t k_private = 0;
};

ClassCountEstimate count_classes(const SearchState& state);

/// Read-only inputs of the search. `texts` rows are in cache column order
/// (source class names first, then nouns); `targets` are the normalized target
/// embeddings the cache was built from.
struct SearchContext {
    const SimilarityCache& cache;
    const EmbeddingMatrix& targets;
    const EmbeddingMatrix& texts;
};

SearchState init_state(std::size_t n_source, std::size_t n_nouns, const SearchConfig& cfg,
                       std::mt19937_64& rng);

/// Information-maximization loss over all targets with the active slots as centers.
double loss_for(const SearchState& state, const SimilarityCache& cache, const PredictionConfig& cfg);

/// Losses of every option at one slot: retain the slot holding each candidate
/// column, or discard it. `discard` is empty when no other slot is active.
struct OptionLosses {
    std::vector<double> keep;
    std::optional<double> discard;
};

OptionLosses evaluate_options(const SearchState& state, std::size_t position,
                              std::span<const std::size_t> candidates, const SimilarityCache& cache,
                              const PredictionConfig& cfg);

/// True when the source text embedding at `position` classifies sharply
/// (normalized entropy < gamma_ent) against target prototypes built from the
/// current argmax assignments. Clusters without samples contribute no prototype.
bool protected_source_rule(const SearchState& state, std::size_t position, const SearchContext& ctx,
                           const PredictionConfig& pcfg, const SearchConfig& scfg);

/// Keep and discard losses closer than this (relative) count as a tie, and
/// ties discard. Unused centers change the loss only below rounding noise.
inline constexpr double kLossTieTolerance = 1e-10;

/// True when retaining at `keep` beats discarding at `discard` by more than a tie.
bool retain_beats_discard(double keep, double discard);

struct StepResult {
    SearchState state;
    bool forced = false;  // decided by the protected-source rule, not by loss
};

/// One coordinate step with an explicit candidate list (noun slots only).
StepResult greedy_step_with_candidates(const SearchState& state, std::size_t position,
                                       std::span<const std::size_t> candidates,
                                       const SearchContext& ctx, const PredictionConfig& pcfg,
                                       const SearchConfig& scfg);

/// Noun columns eligible at `position`: nouns not active in another slot.
/// The incumbent comes first when eligible; the rest are sampled uniformly
/// without replacement up to n_candidates in total.
std::vector<std::size_t> sample_candidates(const SearchState& state, std::size_t position,
                                           std::size_t n_nouns, std::size_t n_candidates,
                                           std::mt19937_64& rng);

StepResult greedy_step(const SearchState& state, std::size_t position, const SearchContext& ctx,
                       const PredictionConfig& pcfg, const SearchConfig& scfg, std::mt19937_64& rng);

struct StepRecord {
    std::size_t outer = 0;
    std::size_t position = 0;
    double loss_before = 0.0;
    double loss_after = 0.0;
    std::size_t k_after = 0;
    bool forced = false;
};

struct SearchResult {
    SearchState state;
    ClassCountEstimate counts;
    std::vector<double> loss_trace;     // after each outer iteration
    std::vector<std::size_t> k_trace;   // after each outer iteration
    std::vector<StepRecord> steps;
};

SearchResult run_search(const SearchContext& ctx, const PredictionConfig& pcfg, const SearchConfig& scfg);

/// Report with slot columns, their names, retain bits, counts and traces.
nlohmann::json search_report(const SearchResult& result, std::span<const std::string> column_names,
                             const SearchConfig& scfg, const PredictionConfig& pcfg);

/// Rebuilds the final state (and counts/traces) from a report.
SearchResult search_result_from_report(const nlohmann::json& report);

}  // namespace tasc
