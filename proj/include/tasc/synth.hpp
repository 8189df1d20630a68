#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "tasc/embedding_store.hpp"
#include "tasc/eval.hpp"

namespace tasc {

struct SynthConfig {
    std::size_t dims = 512;
    std::size_t vocab_size = 500;
    ScenarioSplit split{10, 5, 15};
    std::size_t source_samples_per_class = 20;
    std::size_t target_samples_per_class = 20;
    double cluster_spread = 0.05;  // expected norm of the per-sample perturbation
    double shift_angle = 0.2;      // radians, rotation in a random 2-plane
    double shift_noise = 0.02;     // expected norm of the extra target-side noise
    double similarity_cap = 0.5;   // max pairwise cosine between vocabulary entries
    std::uint64_t seed = 0;

    void validate() const;
};

/// A complete input bundle with ground truth. Class ids follow the
/// ScenarioSplit convention; `anchors[c]` is the vocabulary row of class c.
struct SynthBundle {
    EmbeddingMatrix source_images;
    EmbeddingMatrix target_images;
    EmbeddingMatrix source_classnames;
    EmbeddingMatrix noun_vocab;
    Manifest source_manifest;
    Manifest target_manifest;
    Manifest classnames_manifest;
    Manifest vocab_manifest;
    std::vector<int> target_labels;
    std::vector<std::size_t> anchors;
};

SynthBundle generate(const SynthConfig& cfg);

/// File names used for a bundle inside a directory.
struct BundlePaths {
    std::filesystem::path source_images;
    std::filesystem::path target_images;
    std::filesystem::path source_classnames;
    std::filesystem::path noun_vocab;
};

BundlePaths bundle_paths(const std::filesystem::path& dir);
BundlePaths save_bundle(const std::filesystem::path& dir, const SynthBundle& bundle);

}  // namespace tasc
