#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tasc {

/// Dense row-major matrix of 32-bit embedding vectors.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::vector<float> data;
    bool normalized = false;

    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::size_t r, std::size_t d) : rows(r), dims(d), data(r * d, 0.0f) {}

    std::span<const float> row(std::size_t i) const { return {data.data() + i * dims, dims}; }
    std::span<float> row(std::size_t i) { return {data.data() + i * dims, dims}; }

    float at(std::size_t i, std::size_t j) const { return data[i * dims + j]; }
    float& at(std::size_t i, std::size_t j) { return data[i * dims + j]; }

    bool empty() const { return rows == 0; }
};

enum class Role { source_images, target_images, source_classnames, noun_vocab, adapter };

std::string to_string(Role role);
Role parse_role(const std::string& text);

/// JSON sidecar describing one EMBX matrix.
struct Manifest {
    Role role = Role::source_images;
    std::vector<std::string> names;
    std::optional<std::vector<int>> labels;
    std::size_t count = 0;
};

/// Target-sample x text-column cosine similarities. Columns are the source
/// class names followed by the noun vocabulary.
struct SimilarityCache {
    std::size_t n_targets = 0;
    std::size_t n_source = 0;
    std::size_t n_nouns = 0;
    std::vector<float> sims;

    std::size_t cols() const { return n_source + n_nouns; }
    float at(std::size_t i, std::size_t j) const { return sims[i * cols() + j]; }
    std::span<const float> row(std::size_t i) const { return {sims.data() + i * cols(), cols()}; }
};

// Raw EMBX payload IO. The reader validates magic, version and finiteness.
void write_embx(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embx(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& embx_path);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Writes the matrix and its `.manifest.json` sidecar.
void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m,
                     const Manifest& manifest);

/// Loads and validates a matrix plus sidecar. The returned matrix is not
/// normalized. Text roles reject zero-norm rows.
std::pair<EmbeddingMatrix, Manifest> load_embeddings(const std::filesystem::path& path);

/// Checks manifest/matrix agreement (count, names, labels length).
void validate_pair(const EmbeddingMatrix& m, const Manifest& manifest);

/// Source labels must lie in [0, n_classes).
void validate_source_labels(const Manifest& manifest, std::size_t n_classes);

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m);

/// Row-wise concatenation; dims must agree.
EmbeddingMatrix stack_rows(const EmbeddingMatrix& top, const EmbeddingMatrix& bottom);

/// Rows picked by index, in the given order. Keeps the normalized flag.
EmbeddingMatrix gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> indices);

/// cache(i, j) = <targets_i, texts_j>, accumulated in double. The first
/// `n_source` text rows are the source class-name columns.
SimilarityCache build_similarity_cache(const EmbeddingMatrix& targets, const EmbeddingMatrix& texts,
                                       std::size_t n_source = 0);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);

}  // namespace tasc
