#include "tasc/embedding_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tasc/error.hpp"
#include "tasc/parallel.hpp"

namespace tasc {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'M', 'B', 'X'};
constexpr std::uint32_t kVersion = 1;
constexpr double kDegenerateNorm = 1e-12;

static_assert(std::endian::native == std::endian::little,
              "EMBX IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError("truncated EMBX header: " + path.string());
    return value;
}

bool is_text_role(Role role) {
    return role == Role::source_classnames || role == Role::noun_vocab;
}

}  // namespace

std::string to_string(Role role) {
    switch (role) {
        case Role::source_images: return "source_images";
        case Role::target_images: return "target_images";
        case Role::source_classnames: return "source_classnames";
        case Role::noun_vocab: return "noun_vocab";
        case Role::adapter: return "adapter";
    }
    return "unknown";
}

Role parse_role(const std::string& text) {
    if (text == "source_images") return Role::source_images;
    if (text == "target_images") return Role::target_images;
    if (text == "source_classnames") return Role::source_classnames;
    if (text == "noun_vocab") return Role::noun_vocab;
    if (text == "adapter") return Role::adapter;
    throw FormatError("unknown manifest role '" + text + "'");
}

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += static_cast<double>(a[k]) * b[k];
    return acc;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

void write_embx(const std::filesystem::path& path, const EmbeddingMatrix& m) {
    if (m.data.size() != m.rows * m.dims) throw ShapeError("matrix payload does not match rows*dims");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, m.rows);
    put<std::uint64_t>(out, m.dims);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingMatrix read_embx(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw FormatError("bad EMBX magic: " + path.string());
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion)
        throw FormatError("unsupported EMBX version " + std::to_string(version) + ": " + path.string());
    const auto rows = get<std::uint64_t>(in, path);
    const auto dims = get<std::uint64_t>(in, path);

    const auto header = static_cast<std::uintmax_t>(kMagic.size() + 4 + 8 + 8);
    const auto size = std::filesystem::file_size(path);
    const auto payload = size - header;
    if (dims != 0 && rows > payload / (dims * sizeof(float)))
        throw FormatError("EMBX payload shorter than rows*dims: " + path.string());
    if (payload != rows * dims * sizeof(float))
        throw FormatError("EMBX payload size mismatch: " + path.string());

    EmbeddingMatrix m(rows, dims);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!in) throw FormatError("truncated EMBX payload: " + path.string());
    for (std::size_t k = 0; k < m.data.size(); ++k) {
        if (!std::isfinite(m.data[k]))
            throw DataError("non-finite value at row " + std::to_string(k / dims) + " in " + path.string());
    }
    return m;
}

std::filesystem::path manifest_path(const std::filesystem::path& embx_path) {
    auto p = embx_path;
    p.replace_extension(".manifest.json");
    return p;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    nlohmann::json j;
    j["role"] = to_string(manifest.role);
    j["names"] = manifest.names;
    j["labels"] = manifest.labels ? nlohmann::json(*manifest.labels) : nlohmann::json(nullptr);
    j["count"] = manifest.count;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing manifest: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        Manifest m;
        m.role = parse_role(j.at("role").get<std::string>());
        if (j.contains("names") && !j["names"].is_null()) m.names = j["names"].get<std::vector<std::string>>();
        if (j.contains("labels") && !j["labels"].is_null()) m.labels = j["labels"].get<std::vector<int>>();
        m.count = j.at("count").get<std::size_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest " + path.string() + ": " + e.what());
    }
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m,
                     const Manifest& manifest) {
    validate_pair(m, manifest);
    write_embx(path, m);
    write_manifest(manifest_path(path), manifest);
}

void validate_pair(const EmbeddingMatrix& m, const Manifest& manifest) {
    if (manifest.count != m.rows)
        throw ConsistencyError("manifest count " + std::to_string(manifest.count) +
                               " != matrix rows " + std::to_string(m.rows));
    if (!manifest.names.empty() && manifest.names.size() != m.rows)
        throw ConsistencyError("manifest names length does not match matrix rows");
    if (is_text_role(manifest.role) && manifest.names.size() != m.rows)
        throw ConsistencyError("text manifests need one name per row");
    if (manifest.labels && manifest.labels->size() != m.rows)
        throw ConsistencyError("manifest labels length does not match matrix rows");
    if (manifest.role == Role::source_images && !manifest.labels)
        throw ConsistencyError("source_images manifest requires labels");
    if (manifest.labels) {
        for (int label : *manifest.labels)
            if (label < 0) throw ConsistencyError("negative class label in manifest");
    }
}

void validate_source_labels(const Manifest& manifest, std::size_t n_classes) {
    if (!manifest.labels) throw ConsistencyError("source_images manifest requires labels");
    for (int label : *manifest.labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= n_classes)
            throw ConsistencyError("source label " + std::to_string(label) + " outside [0, " +
                                   std::to_string(n_classes) + ")");
    }
}

std::pair<EmbeddingMatrix, Manifest> load_embeddings(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    auto matrix = read_embx(path);
    auto manifest = read_manifest(manifest_path(path));
    validate_pair(matrix, manifest);
    if (is_text_role(manifest.role)) {
        for (std::size_t i = 0; i < matrix.rows; ++i) {
            if (norm(matrix.row(i)) < kDegenerateNorm)
                throw DegenerateError("zero-norm text row " + std::to_string(i) + " in " + path.string());
        }
    }
    return {std::move(matrix), std::move(manifest)};
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
    EmbeddingMatrix out = m;
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double n = norm(m.row(i));
        if (n < kDegenerateNorm) throw DegenerateError("row " + std::to_string(i) + " has zero norm");
        auto dst = out.row(i);
        auto src = m.row(i);
        for (std::size_t k = 0; k < m.dims; ++k) dst[k] = static_cast<float>(src[k] / n);
    }
    out.normalized = true;
    return out;
}

EmbeddingMatrix stack_rows(const EmbeddingMatrix& top, const EmbeddingMatrix& bottom) {
    if (top.rows > 0 && bottom.rows > 0 && top.dims != bottom.dims)
        throw ShapeError("cannot stack matrices with different dims");
    EmbeddingMatrix out;
    out.rows = top.rows + bottom.rows;
    out.dims = top.rows > 0 ? top.dims : bottom.dims;
    out.data.reserve(top.data.size() + bottom.data.size());
    out.data.insert(out.data.end(), top.data.begin(), top.data.end());
    out.data.insert(out.data.end(), bottom.data.begin(), bottom.data.end());
    out.normalized = (top.rows == 0 || top.normalized) && (bottom.rows == 0 || bottom.normalized);
    return out;
}

EmbeddingMatrix gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> indices) {
    EmbeddingMatrix out(indices.size(), m.dims);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= m.rows) throw DomainError("row index out of range");
        auto src = m.row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    out.normalized = m.normalized;
    return out;
}

SimilarityCache build_similarity_cache(const EmbeddingMatrix& targets, const EmbeddingMatrix& texts,
                                       std::size_t n_source) {
    if (targets.dims != texts.dims)
        throw ShapeError("dims mismatch: targets " + std::to_string(targets.dims) + " vs texts " +
                         std::to_string(texts.dims));
    if (n_source > texts.rows) throw ShapeError("n_source exceeds text rows");
    if (!targets.normalized || !texts.normalized)
        throw DomainError("similarity cache requires normalized inputs");

    SimilarityCache cache;
    cache.n_targets = targets.rows;
    cache.n_source = n_source;
    cache.n_nouns = texts.rows - n_source;
    cache.sims.assign(targets.rows * texts.rows, 0.0f);
    const std::size_t cols = texts.rows;
    parallel_for(targets.rows, 16, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto z = targets.row(i);
            for (std::size_t j = 0; j < cols; ++j)
                cache.sims[i * cols + j] = static_cast<float>(dot(z, texts.row(j)));
        }
    });
    return cache;
}

}  // namespace tasc
