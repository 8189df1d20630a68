#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tasc/embedding_store.hpp"
#include "tasc/error.hpp"
#include "tasc/parallel.hpp"

using namespace tasc;

namespace {

Manifest image_manifest(Role role, std::size_t rows, bool with_labels) {
    Manifest m;
    m.role = role;
    m.count = rows;
    if (with_labels) m.labels = std::vector<int>(rows, 0);
    return m;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("EMBX header layout and round trip for a 3x4 matrix") {
    const auto dir = oracle::scratch_dir("embx_layout");
    EmbeddingMatrix m(3, 4);
    for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = 0.25f * static_cast<float>(k) - 1.0f;
    write_embx(dir / "m.embx", m);

    const auto bytes = file_bytes(dir / "m.embx");
    REQUIRE(bytes.size() == 4 + 4 + 8 + 8 + 48);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "EMBX");
    std::uint32_t version = 0;
    std::uint64_t rows = 0, dims = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&rows, bytes.data() + 8, 8);
    std::memcpy(&dims, bytes.data() + 16, 8);
    CHECK(version == 1);
    CHECK(rows == 3);
    CHECK(dims == 4);

    const auto back = read_embx(dir / "m.embx");
    CHECK(back.rows == 3);
    CHECK(back.dims == 4);
    CHECK(back.data == m.data);
}

TEST_CASE("save then load is bitwise identical for random matrices") {
    const auto dir = oracle::scratch_dir("embx_roundtrip");
    std::mt19937_64 rng(7);
    std::normal_distribution<float> g(0.0f, 3.0f);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t rows = 1 + rng() % 17, dims = 1 + rng() % 33;
        EmbeddingMatrix m(rows, dims);
        for (auto& v : m.data) v = g(rng);
        const auto path = dir / ("r" + std::to_string(trial) + ".embx");
        save_embeddings(path, m, image_manifest(Role::target_images, rows, false));
        const auto [back, manifest] = load_embeddings(path);
        REQUIRE(back.data.size() == m.data.size());
        CHECK(std::memcmp(back.data.data(), m.data.data(), m.data.size() * sizeof(float)) == 0);
        CHECK_FALSE(back.normalized);
        CHECK(manifest.count == rows);
        CHECK(manifest.role == Role::target_images);
    }
}

TEST_CASE("manifest round trip keeps names and labels") {
    const auto dir = oracle::scratch_dir("manifest");
    Manifest m;
    m.role = Role::source_images;
    m.count = 3;
    m.labels = std::vector<int>{0, 2, 1};
    write_manifest(dir / "a.manifest.json", m);
    const auto back = read_manifest(dir / "a.manifest.json");
    CHECK(back.role == Role::source_images);
    CHECK(back.labels == m.labels);
    CHECK(back.count == 3);
    CHECK(manifest_path("x/source.embx") == std::filesystem::path("x/source.manifest.json"));
}

TEST_CASE("load rejects malformed files") {
    const auto dir = oracle::scratch_dir("embx_bad");
    EmbeddingMatrix m(3, 4);
    save_embeddings(dir / "ok.embx", m, image_manifest(Role::target_images, 3, false));
    const auto good = file_bytes(dir / "ok.embx");

    SUBCASE("bad magic") {
        auto b = good;
        b[0] = 'X';
        write_bytes(dir / "ok.embx", b);
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), FormatError);
    }
    SUBCASE("bad version") {
        auto b = good;
        b[4] = 2;
        write_bytes(dir / "ok.embx", b);
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), FormatError);
    }
    SUBCASE("truncated payload") {
        auto b = good;
        b.resize(b.size() - 3);
        write_bytes(dir / "ok.embx", b);
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), FormatError);
    }
    SUBCASE("truncated header") {
        auto b = good;
        b.resize(10);
        write_bytes(dir / "ok.embx", b);
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), FormatError);
    }
    SUBCASE("non-finite value") {
        EmbeddingMatrix bad(2, 2);
        bad.data[3] = std::numeric_limits<float>::quiet_NaN();
        write_embx(dir / "ok.embx", bad);
        write_manifest(dir / "ok.manifest.json", image_manifest(Role::target_images, 2, false));
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), DataError);
    }
    SUBCASE("manifest count disagrees with rows") {
        write_manifest(dir / "ok.manifest.json", image_manifest(Role::target_images, 5, false));
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), ConsistencyError);
    }
    SUBCASE("missing manifest") {
        std::filesystem::remove(dir / "ok.manifest.json");
        CHECK_THROWS_AS(load_embeddings(dir / "ok.embx"), IoError);
    }
    SUBCASE("missing file names the path") {
        try {
            load_embeddings(dir / "nope.embx");
            FAIL("expected an error");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("nope.embx") != std::string::npos);
        }
    }
}

TEST_CASE("manifest invariants") {
    EmbeddingMatrix m(2, 3);
    m.data.assign(6, 1.0f);
    CHECK_THROWS_AS(validate_pair(m, image_manifest(Role::source_images, 2, false)), ConsistencyError);
    CHECK_NOTHROW(validate_pair(m, image_manifest(Role::source_images, 2, true)));

    Manifest text;
    text.role = Role::noun_vocab;
    text.count = 2;
    CHECK_THROWS_AS(validate_pair(m, text), ConsistencyError);
    text.names = {"a", "b"};
    CHECK_NOTHROW(validate_pair(m, text));

    Manifest src = image_manifest(Role::source_images, 2, true);
    src.labels = std::vector<int>{0, 3};
    CHECK_THROWS_AS(validate_source_labels(src, 3), ConsistencyError);
    CHECK_NOTHROW(validate_source_labels(src, 4));
}

TEST_CASE("zero-norm text rows are rejected at load") {
    const auto dir = oracle::scratch_dir("zero_text");
    EmbeddingMatrix m(2, 3);
    m.data = {1, 0, 0, 0, 0, 0};
    Manifest text;
    text.role = Role::source_classnames;
    text.count = 2;
    text.names = {"cat", "dog"};
    save_embeddings(dir / "t.embx", m, text);
    CHECK_THROWS_AS(load_embeddings(dir / "t.embx"), DegenerateError);
}

TEST_CASE("l2_normalize") {
    EmbeddingMatrix m(2, 2);
    m.data = {3, 4, 1, 0};
    const auto n = l2_normalize(m);
    CHECK(n.normalized);
    CHECK(n.at(0, 0) == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n.at(0, 1) == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(n.at(1, 0) == 1.0f);
    CHECK(n.at(1, 1) == 0.0f);

    std::mt19937_64 rng(3);
    std::normal_distribution<float> g;
    EmbeddingMatrix r(100, 64);
    for (auto& v : r.data) v = g(rng);
    const auto rn = l2_normalize(r);
    const auto twice = l2_normalize(rn);
    for (std::size_t i = 0; i < rn.rows; ++i) {
        CHECK(std::abs(norm(rn.row(i)) - 1.0) <= 1e-5);
        for (std::size_t k = 0; k < rn.dims; ++k) CHECK(std::abs(twice.at(i, k) - rn.at(i, k)) <= 1e-6);
    }

    EmbeddingMatrix z(1, 3);
    CHECK_THROWS_AS(l2_normalize(z), DegenerateError);
}

TEST_CASE("similarity cache") {
    SUBCASE("identical and orthogonal vectors") {
        EmbeddingMatrix t(1, 2);
        t.data = {1, 0};
        t.normalized = true;
        EmbeddingMatrix x(2, 2);
        x.data = {1, 0, 0, 1};
        x.normalized = true;
        const auto c = build_similarity_cache(t, x, 1);
        CHECK(c.at(0, 0) == 1.0f);
        CHECK(c.at(0, 1) == 0.0f);
        CHECK(c.n_source == 1);
        CHECK(c.n_nouns == 1);
    }
    SUBCASE("matches a naive double loop") {
        std::mt19937_64 rng(11);
        const auto a = oracle::random_unit_rows(10, 8, rng);
        const auto b = oracle::random_unit_rows(7, 8, rng);
        const auto c = build_similarity_cache(a, b);
        for (std::size_t i = 0; i < 10; ++i)
            for (std::size_t j = 0; j < 7; ++j) {
                const double s = static_cast<double>(oracle::dot(a.row(i), b.row(j)));
                CHECK(std::abs(c.at(i, j) - s) <= 1e-5);
                CHECK(c.at(i, j) >= -1.0 - 1e-5);
                CHECK(c.at(i, j) <= 1.0 + 1e-5);
            }
    }
    SUBCASE("independent of the thread count") {
        std::mt19937_64 rng(5);
        const auto a = oracle::random_unit_rows(300, 16, rng);
        const auto b = oracle::random_unit_rows(40, 16, rng);
        set_num_threads(1);
        const auto one = build_similarity_cache(a, b);
        set_num_threads(4);
        const auto four = build_similarity_cache(a, b);
        set_num_threads(1);
        CHECK(one.sims == four.sims);
    }
    SUBCASE("errors") {
        std::mt19937_64 rng(1);
        const auto a = oracle::random_unit_rows(3, 4, rng);
        const auto b = oracle::random_unit_rows(3, 5, rng);
        CHECK_THROWS_AS(build_similarity_cache(a, b), ShapeError);
        EmbeddingMatrix raw(2, 4);
        raw.data.assign(8, 1.0f);
        CHECK_THROWS_AS(build_similarity_cache(raw, a), DomainError);
    }
}

TEST_CASE("stack and gather rows") {
    EmbeddingMatrix a(1, 2), b(2, 2);
    a.data = {1, 2};
    b.data = {3, 4, 5, 6};
    const auto s = stack_rows(a, b);
    CHECK(s.rows == 3);
    CHECK(s.data == std::vector<float>{1, 2, 3, 4, 5, 6});
    const std::vector<std::size_t> idx{2, 0};
    const auto g = gather_rows(s, idx);
    CHECK(g.data == std::vector<float>{5, 6, 1, 2});
    EmbeddingMatrix c(1, 3);
    CHECK_THROWS_AS(stack_rows(a, c), ShapeError);
}
