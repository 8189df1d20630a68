#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tasc/error.hpp"
#include "tasc/tasc_search.hpp"

using namespace tasc;

namespace {

// Targets clustered tightly around `n_clusters` random anchors. Text columns
// are `n_source` anchors followed by the remaining anchors and then junk nouns.
struct Instance {
    EmbeddingMatrix anchors;
    EmbeddingMatrix targets;
    EmbeddingMatrix texts;
    std::vector<int> labels;
    SimilarityCache cache;
};

Instance make_instance(std::size_t n_clusters, std::size_t per_cluster, std::size_t n_source,
                       std::size_t n_junk, std::size_t dims, std::uint64_t seed, double spread = 0.05) {
    std::mt19937_64 rng(seed);
    Instance in;
    in.anchors = oracle::random_unit_rows(n_clusters, dims, rng);
    std::normal_distribution<double> g(0.0, spread / std::sqrt(static_cast<double>(dims)));
    EmbeddingMatrix raw(n_clusters * per_cluster, dims);
    for (std::size_t c = 0; c < n_clusters; ++c)
        for (std::size_t s = 0; s < per_cluster; ++s) {
            const std::size_t row = c * per_cluster + s;
            for (std::size_t k = 0; k < dims; ++k) raw.at(row, k) = in.anchors.at(c, k) + static_cast<float>(g(rng));
            in.labels.push_back(static_cast<int>(c));
        }
    in.targets = l2_normalize(raw);
    in.texts = stack_rows(in.anchors, oracle::random_unit_rows(n_junk, dims, rng));
    in.cache = build_similarity_cache(in.targets, in.texts, n_source);
    return in;
}

SearchState state_of(std::size_t n_source, std::vector<std::size_t> slots, std::vector<std::uint8_t> retained) {
    SearchState s;
    s.n_source = n_source;
    s.slots = std::move(slots);
    s.retained = std::move(retained);
    return s;
}

EmbeddingMatrix active_texts(const SearchState& s, const EmbeddingMatrix& texts) {
    const auto cols = s.active_columns();
    return gather_rows(texts, cols);
}

}  // namespace

TEST_CASE("init_state") {
    std::mt19937_64 rng(1);
    SearchConfig cfg;
    cfg.k0 = 100;
    const auto s = init_state(10, 500, cfg, rng);
    CHECK(s.size() == 100);
    CHECK(s.active_count() == 100);
    for (std::size_t i = 0; i < 10; ++i) CHECK(s.slots[i] == i);
    std::set<std::size_t> nouns(s.slots.begin() + 10, s.slots.end());
    CHECK(nouns.size() == 90);
    CHECK(*nouns.begin() >= 10);
    CHECK(*nouns.rbegin() < 510);

    cfg.k0 = 10;
    const auto only = init_state(10, 500, cfg, rng);
    CHECK(only.size() == 10);
    CHECK(count_classes(only).k_private == 0);

    cfg.k0 = 100;
    std::mt19937_64 a(7), b(7);
    CHECK(init_state(10, 500, cfg, a) == init_state(10, 500, cfg, b));

    CHECK_THROWS_AS(init_state(10, 50, cfg, rng), ConfigError);
}

TEST_CASE("count_classes") {
    const auto s = state_of(3, {0, 1, 2, 7, 9}, {1, 0, 1, 1, 0});
    const auto c = count_classes(s);
    CHECK(c.k == 3);
    CHECK(c.k_common == 2);
    CHECK(c.k_private == 1);
    CHECK(c.k == c.k_common + c.k_private);
}

TEST_CASE("loss_for") {
    const PredictionConfig pcfg;
    auto in = make_instance(2, 30, 0, 10, 64, 3);

    SUBCASE("single active center") {
        CHECK(loss_for(state_of(0, {0, 1}, {1, 0}), in.cache, pcfg) == 0.0);
    }
    SUBCASE("two separated clusters") {
        const double loss = loss_for(state_of(0, {0, 1}, {1, 1}), in.cache, pcfg);
        CHECK(std::abs(loss + pcfg.lambda_div * std::log(2.0)) <= 0.05);
    }
    SUBCASE("matches the naive oracle") {
        std::mt19937_64 rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<std::size_t> cols{0, 1};
            std::vector<std::size_t> pool{2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
            std::shuffle(pool.begin(), pool.end(), rng);
            cols.insert(cols.end(), pool.begin(), pool.begin() + 4);
            const auto s = state_of(0, cols, std::vector<std::uint8_t>(cols.size(), 1));
            const auto expected = oracle::im_loss(in.targets, active_texts(s, in.texts), pcfg.tau, pcfg.lambda_div);
            CHECK(std::abs(loss_for(s, in.cache, pcfg) - static_cast<double>(expected)) <= 1e-5);
        }
    }
    SUBCASE("no active centers") {
        CHECK_THROWS_AS(loss_for(state_of(0, {0, 1}, {0, 0}), in.cache, pcfg), DegenerateError);
    }
}

TEST_CASE("evaluate_options agrees with direct evaluation") {
    const PredictionConfig pcfg;
    auto in = make_instance(5, 12, 2, 40, 32, 11, 0.8);
    const auto s = state_of(2, {0, 1, 2, 3, 20, 30}, {1, 0, 1, 1, 1, 1});
    const std::vector<std::size_t> candidates{20, 4, 5, 8, 12, 44};
    const std::size_t pos = 4;
    const auto opts = evaluate_options(s, pos, candidates, in.cache, pcfg);
    REQUIRE(opts.keep.size() == candidates.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        auto t = s;
        t.slots[pos] = candidates[k];
        CHECK(opts.keep[k] == doctest::Approx(loss_for(t, in.cache, pcfg)).epsilon(1e-10));
    }
    auto t = s;
    t.retained[pos] = 0;
    REQUIRE(opts.discard.has_value());
    CHECK(*opts.discard == doctest::Approx(loss_for(t, in.cache, pcfg)).epsilon(1e-10));

    const auto alone = state_of(2, {0, 1, 7}, {0, 0, 1});
    CHECK_FALSE(evaluate_options(alone, 2, candidates, in.cache, pcfg).discard.has_value());
    CHECK_THROWS_AS(evaluate_options(s, 9, candidates, in.cache, pcfg), DomainError);
}

TEST_CASE("retain_beats_discard") {
    CHECK(retain_beats_discard(-1.0, -0.5));
    CHECK_FALSE(retain_beats_discard(-0.5, -0.5));
    CHECK_FALSE(retain_beats_discard(-0.5 - 1e-14, -0.5));
    CHECK_FALSE(retain_beats_discard(-0.4, -0.5));
}

TEST_CASE("greedy_step") {
    const PredictionConfig pcfg;
    SearchConfig scfg;
    auto in = make_instance(4, 20, 0, 30, 64, 21);
    const SearchContext ctx{in.cache, in.targets, in.texts};

    SUBCASE("incumbent only, retaining wins") {
        const auto s = state_of(0, {0, 1, 2, 3}, {1, 1, 1, 0});
        const std::vector<std::size_t> only{3};
        const auto step = greedy_step_with_candidates(s, 3, only, ctx, pcfg, scfg);
        auto expected = s;
        expected.retained[3] = 1;
        CHECK(step.state == expected);
    }
    SUBCASE("missing anchor is selected over junk") {
        // Three anchors plus a junk noun; the candidates include the fourth anchor.
        const auto s = state_of(0, {0, 1, 2, 10}, {1, 1, 1, 1});
        const std::vector<std::size_t> candidates{10, 11, 3, 12, 13};
        const auto step = greedy_step_with_candidates(s, 3, candidates, ctx, pcfg, scfg);
        std::size_t best = 0;
        double best_loss = std::numeric_limits<double>::infinity();
        for (auto c : candidates) {
            auto t = s;
            t.slots[3] = c;
            const double l = loss_for(t, in.cache, pcfg);
            if (l < best_loss) {
                best_loss = l;
                best = c;
            }
        }
        CHECK(best == 3);
        CHECK(step.state.slots[3] == 3);
        CHECK(step.state.retained[3] == 1);
    }
    SUBCASE("redundant duplicate center is discarded") {
        // Text column 30 duplicates anchor 0.
        auto texts = in.texts;
        for (std::size_t k = 0; k < texts.dims; ++k) texts.at(30, k) = texts.at(0, k);
        const auto cache = build_similarity_cache(in.targets, texts, 0);
        const SearchContext dup{cache, in.targets, texts};
        const auto s = state_of(0, {0, 1, 2, 3, 30}, {1, 1, 1, 1, 1});
        const std::vector<std::size_t> only{30};
        auto without = s;
        without.retained[4] = 0;
        CHECK(loss_for(without, cache, pcfg) < loss_for(s, cache, pcfg));
        const auto step = greedy_step_with_candidates(s, 4, only, dup, pcfg, scfg);
        CHECK(step.state.retained[4] == 0);
    }
    SUBCASE("the last active center is never discarded") {
        const auto s = state_of(0, {0, 1, 2, 3}, {0, 0, 1, 0});
        const std::vector<std::size_t> candidates{2, 12};
        const auto step = greedy_step_with_candidates(s, 2, candidates, ctx, pcfg, scfg);
        CHECK(step.state.active_count() == 1);
    }
    SUBCASE("position out of range") {
        std::mt19937_64 rng(0);
        CHECK_THROWS_AS(greedy_step(state_of(0, {0}, {1}), 1, ctx, pcfg, scfg, rng), DomainError);
    }
}

TEST_CASE("protected_source_rule") {
    const PredictionConfig pcfg;
    const SearchConfig scfg;
    // Clusters 0..3 exist in the target; text column 4 (a source slot) has no target mass.
    auto base = make_instance(4, 20, 0, 0, 512, 8);
    std::mt19937_64 rng(99);
    const auto extra = oracle::random_unit_rows(6, 512, rng);
    const auto texts = stack_rows(base.anchors, extra);
    const auto cache = build_similarity_cache(base.targets, texts, 5);
    const SearchContext ctx{cache, base.targets, texts};

    const auto s = state_of(5, {0, 1, 2, 3, 4, 5, 6}, {1, 1, 1, 1, 1, 1, 1});
    CHECK(protected_source_rule(s, 0, ctx, pcfg, scfg));
    CHECK(protected_source_rule(s, 2, ctx, pcfg, scfg));
    CHECK_FALSE(protected_source_rule(s, 4, ctx, pcfg, scfg));

    const auto single = state_of(5, {0, 1, 2, 3, 4}, {0, 0, 0, 0, 1});
    CHECK(protected_source_rule(single, 4, ctx, pcfg, scfg));
    CHECK_THROWS_AS(protected_source_rule(s, 5, ctx, pcfg, scfg), DomainError);
}

TEST_CASE("sample_candidates") {
    std::mt19937_64 rng(4);
    const auto s = state_of(2, {0, 1, 5, 6, 7}, {1, 1, 1, 0, 1});
    for (int trial = 0; trial < 20; ++trial) {
        const auto c = sample_candidates(s, 2, 20, 8, rng);
        CHECK(c.size() == 8);
        CHECK(c.front() == 5);
        std::set<std::size_t> unique(c.begin(), c.end());
        CHECK(unique.size() == c.size());
        CHECK_FALSE(unique.count(7));  // active at another slot
        CHECK(unique.count(6) <= 1);   // inactive elsewhere, so allowed
        for (auto col : c) {
            CHECK(col >= 2);
            CHECK(col < 22);
        }
    }
    // The incumbent is dropped when another active slot holds the same column.
    const auto blocked = state_of(2, {0, 1, 7, 7}, {1, 1, 1, 0});
    const auto c = sample_candidates(blocked, 3, 20, 5, rng);
    CHECK(std::find(c.begin(), c.end(), 7) == c.end());
    // Never more than the eligible pool.
    CHECK(sample_candidates(s, 2, 6, 10, rng).size() == 5);
}

TEST_CASE("run_search invariants") {
    const PredictionConfig pcfg;
    auto in = make_instance(8, 15, 4, 60, 128, 31, 0.3);
    const SearchContext ctx{in.cache, in.targets, in.texts};
    SearchConfig scfg;
    scfg.k0 = 16;
    scfg.n_candidates = 20;
    scfg.n_outer = 4;
    scfg.seed = 5;
    const auto r = run_search(ctx, pcfg, scfg);

    CHECK(r.loss_trace.size() == 4);
    CHECK(r.k_trace.size() == 4);
    CHECK(r.steps.size() == 4 * 16);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.state.slots[i] == i);
    CHECK(r.counts.k == r.state.active_count());
    CHECK(r.counts.k == r.counts.k_common + r.counts.k_private);
    CHECK(r.counts.k >= 1);
    for (const auto& step : r.steps)
        if (!step.forced) CHECK(step.loss_after <= step.loss_before + 1e-6);

    std::set<std::size_t> active_nouns;
    for (std::size_t i = 4; i < r.state.size(); ++i)
        if (r.state.retained[i]) CHECK(active_nouns.insert(r.state.slots[i]).second);

    // The well-separated instance recovers every cluster.
    CHECK(r.counts.k == 8);
    CHECK(r.counts.k_common == 4);

    const auto again = run_search(ctx, pcfg, scfg);
    CHECK(again.state == r.state);
    CHECK(again.loss_trace == r.loss_trace);

    SearchConfig bad = scfg;
    bad.k0 = 2;
    CHECK_THROWS_AS(run_search(ctx, pcfg, bad), ConfigError);
    bad = scfg;
    bad.gamma_ent = 1.0;
    CHECK_THROWS_AS(run_search(ctx, pcfg, bad), ConfigError);
}

TEST_CASE("search report round trip") {
    const PredictionConfig pcfg;
    auto in = make_instance(3, 10, 1, 20, 32, 2);
    const SearchContext ctx{in.cache, in.targets, in.texts};
    SearchConfig scfg;
    scfg.k0 = 6;
    scfg.n_candidates = 10;
    scfg.n_outer = 2;
    const auto r = run_search(ctx, pcfg, scfg);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < in.texts.rows; ++j) names.push_back("w" + std::to_string(j));
    const auto report = search_report(r, names, scfg, pcfg);
    CHECK(report["k"] == r.counts.k);
    CHECK(report["active_names"].size() == r.counts.k);
    const auto back = search_result_from_report(report);
    CHECK(back.state == r.state);
    CHECK(back.loss_trace == r.loss_trace);
    CHECK(back.counts.k_private == r.counts.k_private);

    auto broken = report;
    broken["retained"].erase(0);
    CHECK_THROWS_AS(search_result_from_report(broken), FormatError);
}
