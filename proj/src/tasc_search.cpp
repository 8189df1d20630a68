#include "tasc/tasc_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "tasc/error.hpp"

namespace tasc {

namespace {

// Below this the shifted partition function of an option is treated as
// underflowed and the option is re-evaluated directly.
constexpr double kTinyPartition = 1e-280;

double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

double direct_loss(std::span<const std::size_t> columns, const SimilarityCache& cache,
                   const PredictionConfig& cfg) {
    const std::size_t k = columns.size();
    if (k == 0) throw DegenerateError("no active centers");
    std::vector<double> mean(k, 0.0);
    std::vector<double> sims(k);
    double ent = 0.0;
    for (std::size_t n = 0; n < cache.n_targets; ++n) {
        for (std::size_t j = 0; j < k; ++j) sims[j] = cache.at(n, columns[j]);
        const auto p = softmax_scaled(sims, cfg.tau);
        ent += entropy(p);
        for (std::size_t j = 0; j < k; ++j) mean[j] += p[j];
    }
    const auto count = static_cast<double>(cache.n_targets);
    for (double& v : mean) v /= count;
    return ent / count - cfg.lambda_div * entropy(mean);
}

std::vector<std::size_t> active_except(const SearchState& state, std::size_t position) {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < state.size(); ++i)
        if (i != position && state.retained[i]) cols.push_back(state.slots[i]);
    return cols;
}

void check_position(const SearchState& state, std::size_t position) {
    if (position >= state.size())
        throw DomainError("slot " + std::to_string(position) + " out of range [0, " +
                          std::to_string(state.size()) + ")");
}

}  // namespace

void SearchConfig::validate(std::size_t n_source, std::size_t n_nouns) const {
    if (k0 < n_source) throw ConfigError("k0 must be at least the number of source classes");
    if (k0 == 0) throw ConfigError("k0 must be positive");
    if (n_candidates < 1) throw ConfigError("n_candidates must be >= 1");
    if (k0 > n_source && n_candidates > n_nouns)
        throw ConfigError("n_candidates (" + std::to_string(n_candidates) + ") exceeds vocabulary size (" +
                          std::to_string(n_nouns) + ")");
    if (!(gamma_ent > 0.0 && gamma_ent < 1.0)) throw ConfigError("gamma_ent must lie in (0, 1)");
    if (n_outer < 1) throw ConfigError("n_outer must be >= 1");
}

std::size_t SearchState::active_count() const {
    return static_cast<std::size_t>(std::count(retained.begin(), retained.end(), std::uint8_t{1}));
}

std::vector<std::size_t> SearchState::active_columns() const {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < slots.size(); ++i)
        if (retained[i]) cols.push_back(slots[i]);
    return cols;
}

ClassCountEstimate count_classes(const SearchState& state) {
    ClassCountEstimate c;
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (!state.retained[i]) continue;
        ++c.k;
        if (i < state.n_source)
            ++c.k_common;
        else
            ++c.k_private;
    }
    return c;
}

SearchState init_state(std::size_t n_source, std::size_t n_nouns, const SearchConfig& cfg,
                       std::mt19937_64& rng) {
    if (cfg.k0 < n_source) throw ConfigError("k0 must be at least the number of source classes");
    const std::size_t free_slots = cfg.k0 - n_source;
    if (n_nouns < free_slots)
        throw ConfigError("vocabulary of " + std::to_string(n_nouns) + " nouns cannot fill " +
                          std::to_string(free_slots) + " slots");
    SearchState s;
    s.n_source = n_source;
    s.slots.resize(cfg.k0);
    s.retained.assign(cfg.k0, 1);
    std::iota(s.slots.begin(), s.slots.begin() + static_cast<std::ptrdiff_t>(n_source), std::size_t{0});

    std::vector<std::size_t> pool(n_nouns);
    std::iota(pool.begin(), pool.end(), n_source);
    for (std::size_t k = 0; k < free_slots; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n_nouns - 1);
        std::swap(pool[k], pool[pick(rng)]);
        s.slots[n_source + k] = pool[k];
    }
    return s;
}

double loss_for(const SearchState& state, const SimilarityCache& cache, const PredictionConfig& cfg) {
    const auto cols = state.active_columns();
    if (cols.empty()) throw DegenerateError("loss_for: state has no active centers");
    return direct_loss(cols, cache, cfg);
}

OptionLosses evaluate_options(const SearchState& state, std::size_t position,
                              std::span<const std::size_t> candidates, const SimilarityCache& cache,
                              const PredictionConfig& cfg) {
    check_position(state, position);
    const auto rest = active_except(state, position);
    const std::size_t n = cache.n_targets;
    const std::size_t a = rest.size();
    const std::size_t c = candidates.size();
    if (n == 0) throw DomainError("no target samples");
    for (auto col : candidates)
        if (col >= cache.cols()) throw DomainError("candidate column out of range");

    // Per-sample shift: the largest similarity among every column in play.
    Eigen::VectorXd shift(n);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (auto col : rest) m = std::max(m, static_cast<double>(cache.at(i, col)));
        for (auto col : candidates) m = std::max(m, static_cast<double>(cache.at(i, col)));
        shift(i) = m;
    }

    const double inv_tau = 1.0 / cfg.tau;
    Eigen::MatrixXd rest_exp(n, a);
    Eigen::VectorXd z_rest = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd s_rest = Eigen::VectorXd::Zero(n);  // sum of e * logit
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < a; ++j) {
            const double logit = (cache.at(i, rest[j]) - shift(i)) * inv_tau;
            const double e = std::exp(logit);
            rest_exp(i, j) = e;
            z_rest(i) += e;
            s_rest(i) += e * logit;
        }
    }

    Eigen::MatrixXd inv_z(n, c);
    Eigen::MatrixXd cand_exp(n, c);
    Eigen::VectorXd mean_ent = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
    std::vector<char> underflow(c, 0);
    for (std::size_t k = 0; k < c; ++k) {
        double ent = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double logit = (cache.at(i, candidates[k]) - shift(i)) * inv_tau;
            const double e = std::exp(logit);
            const double z = z_rest(i) + e;
            if (z < kTinyPartition) underflow[k] = 1;
            cand_exp(i, k) = e;
            inv_z(i, k) = 1.0 / z;
            ent += std::log(z) - (s_rest(i) + e * logit) / z;
        }
        mean_ent(k) = ent / static_cast<double>(n);
    }

    const auto count = static_cast<double>(n);
    Eigen::MatrixXd mean_rest = rest_exp.transpose() * inv_z / count;  // a x c

    OptionLosses out;
    out.keep.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
        if (underflow[k]) {
            auto cols = rest;
            cols.push_back(candidates[k]);
            out.keep[k] = direct_loss(cols, cache, cfg);
            continue;
        }
        double h_mean = 0.0;
        for (std::size_t j = 0; j < a; ++j) h_mean -= xlogx(mean_rest(j, k));
        h_mean -= xlogx(cand_exp.col(k).dot(inv_z.col(k)) / count);
        out.keep[k] = mean_ent(k) - cfg.lambda_div * h_mean;
    }

    if (a > 0) {
        if (z_rest.minCoeff() < kTinyPartition) {
            out.discard = direct_loss(rest, cache, cfg);
        } else {
            Eigen::VectorXd inv = z_rest.cwiseInverse();
            double ent = 0.0;
            for (std::size_t i = 0; i < n; ++i) ent += std::log(z_rest(i)) - s_rest(i) * inv(i);
            Eigen::VectorXd mean = rest_exp.transpose() * inv / count;
            double h_mean = 0.0;
            for (std::size_t j = 0; j < a; ++j) h_mean -= xlogx(mean(j));
            out.discard = ent / count - cfg.lambda_div * h_mean;
        }
    }
    return out;
}

bool protected_source_rule(const SearchState& state, std::size_t position, const SearchContext& ctx,
                           const PredictionConfig& pcfg, const SearchConfig& scfg) {
    check_position(state, position);
    if (position >= state.n_source) throw DomainError("protected-source rule applies to source slots only");
    const auto cols = state.active_columns();
    if (cols.empty()) return false;
    const auto& cache = ctx.cache;
    const std::size_t d = ctx.targets.dims;

    std::vector<double> sums(cols.size() * d, 0.0);
    std::vector<std::size_t> counts(cols.size(), 0);
    for (std::size_t i = 0; i < cache.n_targets; ++i) {
        std::size_t best = 0;
        float best_sim = cache.at(i, cols[0]);
        for (std::size_t j = 1; j < cols.size(); ++j) {
            const float s = cache.at(i, cols[j]);
            if (s > best_sim) {
                best_sim = s;
                best = j;
            }
        }
        ++counts[best];
        auto z = ctx.targets.row(i);
        double* acc = sums.data() + best * d;
        for (std::size_t k = 0; k < d; ++k) acc[k] += z[k];
    }

    auto w = ctx.texts.row(state.slots[position]);
    std::vector<double> sims;
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (counts[j] == 0) continue;
        const double* mu = sums.data() + j * d;
        double len = 0.0;
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            len += mu[k] * mu[k];
            proj += mu[k] * w[k];
        }
        len = std::sqrt(len);
        sims.push_back(len > 0.0 ? proj / len : 0.0);
    }
    if (sims.empty()) return false;
    const auto p = softmax_scaled(sims, pcfg.tau);
    return normalized_entropy(p) < scfg.gamma_ent;
}

bool retain_beats_discard(double keep, double discard) {
    return keep < discard - kLossTieTolerance * std::max(1.0, std::abs(discard));
}

StepResult greedy_step_with_candidates(const SearchState& state, std::size_t position,
                                       std::span<const std::size_t> candidates,
                                       const SearchContext& ctx, const PredictionConfig& pcfg,
                                       const SearchConfig& scfg) {
    check_position(state, position);
    StepResult result{state, false};
    auto& next = result.state;

    if (position < state.n_source) {
        if (protected_source_rule(state, position, ctx, pcfg, scfg)) {
            next.retained[position] = 1;
            result.forced = true;
            return result;
        }
        const std::size_t incumbent = state.slots[position];
        const auto options = evaluate_options(state, position, std::span(&incumbent, 1), ctx.cache, pcfg);
        next.retained[position] = (!options.discard || retain_beats_discard(options.keep[0], *options.discard)) ? 1 : 0;
        return result;
    }

    if (candidates.empty()) throw DomainError("greedy step needs at least one candidate");
    const auto options = evaluate_options(state, position, candidates, ctx.cache, pcfg);
    std::size_t best = 0;
    for (std::size_t k = 1; k < candidates.size(); ++k) {
        const double lk = options.keep[k];
        const double lb = options.keep[best];
        if (lk < lb || (lk == lb && candidates[k] < candidates[best])) best = k;
    }
    next.slots[position] = candidates[best];
    // Ties discard; with no other active slot the step must retain.
    next.retained[position] =
        (!options.discard || retain_beats_discard(options.keep[best], *options.discard)) ? 1 : 0;
    return result;
}

std::vector<std::size_t> sample_candidates(const SearchState& state, std::size_t position,
                                           std::size_t n_nouns, std::size_t n_candidates,
                                           std::mt19937_64& rng) {
    const std::size_t first = state.n_source;
    std::vector<char> blocked(n_nouns, 0);
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (i == position || !state.retained[i]) continue;
        const std::size_t col = state.slots[i];
        if (col >= first) blocked[col - first] = 1;
    }

    std::vector<std::size_t> out;
    const std::size_t incumbent = state.slots[position];
    const bool keep_incumbent = incumbent >= first && !blocked[incumbent - first];
    if (keep_incumbent) {
        out.push_back(incumbent);
        blocked[incumbent - first] = 1;
    }
    std::vector<std::size_t> pool;
    pool.reserve(n_nouns);
    for (std::size_t k = 0; k < n_nouns; ++k)
        if (!blocked[k]) pool.push_back(first + k);

    const std::size_t need = std::min(pool.size(), n_candidates - std::min(n_candidates, out.size()));
    for (std::size_t k = 0; k < need; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
        out.push_back(pool[k]);
    }
    return out;
}

StepResult greedy_step(const SearchState& state, std::size_t position, const SearchContext& ctx,
                       const PredictionConfig& pcfg, const SearchConfig& scfg, std::mt19937_64& rng) {
    check_position(state, position);
    if (position < state.n_source) return greedy_step_with_candidates(state, position, {}, ctx, pcfg, scfg);
    const auto candidates = sample_candidates(state, position, ctx.cache.n_nouns, scfg.n_candidates, rng);
    return greedy_step_with_candidates(state, position, candidates, ctx, pcfg, scfg);
}

SearchResult run_search(const SearchContext& ctx, const PredictionConfig& pcfg, const SearchConfig& scfg) {
    pcfg.validate();
    scfg.validate(ctx.cache.n_source, ctx.cache.n_nouns);
    if (ctx.cache.n_targets == 0) throw DomainError("search needs target samples");
    if (ctx.texts.rows != ctx.cache.cols()) throw ShapeError("text rows do not match cache columns");
    if (ctx.targets.rows != ctx.cache.n_targets) throw ShapeError("target rows do not match cache rows");

    std::mt19937_64 rng(scfg.seed);
    SearchResult result;
    result.state = init_state(ctx.cache.n_source, ctx.cache.n_nouns, scfg, rng);
    double loss = loss_for(result.state, ctx.cache, pcfg);

    for (std::size_t outer = 0; outer < scfg.n_outer; ++outer) {
        for (std::size_t i = 0; i < result.state.size(); ++i) {
            auto step = greedy_step(result.state, i, ctx, pcfg, scfg, rng);
            StepRecord rec;
            rec.outer = outer;
            rec.position = i;
            rec.loss_before = loss;
            rec.forced = step.forced;
            if (!(step.state == result.state)) {
                result.state = std::move(step.state);
                loss = loss_for(result.state, ctx.cache, pcfg);
            }
            rec.loss_after = loss;
            rec.k_after = result.state.active_count();
            result.steps.push_back(rec);
        }
        result.loss_trace.push_back(loss);
        result.k_trace.push_back(result.state.active_count());
    }
    result.counts = count_classes(result.state);
    return result;
}

nlohmann::json search_report(const SearchResult& result, std::span<const std::string> column_names,
                             const SearchConfig& scfg, const PredictionConfig& pcfg) {
    const auto& s = result.state;
    nlohmann::json j;
    j["n_source"] = s.n_source;
    j["slots"] = s.slots;
    j["retained"] = s.retained;
    std::vector<std::string> slot_names;
    std::vector<std::string> active_names;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& name = s.slots[i] < column_names.size() ? column_names[s.slots[i]] : std::string{};
        slot_names.push_back(name);
        if (s.retained[i]) active_names.push_back(name);
    }
    j["slot_names"] = slot_names;
    j["active_names"] = active_names;
    j["k"] = result.counts.k;
    j["k_common"] = result.counts.k_common;
    j["k_private"] = result.counts.k_private;
    j["loss_trace"] = result.loss_trace;
    j["k_trace"] = result.k_trace;
    j["config"] = {{"k0", scfg.k0},
                   {"n_candidates", scfg.n_candidates},
                   {"gamma_ent", scfg.gamma_ent},
                   {"n_outer", scfg.n_outer},
                   {"seed", scfg.seed},
                   {"tau", pcfg.tau},
                   {"lambda_div", pcfg.lambda_div}};
    return j;
}

SearchResult search_result_from_report(const nlohmann::json& report) {
    SearchResult r;
    try {
        r.state.n_source = report.at("n_source").get<std::size_t>();
        r.state.slots = report.at("slots").get<std::vector<std::size_t>>();
        r.state.retained = report.at("retained").get<std::vector<std::uint8_t>>();
        if (report.contains("loss_trace")) r.loss_trace = report["loss_trace"].get<std::vector<double>>();
        if (report.contains("k_trace")) r.k_trace = report["k_trace"].get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed search report: ") + e.what());
    }
    if (r.state.slots.size() != r.state.retained.size() || r.state.n_source > r.state.slots.size())
        throw FormatError("search report slots/retained are inconsistent");
    r.counts = count_classes(r.state);
    return r;
}

}  // namespace tasc
