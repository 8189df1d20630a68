#include "tasc/cli.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "tasc/parallel.hpp"
#include "toml.hpp"

namespace tasc {

namespace {

constexpr std::uint64_t kSynthStage = 1;
constexpr std::uint64_t kSearchStage = 2;
constexpr std::uint64_t kRefineStage = 3;
constexpr std::uint64_t kEvalStage = 4;

template <typename F>
auto tagged(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

// ---- TOML helpers --------------------------------------------------------

void check_keys(const toml::table& t, const std::string& section, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, _] : t) {
        if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end())
            throw ConfigError(fmt::format("unknown key '{}' in [{}]", key.str(), section));
    }
}

const toml::table* section(const toml::table& root, std::string_view name) {
    const auto* node = root.get(name);
    if (!node) return nullptr;
    const auto* t = node->as_table();
    if (!t) throw ConfigError(fmt::format("'{}' must be a table", name));
    return t;
}

void read_double(const toml::table& t, std::string_view key, double& out) {
    const auto* node = t.get(key);
    if (!node) return;
    if (auto v = node->value<double>()) {
        out = *v;
        return;
    }
    throw ConfigError(fmt::format("'{}' must be a number", key));
}

void read_size(const toml::table& t, std::string_view key, std::size_t& out) {
    const auto* node = t.get(key);
    if (!node) return;
    const auto* v = node->as_integer();
    if (!v || v->get() < 0) throw ConfigError(fmt::format("'{}' must be a non-negative integer", key));
    out = static_cast<std::size_t>(v->get());
}

void read_u64(const toml::table& t, std::string_view key, std::uint64_t& out) {
    std::size_t v = out;
    read_size(t, key, v);
    out = v;
}

void read_bool(const toml::table& t, std::string_view key, bool& out) {
    const auto* node = t.get(key);
    if (!node) return;
    const auto* v = node->as_boolean();
    if (!v) throw ConfigError(fmt::format("'{}' must be a boolean", key));
    out = v->get();
}

void read_string(const toml::table& t, std::string_view key, std::string& out) {
    const auto* node = t.get(key);
    if (!node) return;
    const auto* v = node->as_string();
    if (!v) throw ConfigError(fmt::format("'{}' must be a string", key));
    out = v->get();
}

void read_path(const toml::table& t, std::string_view key, std::filesystem::path& out,
               const std::filesystem::path& base) {
    std::string s;
    read_string(t, key, s);
    if (s.empty()) return;
    std::filesystem::path p(s);
    out = p.is_absolute() || base.empty() ? p : base / p;
}

// ---- file helpers --------------------------------------------------------

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create directory {}: {}", dir.string(), ec.message()));
}

void write_search_outputs(const RunConfig& cfg, const Inputs& in, const SearchResult& r) {
    const auto names = column_names(in);
    write_json(cfg.out_dir / kSearchReportFile, search_report(r, names, cfg.search, cfg.prediction));
}

void write_refine_outputs(const RunConfig& cfg, const TrainResult& r) {
    Manifest m;
    m.role = Role::adapter;
    m.count = r.adapter.dims;
    save_embeddings(cfg.out_dir / kAdapterFile, r.adapter.as_embedding_matrix(), m);
    write_json(cfg.out_dir / kRefineReportFile, refine_report(r, cfg));
}

void write_scores(const RunConfig& cfg, const ScoreSet& s) {
    std::ostringstream out;
    write_scores_csv(out, s);
    write_text_file(cfg.out_dir / kScoresFile, out.str());
}

void write_threshold_outputs(const RunConfig& cfg, const ThresholdOutput& t) {
    auto j = fit_report(t.fit, t.threshold);
    if (t.threshold.mode == ThresholdMode::fixed) j["status"] = "skipped";
    write_json(cfg.out_dir / kFitReportFile, j);
}

void write_eval_outputs(const RunConfig& cfg, const Inputs& in, const EmbeddingMatrix& adapted,
                        const ScoreSet& scores, const Threshold& threshold, const std::optional<EvalReport>& report) {
    const auto preds = predict_classes(adapted, in.classnames);
    const auto known = predict_known(scores.scores, threshold);
    std::string csv = "sample_index,prediction,known,score\n";
    for (std::size_t i = 0; i < preds.size(); ++i)
        csv += fmt::format("{},{},{},{}\n", i, preds[i], static_cast<int>(known[i]), scores.scores[i]);
    write_text_file(cfg.out_dir / kPredictionsFile, csv);
    if (report) {
        write_json(cfg.out_dir / kEvalJsonFile, eval_report_json(*report));
        write_text_file(cfg.out_dir / kEvalCsvFile, eval_report_csv(*report));
    }
}

SearchResult read_search(const RunConfig& cfg) {
    return search_result_from_report(read_json(cfg.out_dir / kSearchReportFile));
}

Adapter read_adapter(const RunConfig& cfg) {
    auto [m, manifest] = load_embeddings(cfg.out_dir / kAdapterFile);
    if (manifest.role != Role::adapter) throw ConsistencyError("adapter file has role " + to_string(manifest.role));
    return Adapter::from_embedding_matrix(m);
}

ScoreSet read_scores(const RunConfig& cfg) {
    std::istringstream in(read_text_file(cfg.out_dir / kScoresFile));
    return read_scores_csv(in);
}

}  // namespace

// ---- config --------------------------------------------------------------

bool InputPaths::any() const {
    return !source_images.empty() || !target_images.empty() || !source_classnames.empty() || !noun_vocab.empty();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage) {
    // splitmix64 finalizer over seed and stage tag
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stage + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void RunConfig::propagate_seed() {
    synth.seed = derive_seed(seed, kSynthStage);
    search.seed = derive_seed(seed, kSearchStage);
    refine.seed = derive_seed(seed, kRefineStage);
}

void RunConfig::validate() const {
    prediction.validate();
    refine.validate();
    if (threads == 0) throw ConfigError("threads must be at least 1");
    if (use_synth) {
        synth.validate();
    } else {
        for (const auto* p : {&inputs.source_images, &inputs.target_images, &inputs.source_classnames,
                              &inputs.noun_vocab}) {
            if (p->empty()) throw ConfigError("all four [inputs] paths are required when not using synthetic data");
            if (!std::filesystem::exists(*p)) throw IoError("no such file: " + p->string());
        }
    }
}

RunConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        throw ConfigError(fmt::format("TOML parse error: {}", e.description()));
    }
    check_keys(root, "root",
               {"seed", "threads", "out", "inputs", "synth", "prediction", "search", "refine", "score",
                "threshold", "eval"});

    RunConfig cfg;
    read_u64(root, "seed", cfg.seed);
    read_size(root, "threads", cfg.threads);
    read_path(root, "out", cfg.out_dir, base_dir);

    if (const auto* t = section(root, "inputs")) {
        check_keys(*t, "inputs", {"source_images", "target_images", "source_classnames", "noun_vocab"});
        read_path(*t, "source_images", cfg.inputs.source_images, base_dir);
        read_path(*t, "target_images", cfg.inputs.target_images, base_dir);
        read_path(*t, "source_classnames", cfg.inputs.source_classnames, base_dir);
        read_path(*t, "noun_vocab", cfg.inputs.noun_vocab, base_dir);
    }
    if (const auto* t = section(root, "synth")) {
        check_keys(*t, "synth",
                   {"dims", "vocab_size", "n_common", "n_source_private", "n_target_private",
                    "source_samples_per_class", "target_samples_per_class", "cluster_spread", "shift_angle",
                    "shift_noise", "similarity_cap"});
        auto& s = cfg.synth;
        read_size(*t, "dims", s.dims);
        read_size(*t, "vocab_size", s.vocab_size);
        read_size(*t, "n_common", s.split.n_common);
        read_size(*t, "n_source_private", s.split.n_source_private);
        read_size(*t, "n_target_private", s.split.n_target_private);
        read_size(*t, "source_samples_per_class", s.source_samples_per_class);
        read_size(*t, "target_samples_per_class", s.target_samples_per_class);
        read_double(*t, "cluster_spread", s.cluster_spread);
        read_double(*t, "shift_angle", s.shift_angle);
        read_double(*t, "shift_noise", s.shift_noise);
        read_double(*t, "similarity_cap", s.similarity_cap);
    }
    if (const auto* t = section(root, "prediction")) {
        check_keys(*t, "prediction", {"tau", "lambda_div"});
        read_double(*t, "tau", cfg.prediction.tau);
        read_double(*t, "lambda_div", cfg.prediction.lambda_div);
    }
    if (const auto* t = section(root, "search")) {
        check_keys(*t, "search", {"k0", "n_candidates", "gamma_ent", "n_outer"});
        read_size(*t, "k0", cfg.search.k0);
        read_size(*t, "n_candidates", cfg.search.n_candidates);
        read_double(*t, "gamma_ent", cfg.search.gamma_ent);
        read_size(*t, "n_outer", cfg.search.n_outer);
    }
    if (const auto* t = section(root, "refine")) {
        check_keys(*t, "refine", {"enabled", "eta0", "epochs", "batch_size"});
        read_bool(*t, "enabled", cfg.refine_enabled);
        read_double(*t, "eta0", cfg.refine.eta0);
        read_size(*t, "epochs", cfg.refine.epochs);
        read_size(*t, "batch_size", cfg.refine.batch_size);
    }
    if (const auto* t = section(root, "score")) {
        check_keys(*t, "score", {"variant"});
        std::string v = to_string(cfg.variant);
        read_string(*t, "variant", v);
        cfg.variant = parse_variant(v);
    }
    if (const auto* t = section(root, "threshold")) {
        check_keys(*t, "threshold", {"method", "value"});
        std::string m = "gmm";
        read_string(*t, "method", m);
        if (m == "gmm")
            cfg.threshold_method = ThresholdMethod::gmm;
        else if (m == "fixed")
            cfg.threshold_method = ThresholdMethod::fixed;
        else
            throw ConfigError("threshold method must be 'gmm' or 'fixed'");
        read_double(*t, "value", cfg.fixed_threshold);
    }
    if (const auto* t = section(root, "eval")) {
        check_keys(*t, "eval", {"n_common", "n_source_private", "n_target_private"});
        ScenarioSplit s;
        read_size(*t, "n_common", s.n_common);
        read_size(*t, "n_source_private", s.n_source_private);
        read_size(*t, "n_target_private", s.n_target_private);
        cfg.split = s;
    }
    cfg.use_synth = !cfg.inputs.any();
    cfg.propagate_seed();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_text_file(path), path.parent_path());
}

std::string default_config_toml() {
    const RunConfig d;
    const auto& s = d.synth;
    return fmt::format(
        R"(# tasc run configuration
seed = {seed}
threads = {threads}
out = "{out}"

# Precomputed embeddings. When no path is given, inputs come from [synth].
[inputs]
# source_images = "source_images.embx"
# target_images = "target_images.embx"
# source_classnames = "source_classnames.embx"
# noun_vocab = "noun_vocab.embx"

[synth]
dims = {dims}
vocab_size = {vocab}
n_common = {nc}
n_source_private = {nsp}
n_target_private = {ntp}
source_samples_per_class = {ssp}
target_samples_per_class = {tsp}
cluster_spread = {spread}
shift_angle = {angle}
shift_noise = {noise}
similarity_cap = {cap}

[prediction]
tau = {tau}
lambda_div = {lam}

[search]
k0 = {k0}
n_candidates = {nc_cand}
gamma_ent = {gamma}
n_outer = {outer}

[refine]
enabled = {refine_on}
eta0 = {eta0}
epochs = {epochs}
batch_size = {batch}

[score]
variant = "{variant}"   # unims, ms-s, ms-t, ms-s-weighted, ms-t-weighted

[threshold]
method = "gmm"   # gmm or fixed
value = {fixed}  # used by the fixed method

# Class split for evaluation. Inferred from target labels when omitted.
# [eval]
# n_common = 10
# n_source_private = 5
# n_target_private = 15
)",
        fmt::arg("seed", d.seed), fmt::arg("threads", d.threads), fmt::arg("out", d.out_dir.string()),
        fmt::arg("dims", s.dims), fmt::arg("vocab", s.vocab_size), fmt::arg("nc", s.split.n_common),
        fmt::arg("nsp", s.split.n_source_private), fmt::arg("ntp", s.split.n_target_private),
        fmt::arg("ssp", s.source_samples_per_class), fmt::arg("tsp", s.target_samples_per_class),
        fmt::arg("spread", s.cluster_spread), fmt::arg("angle", s.shift_angle), fmt::arg("noise", s.shift_noise),
        fmt::arg("cap", s.similarity_cap), fmt::arg("tau", d.prediction.tau),
        fmt::arg("lam", d.prediction.lambda_div), fmt::arg("k0", d.search.k0),
        fmt::arg("nc_cand", d.search.n_candidates), fmt::arg("gamma", d.search.gamma_ent),
        fmt::arg("outer", d.search.n_outer), fmt::arg("refine_on", d.refine_enabled),
        fmt::arg("eta0", d.refine.eta0), fmt::arg("epochs", d.refine.epochs),
        fmt::arg("batch", d.refine.batch_size), fmt::arg("variant", to_string(d.variant)),
        fmt::arg("fixed", d.fixed_threshold));
}

// ---- inputs --------------------------------------------------------------

Inputs load_inputs(const InputPaths& paths) {
    Inputs in;
    auto load = [](const std::filesystem::path& p, Role expected, EmbeddingMatrix& m, Manifest& man) {
        auto [raw, manifest] = load_embeddings(p);
        if (manifest.role != expected)
            throw ConsistencyError(fmt::format("{}: expected role {}, found {}", p.string(), to_string(expected),
                                               to_string(manifest.role)));
        m = l2_normalize(raw);
        man = std::move(manifest);
    };
    load(paths.source_images, Role::source_images, in.source, in.source_manifest);
    load(paths.target_images, Role::target_images, in.target, in.target_manifest);
    load(paths.source_classnames, Role::source_classnames, in.classnames, in.classnames_manifest);
    load(paths.noun_vocab, Role::noun_vocab, in.nouns, in.nouns_manifest);
    validate_inputs(in);
    return in;
}

Inputs inputs_from_bundle(const SynthBundle& b) {
    Inputs in;
    in.source = l2_normalize(b.source_images);
    in.target = l2_normalize(b.target_images);
    in.classnames = l2_normalize(b.source_classnames);
    in.nouns = l2_normalize(b.noun_vocab);
    in.source_manifest = b.source_manifest;
    in.target_manifest = b.target_manifest;
    in.classnames_manifest = b.classnames_manifest;
    in.nouns_manifest = b.vocab_manifest;
    validate_inputs(in);
    return in;
}

Inputs acquire_inputs(const RunConfig& cfg) {
    if (cfg.use_synth) return inputs_from_bundle(generate(cfg.synth));
    return load_inputs(cfg.inputs);
}

void validate_inputs(const Inputs& in) {
    const std::size_t d = in.source.dims;
    if (in.target.dims != d || in.classnames.dims != d || in.nouns.dims != d)
        throw ShapeError(fmt::format("embedding dims disagree: source {}, target {}, class names {}, nouns {}", d,
                                     in.target.dims, in.classnames.dims, in.nouns.dims));
    if (in.source.rows == 0 || in.target.rows == 0 || in.classnames.rows == 0)
        throw DataError("source, target and class-name matrices must be non-empty");
    validate_source_labels(in.source_manifest, in.classnames.rows);
}

EmbeddingMatrix text_columns(const Inputs& in) { return stack_rows(in.classnames, in.nouns); }

std::vector<std::string> column_names(const Inputs& in) {
    std::vector<std::string> names = in.classnames_manifest.names;
    names.insert(names.end(), in.nouns_manifest.names.begin(), in.nouns_manifest.names.end());
    return names;
}

EmbeddingMatrix target_centers(const Inputs& in, const SearchState& state) {
    const auto cols = state.active_columns();
    EmbeddingMatrix out(cols.size(), in.classnames.dims);
    for (std::size_t r = 0; r < cols.size(); ++r) {
        const auto src = cols[r] < in.classnames.rows ? in.classnames.row(cols[r])
                                                      : in.nouns.row(cols[r] - in.classnames.rows);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    out.normalized = true;
    return out;
}

ScenarioSplit infer_split(const Inputs& in) {
    if (!in.target_manifest.labels) throw DataError("target manifest has no labels");
    const int n_src = static_cast<int>(in.classnames.rows);
    int max_common = -1;
    std::set<int> private_labels;
    for (int y : *in.target_manifest.labels) {
        if (y < n_src)
            max_common = std::max(max_common, y);
        else
            private_labels.insert(y);
    }
    ScenarioSplit s;
    s.n_common = static_cast<std::size_t>(max_common + 1);
    s.n_source_private = in.classnames.rows - s.n_common;
    s.n_target_private = private_labels.size();
    return s;
}

// ---- stages --------------------------------------------------------------

SearchResult stage_search(const Inputs& in, const RunConfig& cfg) {
    const auto texts = text_columns(in);
    const auto cache = build_similarity_cache(in.target, texts, in.classnames.rows);
    const SearchContext ctx{cache, in.target, texts};
    auto r = run_search(ctx, cfg.prediction, cfg.search);
    spdlog::info("search: K = {} ({} common, {} private), loss {}", r.counts.k, r.counts.k_common,
                 r.counts.k_private, r.loss_trace.empty() ? 0.0 : r.loss_trace.back());
    return r;
}

TrainResult stage_refine(const Inputs& in, const SearchState& state, const RunConfig& cfg) {
    if (!cfg.refine_enabled) return {Adapter::identity(in.source.dims), {}};
    const auto centers = target_centers(in, state);
    if (centers.rows == 0) throw DomainError("no retained target centers");
    auto r = train(Adapter::identity(in.source.dims), in.source, in.source_labels(), in.target,
                   RefineTargets{in.classnames, centers}, cfg.prediction, cfg.refine);
    if (!r.epoch_losses.empty())
        spdlog::info("refine: loss {} -> {}", r.epoch_losses.front(), r.epoch_losses.back());
    return r;
}

ScoreOutput stage_score(const Inputs& in, const SearchState& state, const Adapter& adapter, const RunConfig& cfg) {
    if (adapter.dims != in.target.dims) throw ShapeError("adapter dims do not match the embeddings");
    ScoreOutput out;
    const auto centers = target_centers(in, state);
    out.adapted = forward_all(adapter, in.target);
    out.entropies = entropy_vectors(in.classnames, centers, cfg.prediction.tau);
    out.scores = score(out.adapted, in.classnames, centers, out.entropies, cfg.variant);
    return out;
}

ThresholdOutput stage_threshold(const ScoreSet& scores, const ClassCountEstimate& counts, const RunConfig& cfg) {
    ThresholdOutput out;
    if (cfg.threshold_method == ThresholdMethod::fixed) {
        out.threshold = {cfg.fixed_threshold, ThresholdMode::fixed};
        return out;
    }
    const auto [pk, pu] = weights_from_counts(counts.k_common, counts.k_private);
    out.fit = fit_gmm(scores.scores, pk, pu);
    out.threshold = threshold_for(out.fit);
    spdlog::info("threshold: gamma = {} ({})", out.threshold.gamma, to_string(out.threshold.mode));
    return out;
}

std::vector<int> predict_classes(const EmbeddingMatrix& adapted, const EmbeddingMatrix& source_centers) {
    if (source_centers.rows == 0) throw DomainError("no source centers");
    std::vector<int> preds(adapted.rows);
    for (std::size_t n = 0; n < adapted.rows; ++n) {
        int best = 0;
        double best_sim = dot(adapted.row(n), source_centers.row(0));
        for (std::size_t i = 1; i < source_centers.rows; ++i) {
            const double s = dot(adapted.row(n), source_centers.row(i));
            if (s > best_sim) {
                best_sim = s;
                best = static_cast<int>(i);
            }
        }
        preds[n] = best;
    }
    return preds;
}

EvalReport stage_eval(const Inputs& in, const EmbeddingMatrix& adapted, const ScoreSet& scores,
                      const Threshold& threshold, const RunConfig& cfg) {
    if (!in.target_manifest.labels) throw DataError("target manifest has no labels");
    const auto split = cfg.split ? *cfg.split : infer_split(in);
    if (split.n_source_classes() != in.classnames.rows)
        throw ConfigError(fmt::format("split has {} source classes but there are {} class names",
                                      split.n_source_classes(), in.classnames.rows));
    const auto preds = predict_classes(adapted, in.classnames);
    const auto known = predict_known(scores.scores, threshold);
    return evaluate(preds, *in.target_manifest.labels, known, scores.scores, adapted, split,
                    derive_seed(cfg.seed, kEvalStage));
}

PipelineResult run_pipeline_in_memory(const Inputs& in, const RunConfig& cfg) {
    PipelineResult r;
    r.search = tagged("search", [&] { return stage_search(in, cfg); });
    r.refine = tagged("refine", [&] { return stage_refine(in, r.search.state, cfg); });
    r.score = tagged("score", [&] { return stage_score(in, r.search.state, r.refine.adapter, cfg); });
    r.threshold = tagged("threshold", [&] { return stage_threshold(r.score.scores, r.search.counts, cfg); });
    if (in.has_target_labels()) {
        r.eval = tagged("eval", [&] {
            return stage_eval(in, r.score.adapted, r.score.scores, r.threshold.threshold, cfg);
        });
    } else {
        spdlog::warn("eval: target manifest has no labels, skipping evaluation");
    }
    return r;
}

PipelineResult run_pipeline(const RunConfig& cfg) {
    tagged("config", [&] { cfg.validate(); });
    set_num_threads(cfg.threads);
    const auto in = tagged("inputs", [&] { return acquire_inputs(cfg); });
    auto r = run_pipeline_in_memory(in, cfg);
    tagged("output", [&] {
        ensure_dir(cfg.out_dir);
        write_search_outputs(cfg, in, r.search);
        write_refine_outputs(cfg, r.refine);
        write_scores(cfg, r.score.scores);
        write_threshold_outputs(cfg, r.threshold);
        write_eval_outputs(cfg, in, r.score.adapted, r.score.scores, r.threshold.threshold, r.eval);
        write_text_file(cfg.out_dir / kPlotDataFile, plot_data_csv(r));
    });
    return r;
}

// ---- single-stage commands -----------------------------------------------

namespace {
Inputs command_inputs(const RunConfig& cfg) {
    tagged("config", [&] { cfg.validate(); });
    set_num_threads(cfg.threads);
    auto in = tagged("inputs", [&] { return acquire_inputs(cfg); });
    tagged("output", [&] { ensure_dir(cfg.out_dir); });
    return in;
}
}  // namespace

void run_search_command(const RunConfig& cfg) {
    const auto in = command_inputs(cfg);
    const auto r = tagged("search", [&] { return stage_search(in, cfg); });
    tagged("output", [&] { write_search_outputs(cfg, in, r); });
}

void run_refine_command(const RunConfig& cfg) {
    const auto in = command_inputs(cfg);
    const auto r = tagged("refine", [&] { return stage_refine(in, read_search(cfg).state, cfg); });
    tagged("output", [&] { write_refine_outputs(cfg, r); });
}

void run_score_command(const RunConfig& cfg) {
    const auto in = command_inputs(cfg);
    const auto r = tagged("score", [&] { return stage_score(in, read_search(cfg).state, read_adapter(cfg), cfg); });
    tagged("output", [&] { write_scores(cfg, r.scores); });
}

void run_threshold_command(const RunConfig& cfg) {
    tagged("config", [&] { cfg.validate(); });
    const auto r = tagged("threshold", [&] { return stage_threshold(read_scores(cfg), read_search(cfg).counts, cfg); });
    tagged("output", [&] { write_threshold_outputs(cfg, r); });
}

EvalReport run_eval_command(const RunConfig& cfg) {
    const auto in = command_inputs(cfg);
    const auto adapted = tagged("eval", [&] { return forward_all(read_adapter(cfg), in.target); });
    const auto scores = tagged("eval", [&] { return read_scores(cfg); });
    const auto threshold = tagged("eval", [&] { return threshold_from_report(read_json(cfg.out_dir / kFitReportFile)); });
    const auto report = tagged("eval", [&] { return stage_eval(in, adapted, scores, threshold, cfg); });
    tagged("output", [&] { write_eval_outputs(cfg, in, adapted, scores, threshold, report); });
    return report;
}

void run_synth_command(const RunConfig& cfg) {
    tagged("config", [&] { cfg.synth.validate(); });
    const auto bundle = tagged("synth", [&] { return generate(cfg.synth); });
    tagged("output", [&] { save_bundle(cfg.out_dir, bundle); });
}

std::vector<FileCheck> validate_files(const std::vector<std::filesystem::path>& paths) {
    std::vector<FileCheck> out;
    for (const auto& p : paths) {
        FileCheck c{p, false, {}};
        try {
            const auto [m, manifest] = load_embeddings(p);
            c.ok = true;
            c.message = fmt::format("{} rows x {} dims, role {}", m.rows, m.dims, to_string(manifest.role));
        } catch (const std::exception& e) {
            c.message = e.what();
        }
        out.push_back(std::move(c));
    }
    return out;
}

// ---- reports -------------------------------------------------------------

std::string plot_data_csv(const PipelineResult& r, std::size_t bins) {
    std::string out = "series,x,y\n";
    for (std::size_t i = 0; i < r.search.loss_trace.size(); ++i)
        out += fmt::format("search_loss,{},{}\n", i + 1, r.search.loss_trace[i]);
    for (std::size_t i = 0; i < r.search.k_trace.size(); ++i)
        out += fmt::format("search_k,{},{}\n", i + 1, r.search.k_trace[i]);
    for (std::size_t i = 0; i < r.refine.epoch_losses.size(); ++i)
        out += fmt::format("refine_loss,{},{}\n", i + 1, r.refine.epoch_losses[i]);

    const auto& s = r.score.scores.scores;
    if (!s.empty() && bins > 0) {
        const auto [lo_it, hi_it] = std::minmax_element(s.begin(), s.end());
        const double lo = *lo_it, hi = *hi_it;
        const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
        const std::size_t nb = hi > lo ? bins : 1;
        std::vector<std::size_t> counts(nb, 0);
        for (double v : s) {
            auto b = static_cast<std::size_t>((v - lo) / width);
            ++counts[std::min(b, nb - 1)];
        }
        for (std::size_t b = 0; b < nb; ++b)
            out += fmt::format("score_hist,{},{}\n", lo + (static_cast<double>(b) + 0.5) * width, counts[b]);
    }
    return out;
}

nlohmann::json refine_report(const TrainResult& r, const RunConfig& cfg) {
    nlohmann::json j;
    j["enabled"] = cfg.refine_enabled;
    j["epoch_losses"] = r.epoch_losses;
    j["config"] = {{"eta0", cfg.refine.eta0},
                   {"epochs", cfg.refine.epochs},
                   {"batch_size", cfg.refine.batch_size},
                   {"seed", cfg.refine.seed}};
    return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace tasc
