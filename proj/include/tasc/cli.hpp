#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tasc/core_math.hpp"
#include "tasc/embedding_store.hpp"
#include "tasc/error.hpp"
#include "tasc/eval.hpp"
#include "tasc/gmm_threshold.hpp"
#include "tasc/refine.hpp"
#include "tasc/synth.hpp"
#include "tasc/tasc_search.hpp"
#include "tasc/unims.hpp"

namespace tasc {

/// Error raised by a pipeline stage; what() is prefixed with the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error(stage + ": " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct InputPaths {
    std::filesystem::path source_images;
    std::filesystem::path target_images;
    std::filesystem::path source_classnames;
    std::filesystem::path noun_vocab;

    bool any() const;
};

enum class ThresholdMethod { gmm, fixed };

struct RunConfig {
    bool use_synth = false;  // generate inputs from `synth` instead of reading `inputs`
    SynthConfig synth;
    InputPaths inputs;
    PredictionConfig prediction;
    SearchConfig search;
    TrainConfig refine;
    bool refine_enabled = true;
    ScoreVariant variant = ScoreVariant::unims;
    ThresholdMethod threshold_method = ThresholdMethod::gmm;
    double fixed_threshold = 0.0;
    std::optional<ScenarioSplit> split;  // inferred from labels when absent
    std::filesystem::path out_dir = "tasc_out";
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    /// Pushes the global seed into every stage config.
    void propagate_seed();
    void validate() const;
};

/// Stage sub-seed derived from the global seed and a stage tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage);

RunConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
std::string default_config_toml();

/// Normalized inputs plus their manifests.
struct Inputs {
    EmbeddingMatrix source;
    EmbeddingMatrix target;
    EmbeddingMatrix classnames;
    EmbeddingMatrix nouns;
    Manifest source_manifest;
    Manifest target_manifest;
    Manifest classnames_manifest;
    Manifest nouns_manifest;

    std::span<const int> source_labels() const { return *source_manifest.labels; }
    bool has_target_labels() const { return target_manifest.labels.has_value(); }
};

Inputs load_inputs(const InputPaths& paths);
Inputs inputs_from_bundle(const SynthBundle& bundle);
Inputs acquire_inputs(const RunConfig& cfg);

/// Cross-file checks: shared dims, source labels within the class-name count.
void validate_inputs(const Inputs& in);

/// Source class names followed by the noun vocabulary, in cache column order.
EmbeddingMatrix text_columns(const Inputs& in);
std::vector<std::string> column_names(const Inputs& in);

/// Rows of the text columns that are retained in `state`.
EmbeddingMatrix target_centers(const Inputs& in, const SearchState& state);

ScenarioSplit infer_split(const Inputs& in);

SearchResult stage_search(const Inputs& in, const RunConfig& cfg);
TrainResult stage_refine(const Inputs& in, const SearchState& state, const RunConfig& cfg);

struct ScoreOutput {
    EmbeddingMatrix adapted;  // adapted, normalized targets
    EntropyVectors entropies;
    ScoreSet scores;
};

ScoreOutput stage_score(const Inputs& in, const SearchState& state, const Adapter& adapter,
                        const RunConfig& cfg);

struct ThresholdOutput {
    GmmFit fit;
    Threshold threshold;
};

ThresholdOutput stage_threshold(const ScoreSet& scores, const ClassCountEstimate& counts, const RunConfig& cfg);

/// Closed-set prediction: nearest source class center of each adapted target.
std::vector<int> predict_classes(const EmbeddingMatrix& adapted, const EmbeddingMatrix& source_centers);

EvalReport stage_eval(const Inputs& in, const EmbeddingMatrix& adapted, const ScoreSet& scores,
                      const Threshold& threshold, const RunConfig& cfg);

/// Everything a full run produces, kept in memory.
struct PipelineResult {
    SearchResult search;
    TrainResult refine;
    ScoreOutput score;
    ThresholdOutput threshold;
    std::optional<EvalReport> eval;
};

PipelineResult run_pipeline_in_memory(const Inputs& in, const RunConfig& cfg);

/// Runs all stages and writes every report into cfg.out_dir.
PipelineResult run_pipeline(const RunConfig& cfg);

// Report file names inside the output directory.
inline constexpr const char* kSearchReportFile = "search_report.json";
inline constexpr const char* kAdapterFile = "adapter.embx";
inline constexpr const char* kRefineReportFile = "refine_report.json";
inline constexpr const char* kScoresFile = "scores.csv";
inline constexpr const char* kFitReportFile = "fit_report.json";
inline constexpr const char* kPredictionsFile = "predictions.csv";
inline constexpr const char* kEvalJsonFile = "eval_report.json";
inline constexpr const char* kEvalCsvFile = "eval_report.csv";
inline constexpr const char* kPlotDataFile = "plot_data.csv";

// Single-stage entry points that read earlier outputs from cfg.out_dir.
void run_search_command(const RunConfig& cfg);
void run_refine_command(const RunConfig& cfg);
void run_score_command(const RunConfig& cfg);
void run_threshold_command(const RunConfig& cfg);
EvalReport run_eval_command(const RunConfig& cfg);
void run_synth_command(const RunConfig& cfg);

struct FileCheck {
    std::filesystem::path path;
    bool ok = false;
    std::string message;
};

/// Loads each EMBX file with its sidecar and reports whether it is well formed.
std::vector<FileCheck> validate_files(const std::vector<std::filesystem::path>& paths);

/// `series,x,y` rows: search loss and K per outer iteration, refine loss per
/// epoch and a score histogram.
std::string plot_data_csv(const PipelineResult& result, std::size_t histogram_bins = 40);

nlohmann::json refine_report(const TrainResult& result, const RunConfig& cfg);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace tasc
