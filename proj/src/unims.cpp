#include "tasc/unims.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "tasc/core_math.hpp"
#include "tasc/error.hpp"
#include "tasc/parallel.hpp"

namespace tasc {

std::string to_string(ScoreVariant v) {
    switch (v) {
        case ScoreVariant::unims: return "unims";
        case ScoreVariant::ms_s: return "ms-s";
        case ScoreVariant::ms_t: return "ms-t";
        case ScoreVariant::ms_s_weighted: return "ms-s-weighted";
        case ScoreVariant::ms_t_weighted: return "ms-t-weighted";
    }
    return "unknown";
}

ScoreVariant parse_variant(const std::string& text) {
    for (auto v : {ScoreVariant::unims, ScoreVariant::ms_s, ScoreVariant::ms_t, ScoreVariant::ms_s_weighted,
                   ScoreVariant::ms_t_weighted})
        if (text == to_string(v)) return v;
    throw ConfigError("unknown score variant '" + text + "'");
}

EntropyVectors entropy_vectors(const EmbeddingMatrix& source_centers, const EmbeddingMatrix& target_centers,
                               double tau) {
    if (source_centers.rows == 0 || target_centers.rows == 0)
        throw DomainError("entropy_vectors: empty center set");
    if (source_centers.dims != target_centers.dims) throw ShapeError("entropy_vectors: dims mismatch");
    const PredictionConfig cfg{tau, 0.0};
    EntropyVectors ev;
    ev.source.reserve(source_centers.rows);
    for (std::size_t i = 0; i < source_centers.rows; ++i)
        ev.source.push_back(normalized_entropy(predict(source_centers.row(i), target_centers, cfg)));
    ev.target.reserve(target_centers.rows);
    for (std::size_t j = 0; j < target_centers.rows; ++j)
        ev.target.push_back(normalized_entropy(predict(target_centers.row(j), source_centers, cfg)));
    return ev;
}

ScoreSet score(const EmbeddingMatrix& targets, const EmbeddingMatrix& source_centers,
               const EmbeddingMatrix& target_centers, const EntropyVectors& ev, ScoreVariant variant) {
    if (targets.dims != source_centers.dims || targets.dims != target_centers.dims)
        throw ShapeError("score: dims mismatch");
    if (ev.source.size() != source_centers.rows || ev.target.size() != target_centers.rows)
        throw ShapeError("score: entropy vectors do not match center counts");
    if (source_centers.rows == 0 || target_centers.rows == 0) throw DomainError("score: empty center set");

    ScoreSet out;
    out.variant = variant;
    out.scores.resize(targets.rows);
    parallel_for(targets.rows, 64, [&](std::size_t begin, std::size_t end) {
        for (std::size_t n = begin; n < end; ++n) {
            const auto z = targets.row(n);
            double ms_s = -std::numeric_limits<double>::infinity();
            double ms_s_w = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < source_centers.rows; ++i) {
                const double s = dot(z, source_centers.row(i));
                ms_s = std::max(ms_s, s);
                ms_s_w = std::max(ms_s_w, (1.0 - ev.source[i]) * s);
            }
            double max_t = -std::numeric_limits<double>::infinity();
            double max_t_w = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < target_centers.rows; ++j) {
                const double s = dot(z, target_centers.row(j));
                max_t = std::max(max_t, s);
                max_t_w = std::max(max_t_w, ev.target[j] * s);
            }
            const double ms_t = -max_t;
            const double ms_t_w = -max_t_w;
            double value = 0.0;
            switch (variant) {
                case ScoreVariant::unims: value = ms_s_w + ms_t_w; break;
                case ScoreVariant::ms_s: value = ms_s; break;
                case ScoreVariant::ms_t: value = ms_t; break;
                case ScoreVariant::ms_s_weighted: value = ms_s_w; break;
                case ScoreVariant::ms_t_weighted: value = ms_t_w; break;
            }
            out.scores[n] = value;
        }
    });
    for (double s : out.scores)
        if (!std::isfinite(s)) throw NumericError("score: non-finite score");
    return out;
}

void write_scores_csv(std::ostream& out, const ScoreSet& set) {
    out << "sample_index,score,variant\n";
    const auto name = to_string(set.variant);
    for (std::size_t i = 0; i < set.scores.size(); ++i) out << fmt::format("{},{},{}\n", i, set.scores[i], name);
}

ScoreSet read_scores_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "sample_index,score,variant")
        throw FormatError("scores CSV: missing header");
    ScoreSet set;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) throw FormatError("scores CSV: malformed row");
        std::size_t index = 0;
        double value = 0.0;
        const char* b = line.data();
        if (std::from_chars(b, b + c1, index).ec != std::errc{} ||
            std::from_chars(b + c1 + 1, b + c2, value).ec != std::errc{})
            throw FormatError("scores CSV: unparsable row '" + line + "'");
        if (index != set.scores.size()) throw FormatError("scores CSV: sample indices out of order");
        const auto variant = parse_variant(line.substr(c2 + 1));
        if (first) {
            set.variant = variant;
            first = false;
        } else if (variant != set.variant) {
            throw FormatError("scores CSV: mixed variants");
        }
        set.scores.push_back(value);
    }
    return set;
}

}  // namespace tasc
