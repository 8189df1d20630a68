#include "tasc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "tasc/error.hpp"

namespace tasc {

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::opda: return "OPDA";
        case Scenario::oda: return "ODA";
        case Scenario::pda: return "PDA";
        case Scenario::cda: return "CDA";
    }
    return "unknown";
}

Scenario ScenarioSplit::scenario() const {
    if (n_source_private > 0 && n_target_private > 0) return Scenario::opda;
    if (n_target_private > 0) return Scenario::oda;
    if (n_source_private > 0) return Scenario::pda;
    return Scenario::cda;
}

double h_score(double a_common, double a_private) {
    if (a_common <= 0.0 || a_private <= 0.0) return 0.0;
    return 2.0 / (1.0 / a_common + 1.0 / a_private);
}

double h3_score(double a_common, double a_private, double nmi) {
    if (a_common <= 0.0 || a_private <= 0.0 || nmi <= 0.0) return 0.0;
    return 3.0 / (1.0 / a_common + 1.0 / a_private + 1.0 / nmi);
}

namespace {

void check_aligned(std::size_t a, std::size_t b, std::size_t c) {
    if (a != b || a != c) throw ShapeError("predictions, labels and mask must align");
}

bool is_target_private(int label, const ScenarioSplit& split) {
    return label >= static_cast<int>(split.n_source_classes());
}

}  // namespace

ClassAccuracies per_class_accuracy(std::span<const int> preds, std::span<const int> gt,
                                   std::span<const std::uint8_t> known_mask, const ScenarioSplit& split) {
    check_aligned(preds.size(), gt.size(), known_mask.size());
    const std::size_t nc = split.n_common;
    std::vector<std::size_t> total(nc, 0), hit(nc, 0), hit_no_unk(nc, 0);
    std::size_t priv_total = 0, priv_hit = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const int y = gt[i];
        if (y < 0) throw DomainError("negative ground-truth label");
        if (is_target_private(y, split)) {
            ++priv_total;
            if (!known_mask[i]) ++priv_hit;
            continue;
        }
        if (static_cast<std::size_t>(y) >= nc) continue;
        ++total[y];
        if (preds[i] == y) {
            ++hit_no_unk[y];
            if (known_mask[i]) ++hit[y];
        }
    }

    ClassAccuracies out;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < nc; ++c) {
        if (total[c] == 0) {
            out.excluded_classes.push_back(static_cast<int>(c));
            continue;
        }
        ++counted;
        out.a_common += 100.0 * static_cast<double>(hit[c]) / static_cast<double>(total[c]);
        out.a_common_no_unk += 100.0 * static_cast<double>(hit_no_unk[c]) / static_cast<double>(total[c]);
    }
    if (counted > 0) {
        out.a_common /= static_cast<double>(counted);
        out.a_common_no_unk /= static_cast<double>(counted);
    }
    if (priv_total > 0) out.a_private = 100.0 * static_cast<double>(priv_hit) / static_cast<double>(priv_total);
    return out;
}

double overall_accuracy(std::span<const int> preds, std::span<const int> gt,
                        std::span<const std::uint8_t> known_mask, const ScenarioSplit& split) {
    check_aligned(preds.size(), gt.size(), known_mask.size());
    if (gt.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (is_target_private(gt[i], split))
            hit += known_mask[i] ? 0 : 1;
        else
            hit += (known_mask[i] && preds[i] == gt[i]) ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hit) / static_cast<double>(gt.size());
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> is_known) {
    if (scores.size() != is_known.size()) throw ShapeError("auroc: scores and labels must align");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the sum of 1-based mid-ranks of the known samples, kept integral
    // so the statistic is exact.
    std::uint64_t rank_sum2 = 0;
    std::uint64_t n_known = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const std::uint64_t mid_rank2 = i + 1 + j;
        for (std::size_t k = i; k < j; ++k)
            if (is_known[order[k]]) {
                rank_sum2 += mid_rank2;
                ++n_known;
            }
        i = j;
    }
    const std::uint64_t n_unknown = scores.size() - n_known;
    if (n_known == 0 || n_unknown == 0) throw DomainError("auroc needs both known and unknown samples");
    // Twice the Mann-Whitney U: wins count 2, ties 1.
    const std::uint64_t u2 = rank_sum2 - n_known * (n_known + 1);
    return auroc_from_counts(u2, n_known * n_unknown);
}

double normalized_mutual_information(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("nmi: labelings must align and be non-empty");
    std::map<int, double> ca, cb;
    std::map<std::pair<int, int>, double> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1.0;
        cb[b[i]] += 1.0;
        joint[{a[i], b[i]}] += 1.0;
    }
    const double n = static_cast<double>(a.size());
    auto ent = [n](const std::map<int, double>& counts) {
        double h = 0.0;
        for (const auto& [_, c] : counts) h -= (c / n) * std::log(c / n);
        return h;
    };
    const double ha = ent(ca), hb = ent(cb);
    double mi = 0.0;
    for (const auto& [key, c] : joint) mi += (c / n) * std::log(c * n / (ca[key.first] * cb[key.second]));
    const double denom = 0.5 * (ha + hb);
    if (denom <= 0.0) return 100.0;
    return std::clamp(100.0 * mi / denom, 0.0, 100.0);
}

KMeansResult kmeans(const EmbeddingMatrix& points, std::size_t k, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iterations) {
    const std::size_t n = points.rows, d = points.dims;
    if (k == 0 || k > n) throw DomainError("kmeans: k must lie in [1, n]");
    std::mt19937_64 rng(seed);

    auto dist2 = [&](std::size_t i, const std::vector<double>& c, std::size_t j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = points.at(i, t) - c[j * d + t];
            s += diff * diff;
        }
        return s;
    };

    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t run = 0; run < std::max<std::size_t>(1, restarts); ++run) {
        std::vector<double> centers(k * d);
        auto set_center = [&](std::size_t j, std::size_t i) {
            for (std::size_t t = 0; t < d; ++t) centers[j * d + t] = points.at(i, t);
        };
        set_center(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
        std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
        for (std::size_t j = 1; j < k; ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nearest[i] = std::min(nearest[i], dist2(i, centers, j - 1));
                total += nearest[i];
            }
            std::size_t pick = 0;
            if (total > 0.0) {
                double u = std::uniform_real_distribution<double>(0.0, total)(rng);
                for (pick = 0; pick + 1 < n; ++pick) {
                    u -= nearest[pick];
                    if (u < 0.0) break;
                }
            } else {
                pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            }
            set_center(j, pick);
        }

        std::vector<int> assign(n, -1);
        double inertia = 0.0;
        for (std::size_t it = 0; it < max_iterations; ++it) {
            bool changed = false;
            inertia = 0.0;
            std::vector<double> best_d(n);
            for (std::size_t i = 0; i < n; ++i) {
                int arg = 0;
                double bd = dist2(i, centers, 0);
                for (std::size_t j = 1; j < k; ++j) {
                    const double dj = dist2(i, centers, j);
                    if (dj < bd) {
                        bd = dj;
                        arg = static_cast<int>(j);
                    }
                }
                best_d[i] = bd;
                inertia += bd;
                if (assign[i] != arg) {
                    assign[i] = arg;
                    changed = true;
                }
            }
            if (!changed) break;
            std::vector<double> sums(k * d, 0.0);
            std::vector<std::size_t> counts(k, 0);
            for (std::size_t i = 0; i < n; ++i) {
                ++counts[assign[i]];
                for (std::size_t t = 0; t < d; ++t) sums[assign[i] * d + t] += points.at(i, t);
            }
            for (std::size_t j = 0; j < k; ++j) {
                if (counts[j] == 0) {
                    // Empty cluster: restart it at the worst-fit point.
                    const auto far = static_cast<std::size_t>(
                        std::max_element(best_d.begin(), best_d.end()) - best_d.begin());
                    set_center(j, far);
                    best_d[far] = 0.0;
                    continue;
                }
                for (std::size_t t = 0; t < d; ++t)
                    centers[j * d + t] = sums[j * d + t] / static_cast<double>(counts[j]);
            }
        }
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.assignment = assign;
        }
    }
    return best;
}

std::optional<double> nmi_private(const EmbeddingMatrix& embeddings, std::span<const int> labels,
                                  std::uint64_t seed) {
    if (embeddings.rows != labels.size()) throw ShapeError("nmi_private: embeddings and labels must align");
    std::vector<int> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) return std::nullopt;
    const auto clusters = kmeans(embeddings, distinct.size(), seed);
    return normalized_mutual_information(clusters.assignment, labels);
}

EvalReport evaluate(std::span<const int> preds, std::span<const int> gt, std::span<const std::uint8_t> known_mask,
                    std::span<const double> scores, const EmbeddingMatrix& embeddings,
                    const ScenarioSplit& split, std::uint64_t seed) {
    check_aligned(preds.size(), gt.size(), known_mask.size());
    if (scores.size() != gt.size() || embeddings.rows != gt.size())
        throw ShapeError("evaluate: scores/embeddings must align with labels");
    EvalReport r;
    r.scenario = split.scenario();
    r.n_samples = gt.size();
    const auto acc = per_class_accuracy(preds, gt, known_mask, split);
    r.a_common = acc.a_common;
    r.a_common_no_unk = acc.a_common_no_unk;
    r.a_private = acc.a_private;
    r.excluded_classes = acc.excluded_classes;
    r.overall_acc = overall_accuracy(preds, gt, known_mask, split);

    std::vector<std::size_t> priv_rows;
    std::vector<int> priv_labels;
    std::vector<std::uint8_t> is_known(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool priv = gt[i] >= static_cast<int>(split.n_source_classes());
        is_known[i] = priv ? 0 : 1;
        if (priv) {
            priv_rows.push_back(i);
            priv_labels.push_back(gt[i]);
        }
    }
    if (r.a_private) {
        r.h_score = h_score(r.a_common, *r.a_private);
        if (!priv_rows.empty() && priv_rows.size() < gt.size()) r.auroc = auroc(scores, is_known);
        r.nmi = nmi_private(gather_rows(embeddings, priv_rows), priv_labels, seed);
        if (r.nmi) r.h3_score = h3_score(r.a_common, *r.a_private, *r.nmi);
    }
    return r;
}

namespace {
nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::string csv_opt(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string{}; }
}  // namespace

nlohmann::json eval_report_json(const EvalReport& r) {
    nlohmann::json j;
    j["scenario"] = to_string(r.scenario);
    j["n_samples"] = r.n_samples;
    j["a_common"] = r.a_common;
    j["a_common_no_unk"] = r.a_common_no_unk;
    j["a_private"] = opt(r.a_private);
    j["h_score"] = opt(r.h_score);
    j["h3_score"] = opt(r.h3_score);
    j["auroc"] = opt(r.auroc);
    j["nmi"] = opt(r.nmi);
    j["overall_acc"] = r.overall_acc;
    j["excluded_classes"] = r.excluded_classes;
    return j;
}

std::string eval_report_csv(const EvalReport& r) {
    return fmt::format(
        "scenario,n_samples,a_common,a_common_no_unk,a_private,h_score,h3_score,auroc,nmi,overall_acc\n"
        "{},{},{},{},{},{},{},{},{},{}\n",
        to_string(r.scenario), r.n_samples, r.a_common, r.a_common_no_unk, csv_opt(r.a_private),
        csv_opt(r.h_score), csv_opt(r.h3_score), csv_opt(r.auroc), csv_opt(r.nmi), r.overall_acc);
}

}  // namespace tasc
