#include "tasc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "tasc/error.hpp"

namespace tasc {

namespace {

constexpr std::size_t kMaxRejections = 10000;

std::vector<double> random_unit(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(d);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (auto& x : v) {
            x = g(rng);
            n2 += x * x;
        }
    } while (n2 < 1e-24);
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
    return v;
}

void normalize_in_place(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (n2 < 1e-24) throw DegenerateError("synth: perturbed embedding collapsed to zero");
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
}

// Orthonormal pair spanning a random 2-plane.
std::pair<std::vector<double>, std::vector<double>> random_plane(std::size_t d, std::mt19937_64& rng) {
    auto u = random_unit(d, rng);
    for (;;) {
        auto v = random_unit(d, rng);
        double p = 0.0;
        for (std::size_t k = 0; k < d; ++k) p += u[k] * v[k];
        for (std::size_t k = 0; k < d; ++k) v[k] -= p * u[k];
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 < 1e-12) continue;
        for (auto& x : v) x /= std::sqrt(n2);
        return {u, std::move(v)};
    }
}

void rotate_in_plane(std::vector<double>& x, const std::vector<double>& u, const std::vector<double>& v,
                     double angle) {
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        a += x[k] * u[k];
        b += x[k] * v[k];
    }
    const double c = std::cos(angle), s = std::sin(angle);
    const double a2 = c * a - s * b, b2 = s * a + c * b;
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += (a2 - a) * u[k] + (b2 - b) * v[k];
}

void add_noise(std::vector<double>& x, double scale, std::mt19937_64& rng) {
    if (scale <= 0.0) return;
    std::normal_distribution<double> g(0.0, scale / std::sqrt(static_cast<double>(x.size())));
    for (auto& v : x) v += g(rng);
}

void store_row(EmbeddingMatrix& m, std::size_t i, const std::vector<double>& v) {
    for (std::size_t k = 0; k < v.size(); ++k) m.at(i, k) = static_cast<float>(v[k]);
}

std::vector<double> load_row(const EmbeddingMatrix& m, std::size_t i) {
    const auto r = m.row(i);
    return {r.begin(), r.end()};
}

}  // namespace

void SynthConfig::validate() const {
    if (dims < 2) throw ConfigError("synth: dims must be at least 2");
    const std::size_t classes = split.n_common + split.n_source_private + split.n_target_private;
    if (classes > vocab_size) throw ConfigError("synth: more classes than vocabulary entries");
    if (split.n_source_classes() == 0) throw ConfigError("synth: no source classes");
    if (split.n_common + split.n_target_private == 0) throw ConfigError("synth: no target classes");
    if (source_samples_per_class == 0 || target_samples_per_class == 0)
        throw ConfigError("synth: samples per class must be positive");
    if (!(cluster_spread >= 0.0) || !(shift_noise >= 0.0)) throw ConfigError("synth: spread and noise must be >= 0");
    if (!std::isfinite(shift_angle)) throw ConfigError("synth: shift angle must be finite");
    if (!(similarity_cap > -1.0 && similarity_cap <= 1.0)) throw ConfigError("synth: similarity cap out of range");
}

SynthBundle generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.dims;
    const auto& split = cfg.split;

    SynthBundle b;
    b.noun_vocab = EmbeddingMatrix(cfg.vocab_size, d);
    b.vocab_manifest.role = Role::noun_vocab;
    for (std::size_t i = 0; i < cfg.vocab_size; ++i) {
        std::size_t tries = 0;
        for (;;) {
            if (++tries > kMaxRejections)
                throw DomainError(fmt::format("synth: cannot place vocabulary entry {} under similarity cap {}", i,
                                              cfg.similarity_cap));
            auto v = random_unit(d, rng);
            bool ok = true;
            for (std::size_t j = 0; j < i && ok; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += v[k] * b.noun_vocab.at(j, k);
                ok = s <= cfg.similarity_cap;
            }
            if (!ok) continue;
            store_row(b.noun_vocab, i, v);
            break;
        }
        b.vocab_manifest.names.push_back(fmt::format("noun_{:04}", i));
    }
    b.noun_vocab.normalized = true;
    b.vocab_manifest.count = cfg.vocab_size;

    const std::size_t n_classes = split.n_common + split.n_source_private + split.n_target_private;
    std::vector<std::size_t> perm(cfg.vocab_size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    b.anchors.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_classes));

    const std::size_t n_src = split.n_source_classes();
    b.source_classnames = EmbeddingMatrix(n_src, d);
    b.classnames_manifest.role = Role::source_classnames;
    for (std::size_t c = 0; c < n_src; ++c) {
        std::copy_n(b.noun_vocab.row(b.anchors[c]).begin(), d, b.source_classnames.row(c).begin());
        b.classnames_manifest.names.push_back(b.vocab_manifest.names[b.anchors[c]]);
    }
    b.source_classnames.normalized = true;
    b.classnames_manifest.count = n_src;

    const bool exact = cfg.cluster_spread == 0.0 && cfg.shift_angle == 0.0 && cfg.shift_noise == 0.0;

    std::vector<int> src_labels;
    b.source_images = EmbeddingMatrix(n_src * cfg.source_samples_per_class, d);
    std::size_t row = 0;
    for (std::size_t c = 0; c < n_src; ++c) {
        for (std::size_t s = 0; s < cfg.source_samples_per_class; ++s, ++row) {
            auto x = load_row(b.noun_vocab, b.anchors[c]);
            add_noise(x, cfg.cluster_spread, rng);
            if (!exact) normalize_in_place(x);
            store_row(b.source_images, row, x);
            src_labels.push_back(static_cast<int>(c));
        }
    }
    b.source_images.normalized = true;
    b.source_manifest.role = Role::source_images;
    b.source_manifest.labels = src_labels;
    b.source_manifest.count = b.source_images.rows;

    std::vector<int> target_classes;
    for (std::size_t c = 0; c < split.n_common; ++c) target_classes.push_back(static_cast<int>(c));
    for (std::size_t c = n_src; c < n_classes; ++c) target_classes.push_back(static_cast<int>(c));
    const auto [u, v] = random_plane(d, rng);
    b.target_images = EmbeddingMatrix(target_classes.size() * cfg.target_samples_per_class, d);
    row = 0;
    for (int c : target_classes) {
        for (std::size_t s = 0; s < cfg.target_samples_per_class; ++s, ++row) {
            auto x = load_row(b.noun_vocab, b.anchors[static_cast<std::size_t>(c)]);
            add_noise(x, cfg.cluster_spread, rng);
            if (!exact) {
                normalize_in_place(x);
                rotate_in_plane(x, u, v, cfg.shift_angle);
                add_noise(x, cfg.shift_noise, rng);
                normalize_in_place(x);
            }
            store_row(b.target_images, row, x);
            b.target_labels.push_back(c);
        }
    }
    b.target_images.normalized = true;
    b.target_manifest.role = Role::target_images;
    b.target_manifest.labels = b.target_labels;
    b.target_manifest.count = b.target_images.rows;
    return b;
}

BundlePaths bundle_paths(const std::filesystem::path& dir) {
    return {dir / "source_images.embx", dir / "target_images.embx", dir / "source_classnames.embx",
            dir / "noun_vocab.embx"};
}

BundlePaths save_bundle(const std::filesystem::path& dir, const SynthBundle& bundle) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    const auto p = bundle_paths(dir);
    save_embeddings(p.source_images, bundle.source_images, bundle.source_manifest);
    save_embeddings(p.target_images, bundle.target_images, bundle.target_manifest);
    save_embeddings(p.source_classnames, bundle.source_classnames, bundle.classnames_manifest);
    save_embeddings(p.noun_vocab, bundle.noun_vocab, bundle.vocab_manifest);
    return p;
}

}  // namespace tasc
