#include "tasc/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "tasc/error.hpp"

namespace tasc {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double safe_log(double v) { return v > 0.0 ? std::log(v) : 0.0; }

RowMatrix to_rows(const EmbeddingMatrix& m) {
    RowMatrix out(m.rows, m.dims);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t k = 0; k < m.dims; ++k) out(i, k) = m.at(i, k);
    return out;
}

struct Adapted {
    RowMatrix y;                // normalized outputs
    Eigen::VectorXd lengths;    // |W z|
};

Adapted adapt(const Eigen::MatrixXd& w, const RowMatrix& z) {
    Adapted a;
    a.y = z * w.transpose();
    a.lengths = a.y.rowwise().norm();
    for (Eigen::Index i = 0; i < a.y.rows(); ++i) {
        if (!(a.lengths(i) > 1e-12)) throw DegenerateError("adapter maps a sample to the zero vector");
        a.y.row(i) /= a.lengths(i);
    }
    return a;
}

void softmax_rows(RowMatrix& logits) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double peak = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - peak).exp();
        logits.row(i) /= logits.row(i).sum();
    }
}

// Loss plus d(loss)/d(normalized outputs) for both halves.
struct HeadTerms {
    double loss = 0.0;
    RowMatrix grad_y;
};

HeadTerms cross_entropy_head(const Adapted& src, std::span<const int> labels, const RowMatrix& centers,
                             double tau, bool want_grad) {
    const auto n = src.y.rows();
    RowMatrix logits = src.y * centers.transpose() / tau;
    HeadTerms out;
    RowMatrix g = RowMatrix::Zero(n, centers.rows());
    const double log_floor = std::log(kProbabilityFloor);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= centers.rows()) throw DomainError("source label " + std::to_string(y) + " out of range");
        const double peak = logits.row(i).maxCoeff();
        const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
        const double log_py = logits(i, y) - lse;
        if (log_py < log_floor) {
            out.loss -= log_floor;  // floored: locally flat
            continue;
        }
        out.loss -= log_py;
        if (want_grad) {
            g.row(i) = (logits.row(i).array() - lse).exp();
            g(i, y) -= 1.0;
        }
    }
    out.loss /= static_cast<double>(n);
    if (want_grad) out.grad_y = (g / static_cast<double>(n)) * centers / tau;
    return out;
}

HeadTerms im_head(const Adapted& tgt, const RowMatrix& centers, double tau, double lambda_div,
                  bool want_grad) {
    const auto n = tgt.y.rows();
    const auto k = centers.rows();
    RowMatrix p = tgt.y * centers.transpose() / tau;
    softmax_rows(p);
    const Eigen::RowVectorXd mean = p.colwise().sum() / static_cast<double>(n);

    HeadTerms out;
    Eigen::VectorXd ent(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double h = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) h -= p(i, j) * safe_log(p(i, j));
        ent(i) = h;
    }
    double h_mean = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) h_mean -= mean(j) * safe_log(mean(j));
    out.loss = ent.mean() - lambda_div * h_mean;
    if (!want_grad) return out;

    Eigen::RowVectorXd log_mean(k);
    for (Eigen::Index j = 0; j < k; ++j) log_mean(j) = safe_log(mean(j));
    RowMatrix g(n, k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double cross = p.row(i).dot(log_mean);
        for (Eigen::Index j = 0; j < k; ++j) {
            const double pij = p(i, j);
            g(i, j) = inv_n * (-pij * (safe_log(pij) + ent(i))) +
                      lambda_div * inv_n * pij * (log_mean(j) - cross);
        }
    }
    out.grad_y = g * centers / tau;
    return out;
}

// d loss / d W given d loss / d y for rows y = normalize(W z).
void accumulate_weight_grad(const Adapted& a, const RowMatrix& z, const RowMatrix& grad_y,
                            Eigen::MatrixXd& grad) {
    RowMatrix gu = grad_y;
    for (Eigen::Index i = 0; i < gu.rows(); ++i) {
        const double radial = gu.row(i).dot(a.y.row(i));
        gu.row(i) = (gu.row(i) - radial * a.y.row(i)) / a.lengths(i);
    }
    grad.noalias() += gu.transpose() * z;
}

void check_inputs(const Eigen::MatrixXd& w, const EmbeddingMatrix& source, std::span<const int> labels,
                  const EmbeddingMatrix& target_batch, const RefineTargets& centers) {
    const auto d = static_cast<std::size_t>(w.rows());
    if (w.cols() != w.rows()) throw ShapeError("adapter must be square");
    if (target_batch.rows == 0) throw ConfigError("empty target batch");
    if (source.rows == 0) throw ConfigError("empty source set");
    if (labels.size() != source.rows) throw ShapeError("source labels do not match source rows");
    if (source.dims != d || target_batch.dims != d || centers.source_centers.dims != d ||
        centers.target_centers.dims != d)
        throw ShapeError("refine inputs disagree on dims");
    if (centers.source_centers.rows == 0 || centers.target_centers.rows == 0)
        throw DomainError("refine needs non-empty center sets");
}

LossGradient evaluate(const Eigen::MatrixXd& w, const EmbeddingMatrix& source, std::span<const int> labels,
                      const EmbeddingMatrix& target_batch, const RefineTargets& centers,
                      const PredictionConfig& cfg, bool want_grad) {
    check_inputs(w, source, labels, target_batch, centers);
    const RowMatrix zs = to_rows(source);
    const RowMatrix zt = to_rows(target_batch);
    const RowMatrix ws = to_rows(centers.source_centers);
    const RowMatrix st = to_rows(centers.target_centers);

    const Adapted as = adapt(w, zs);
    const Adapted at = adapt(w, zt);
    const auto ce = cross_entropy_head(as, labels, ws, cfg.tau, want_grad);
    const auto im = im_head(at, st, cfg.tau, cfg.lambda_div, want_grad);

    LossGradient out;
    out.loss = ce.loss + im.loss;
    if (want_grad) {
        out.grad = Eigen::MatrixXd::Zero(w.rows(), w.cols());
        accumulate_weight_grad(as, zs, ce.grad_y, out.grad);
        accumulate_weight_grad(at, zt, im.grad_y, out.grad);
    }
    return out;
}

}  // namespace

Adapter Adapter::identity(std::size_t d) {
    Adapter a;
    a.dims = d;
    a.weights.assign(d * d, 0.0f);
    for (std::size_t i = 0; i < d; ++i) a.weights[i * d + i] = 1.0f;
    return a;
}

Adapter Adapter::from_matrix(const Eigen::MatrixXd& w) {
    if (w.rows() != w.cols()) throw ShapeError("adapter must be square");
    Adapter a;
    a.dims = static_cast<std::size_t>(w.rows());
    a.weights.resize(a.dims * a.dims);
    for (std::size_t i = 0; i < a.dims; ++i)
        for (std::size_t k = 0; k < a.dims; ++k) a.weights[i * a.dims + k] = static_cast<float>(w(i, k));
    return a;
}

Eigen::MatrixXd Adapter::to_matrix() const {
    Eigen::MatrixXd w(dims, dims);
    for (std::size_t i = 0; i < dims; ++i)
        for (std::size_t k = 0; k < dims; ++k) w(i, k) = weights[i * dims + k];
    return w;
}

EmbeddingMatrix Adapter::as_embedding_matrix() const {
    EmbeddingMatrix m(dims, dims);
    m.data = weights;
    return m;
}

Adapter Adapter::from_embedding_matrix(const EmbeddingMatrix& m) {
    if (m.rows != m.dims) throw ShapeError("adapter checkpoint must be square");
    Adapter a;
    a.dims = m.dims;
    a.weights = m.data;
    return a;
}

void TrainConfig::validate() const {
    if (!(eta0 > 0.0)) throw ConfigError("eta0 must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
}

std::vector<float> forward(const Adapter& adapter, std::span<const float> z) {
    if (z.size() != adapter.dims) throw ShapeError("forward: dims mismatch");
    const std::size_t d = adapter.dims;
    std::vector<double> u(d, 0.0);
    double len = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(adapter.weights[i * d + k]) * z[k];
        u[i] = acc;
        len += acc * acc;
    }
    len = std::sqrt(len);
    if (!(len > 1e-12)) throw DegenerateError("adapter output is the zero vector");
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(u[i] / len);
    return out;
}

EmbeddingMatrix forward_all(const Adapter& adapter, const EmbeddingMatrix& m) {
    EmbeddingMatrix out(m.rows, m.dims);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const auto y = forward(adapter, m.row(i));
        std::copy(y.begin(), y.end(), out.row(i).begin());
    }
    out.normalized = true;
    return out;
}

double loss_all(const Eigen::MatrixXd& w, const EmbeddingMatrix& source, std::span<const int> labels,
                const EmbeddingMatrix& target_batch, const RefineTargets& centers,
                const PredictionConfig& cfg) {
    return evaluate(w, source, labels, target_batch, centers, cfg, false).loss;
}

double loss_all(const Adapter& adapter, const EmbeddingMatrix& source, std::span<const int> labels,
                const EmbeddingMatrix& target_batch, const RefineTargets& centers,
                const PredictionConfig& cfg) {
    return loss_all(adapter.to_matrix(), source, labels, target_batch, centers, cfg);
}

LossGradient loss_and_gradient(const Eigen::MatrixXd& w, const EmbeddingMatrix& source,
                               std::span<const int> labels, const EmbeddingMatrix& target_batch,
                               const RefineTargets& centers, const PredictionConfig& cfg) {
    return evaluate(w, source, labels, target_batch, centers, cfg, true);
}

Eigen::MatrixXd grad_loss_all(const Eigen::MatrixXd& w, const EmbeddingMatrix& source,
                              std::span<const int> labels, const EmbeddingMatrix& target_batch,
                              const RefineTargets& centers, const PredictionConfig& cfg) {
    return loss_and_gradient(w, source, labels, target_batch, centers, cfg).grad;
}

double learning_rate(double eta0, double progress) {
    return eta0 * std::pow(1.0 + 10.0 * progress, -0.75);
}

TrainResult train(const Adapter& init, const EmbeddingMatrix& source, std::span<const int> labels,
                  const EmbeddingMatrix& targets, const RefineTargets& centers,
                  const PredictionConfig& pcfg, const TrainConfig& tcfg) {
    pcfg.validate();
    tcfg.validate();
    if (targets.rows == 0) throw ConfigError("refine needs target samples");
    if (source.rows == 0) throw ConfigError("refine needs source samples");
    if (labels.size() != source.rows) throw ShapeError("source labels do not match source rows");

    TrainResult result{init, {}};
    if (tcfg.epochs == 0) return result;

    Eigen::MatrixXd w = init.to_matrix();
    std::mt19937_64 rng(tcfg.seed);
    const std::size_t batch = tcfg.batch_size;
    const std::size_t steps_per_epoch = (targets.rows + batch - 1) / batch;
    const double total_steps = static_cast<double>(steps_per_epoch * tcfg.epochs);

    std::vector<std::size_t> target_order(targets.rows);
    std::iota(target_order.begin(), target_order.end(), std::size_t{0});
    std::vector<std::size_t> source_order(source.rows);
    std::iota(source_order.begin(), source_order.end(), std::size_t{0});
    std::shuffle(source_order.begin(), source_order.end(), rng);
    std::size_t source_cursor = 0;

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::shuffle(target_order.begin(), target_order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
            const std::size_t begin = b * batch;
            const std::size_t end = std::min(targets.rows, begin + batch);
            const auto target_idx = std::span(target_order).subspan(begin, end - begin);

            std::vector<std::size_t> source_idx(batch);
            for (auto& idx : source_idx) {
                if (source_cursor == source_order.size()) {
                    std::shuffle(source_order.begin(), source_order.end(), rng);
                    source_cursor = 0;
                }
                idx = source_order[source_cursor++];
            }
            std::vector<int> batch_labels(batch);
            for (std::size_t k = 0; k < batch; ++k) batch_labels[k] = labels[source_idx[k]];

            const auto tb = gather_rows(targets, target_idx);
            const auto sb = gather_rows(source, source_idx);
            const auto lg = loss_and_gradient(w, sb, batch_labels, tb, centers, pcfg);
            if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
                throw NumericError("refine: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + " (loss=" + std::to_string(lg.loss) + ")");
            const double eta = learning_rate(tcfg.eta0, static_cast<double>(step) / total_steps);
            w -= eta * lg.grad;
            epoch_loss += lg.loss;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    }
    result.adapter = Adapter::from_matrix(w);
    return result;
}

}  // namespace tasc
