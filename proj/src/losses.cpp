#include "classinv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace classinv {

Dissimilarity dissimilarity_from_string(const std::string& name) {
    if (name == "sed") return Dissimilarity::SquaredEuclidean;
    if (name == "nmd") return Dissimilarity::NormalizedManhattan;
    if (name == "as") return Dissimilarity::Angular;
    throw std::invalid_argument("unknown dissimilarity measure: " + name);
}

std::string to_string(Dissimilarity measure) {
    switch (measure) {
        case Dissimilarity::SquaredEuclidean: return "sed";
        case Dissimilarity::NormalizedManhattan: return "nmd";
        case Dissimilarity::Angular: return "as";
    }
    return "?";
}

RepresentationBatch RepresentationBatch::from(Tensor reps, std::vector<int> labels) {
    if (reps.rank() != 2) {
        throw std::invalid_argument("RepresentationBatch: reps must be [B x V], got " +
                                    shape_str(reps.shape()));
    }
    if (reps.dim(0) != labels.size()) {
        throw std::invalid_argument("RepresentationBatch: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(reps.dim(0)) + " rows");
    }
    if (reps.dim(1) == 0) throw std::invalid_argument("RepresentationBatch: V must be positive");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    RepresentationBatch batch;
    batch.reps = std::move(reps);
    batch.labels = std::move(labels);
    batch.class_rows.reserve(by_class.size());
    for (auto& [cls, rows] : by_class) batch.class_rows.push_back(std::move(rows));
    return batch;
}

// ---- cross entropy ----------------------------------------------------------------

CrossEntropyResult cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2) {
        throw std::invalid_argument("cross_entropy: probs must be [B x S], got " +
                                    shape_str(probs.shape()));
    }
    const std::size_t b = probs.dim(0), classes = probs.dim(1);
    if (labels.size() != b) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(b) + " rows");
    }
    CrossEntropyResult result;
    result.grad = Tensor({b, classes});
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                                    " outside 0.." + std::to_string(classes - 1));
        }
        const double p = std::max(probs(i, static_cast<std::size_t>(y)), 1e-300);
        loss -= std::log(p);
        result.grad(i, static_cast<std::size_t>(y)) = -1.0 / (static_cast<double>(b) * p);
    }
    result.loss = loss / static_cast<double>(b);
    return result;
}

// ---- dissimilarities ----------------------------------------------------------------

namespace {

constexpr double kCosineClamp = 1.0 - 1e-12;

double norm2(const double* v, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

double angular_value(const double* a, const double* b, std::size_t n, const char* who) {
    const double na = norm2(a, n), nb = norm2(b, n);
    if (na == 0.0 || nb == 0.0) {
        throw std::domain_error(std::string("angular dissimilarity: zero-norm vector (") + who +
                                ")");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    const double c = std::clamp(dot / (na * nb), -1.0, 1.0);
    return std::acos(c);
}

// Accumulates w * dC/da into ga and w * dC/db into gb.
void accumulate_pair_grad(const double* a, const double* b, std::size_t n, Dissimilarity measure,
                          double w, double* ga, double* gb, const char* who) {
    switch (measure) {
        case Dissimilarity::SquaredEuclidean: {
            for (std::size_t i = 0; i < n; ++i) {
                const double g = 2.0 * (a[i] - b[i]) * w;
                ga[i] += g;
                gb[i] -= g;
            }
            break;
        }
        case Dissimilarity::NormalizedManhattan: {
            const double scale = w / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = a[i] - b[i];
                const double g = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
                ga[i] += g;
                gb[i] -= g;
            }
            break;
        }
        case Dissimilarity::Angular: {
            const double na = norm2(a, n), nb = norm2(b, n);
            if (na == 0.0 || nb == 0.0) {
                throw std::domain_error(std::string("angular dissimilarity: zero-norm vector (") +
                                        who + ")");
            }
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
            const double c = dot / (na * nb);
            // The arccos derivative is singular at aligned pairs; bound it by
            // clamping the cosine away from +/-1.
            const double cc = std::clamp(c, -kCosineClamp, kCosineClamp);
            const double dacos = -1.0 / std::sqrt(1.0 - cc * cc);
            const double inv = 1.0 / (na * nb);
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] += w * dacos * (b[i] * inv - c * a[i] / (na * na));
                gb[i] += w * dacos * (a[i] * inv - c * b[i] / (nb * nb));
            }
            break;
        }
    }
}

double pair_value(const double* a, const double* b, std::size_t n, Dissimilarity measure,
                  const char* who) {
    switch (measure) {
        case Dissimilarity::SquaredEuclidean: {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = a[i] - b[i];
                s += d * d;
            }
            return s;
        }
        case Dissimilarity::NormalizedManhattan: {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
            return s / static_cast<double>(n);
        }
        case Dissimilarity::Angular:
            return angular_value(a, b, n, who);
    }
    return 0.0;
}

}  // namespace

DissimilarityResult dissimilarity(const Tensor& a, const Tensor& b, Dissimilarity measure) {
    if (a.size() != b.size() || a.size() == 0) {
        throw std::invalid_argument("dissimilarity: vectors " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " must match and be nonempty");
    }
    DissimilarityResult result;
    result.value = pair_value(a.data(), b.data(), a.size(), measure, "argument");
    result.grad_a = Tensor(a.shape());
    result.grad_b = Tensor(b.shape());
    accumulate_pair_grad(a.data(), b.data(), a.size(), measure, 1.0, result.grad_a.data(),
                         result.grad_b.data(), "argument");
    return result;
}

double dissimilarity_value(const Tensor& a, const Tensor& b, Dissimilarity measure) {
    if (a.size() != b.size() || a.size() == 0) {
        throw std::invalid_argument("dissimilarity: vectors " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " must match and be nonempty");
    }
    return pair_value(a.data(), b.data(), a.size(), measure, "argument");
}

// ---- hint penalty --------------------------------------------------------------------

HintPenaltyResult hint_penalty_batch(const RepresentationBatch& batch, Dissimilarity measure) {
    const std::size_t v = batch.reps.dim(1);
    HintPenaltyResult result;
    result.grad = Tensor(batch.reps.shape());

    std::size_t active_classes = 0;
    for (const auto& rows : batch.class_rows) {
        if (rows.size() >= 2) ++active_classes;
    }
    if (active_classes == 0) return result;  // no pairs anywhere

    const double* reps = batch.reps.data();
    double* grad = result.grad.data();
    double total = 0.0;
    for (const auto& rows : batch.class_rows) {
        const std::size_t n = rows.size();
        if (n < 2) continue;
        // one ordered-pair weight carries all three normalizations
        const double w = 1.0 / (static_cast<double>(active_classes) * static_cast<double>(n) *
                                static_cast<double>(n - 1));
        for (std::size_t ii = 0; ii < n; ++ii) {
            const double* a = reps + rows[ii] * v;
            for (std::size_t jj = 0; jj < n; ++jj) {
                if (jj == ii) continue;
                const double* b = reps + rows[jj] * v;
                const char* who = "row";
                try {
                    total += w * pair_value(a, b, v, measure, who);
                    accumulate_pair_grad(a, b, v, measure, w, grad + rows[ii] * v,
                                         grad + rows[jj] * v, who);
                } catch (const std::domain_error&) {
                    throw std::domain_error(
                        "angular dissimilarity: zero-norm representation row " +
                        std::to_string(rows[ii]) + " or " + std::to_string(rows[jj]));
                }
            }
        }
    }
    result.value = total;
    return result;
}

double hint_penalty_value(const RepresentationBatch& batch, Dissimilarity measure) {
    const std::size_t v = batch.reps.dim(1);
    std::size_t active_classes = 0;
    for (const auto& rows : batch.class_rows) {
        if (rows.size() >= 2) ++active_classes;
    }
    if (active_classes == 0) return 0.0;

    const double* reps = batch.reps.data();
    double total = 0.0;
    for (const auto& rows : batch.class_rows) {
        const std::size_t n = rows.size();
        if (n < 2) continue;
        const double w = 1.0 / (static_cast<double>(active_classes) * static_cast<double>(n) *
                                static_cast<double>(n - 1));
        double class_sum = 0.0;
        switch (measure) {
            case Dissimilarity::SquaredEuclidean: {
                // sum over ordered pairs of ||a - b||^2 = 2n*sum_i||r_i||^2 - 2*||sum_i r_i||^2
                double sq = 0.0, mean_sq = 0.0;
                std::vector<double> col_sum(v, 0.0);
                for (std::size_t idx : rows) {
                    const double* r = reps + idx * v;
                    for (std::size_t d = 0; d < v; ++d) {
                        sq += r[d] * r[d];
                        col_sum[d] += r[d];
                    }
                }
                for (std::size_t d = 0; d < v; ++d) mean_sq += col_sum[d] * col_sum[d];
                class_sum = 2.0 * static_cast<double>(n) * sq - 2.0 * mean_sq;
                break;
            }
            case Dissimilarity::NormalizedManhattan: {
                // per dimension, sum_{i<j} (x_(j) - x_(i)) over sorted values
                std::vector<double> column(n);
                double abs_sum = 0.0;
                for (std::size_t d = 0; d < v; ++d) {
                    for (std::size_t k = 0; k < n; ++k) column[k] = reps[rows[k] * v + d];
                    std::sort(column.begin(), column.end());
                    double s = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                        s += column[k] * (2.0 * static_cast<double>(k) -
                                          static_cast<double>(n - 1));
                    }
                    abs_sum += s;
                }
                class_sum = 2.0 * abs_sum / static_cast<double>(v);
                break;
            }
            case Dissimilarity::Angular: {
                for (std::size_t ii = 0; ii < n; ++ii) {
                    for (std::size_t jj = ii + 1; jj < n; ++jj) {
                        class_sum += 2.0 * angular_value(reps + rows[ii] * v,
                                                         reps + rows[jj] * v, v, "row");
                    }
                }
                break;
            }
        }
        total += w * class_sum;
    }
    return total;
}

// ---- combined objective ----------------------------------------------------------------

ObjectiveValue full_objective(const NetworkSplit& net, const Tensor& batch,
                              const std::vector<int>& labels, const HintConfig& config) {
    if (config.gamma < 0.0 || config.lambda < 0.0) {
        throw std::invalid_argument("full_objective: weights must be nonnegative");
    }
    ObjectiveValue value;
    TapsResult taps = forward_with_taps(net, batch);
    value.supervised = cross_entropy(taps.probs, labels).loss;
    if (config.lambda != 0.0) {
        if (config.tap < 1 || config.tap >= net.depth()) {
            throw std::invalid_argument("full_objective: tap " + std::to_string(config.tap) +
                                        " out of range");
        }
        RepresentationBatch reps =
            RepresentationBatch::from(taps.hidden[config.tap - 1], labels);
        value.hint = hint_penalty_batch(reps, config.measure).value;
    }
    value.total = config.gamma * value.supervised + config.lambda * value.hint;
    return value;
}

}  // namespace classinv
