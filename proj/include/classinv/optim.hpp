#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "classinv/data.hpp"
#include "classinv/losses.hpp"
#include "classinv/network.hpp"

namespace classinv {

enum class OptimizerKind { AdaDelta, Sgd };

OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Per-parameter running accumulators of squared gradients and squared
/// updates; shapes mirror the parameter.
struct AdaDeltaState {
    Tensor grad_sq;
    Tensor delta_sq;
};

/// One AdaDelta update in place:
///   E[g^2] <- rho E[g^2] + (1-rho) g^2
///   d      <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2]<- rho E[dx^2] + (1-rho) d^2
///   x      <- x + d
/// State accumulators are allocated on first use.
void adadelta_step(Tensor& param, const Tensor& grad, AdaDeltaState& state, double rho,
                   double eps);

/// A stack of per-parameter optimizer states stepping a fixed tensor list.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptimizerKind kind, double sgd_lr, double rho, double eps)
        : kind_(kind), sgd_lr_(sgd_lr), rho_(rho), eps_(eps) {}

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

    OptimizerKind kind() const { return kind_; }
    const std::vector<AdaDeltaState>& states() const { return states_; }

    void save(std::ostream& out) const;
    void load(std::istream& in);

private:
    OptimizerKind kind_ = OptimizerKind::AdaDelta;
    double sgd_lr_ = 0.1;
    double rho_ = 0.95;
    double eps_ = 1e-6;
    std::vector<AdaDeltaState> states_;
};

// ---- schedule and reports -----------------------------------------------------------

struct TrainSchedule {
    std::size_t max_epochs = 400;
    std::size_t batch_size = 100;
    std::uint64_t seed = 1;
    std::size_t early_stop_patience = 0;  // epochs without validation gain; 0 = off
    std::size_t test_eval_cadence = 1;    // evaluate test error every k epochs
    OptimizerKind sup_optimizer = OptimizerKind::AdaDelta;
    OptimizerKind hint_optimizer = OptimizerKind::AdaDelta;
    double sgd_lr = 0.1;
    double adadelta_rho = 0.95;
    double adadelta_eps = 1e-6;
};

struct EpochLog {
    std::size_t epoch = 0;
    double sup_loss = 0.0;     // epoch mean of per-batch mean cross-entropy
    double hint_value = 0.0;   // epoch mean of per-batch hint penalty
    double train_error = 0.0;  // percent
    double valid_error = 0.0;
    double test_error = 0.0;
    double seconds = 0.0;
};

struct RunReport {
    std::vector<EpochLog> trajectory;
    double best_valid_error = 100.0;
    double test_error_at_best = 100.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::size_t supervised_steps = 0;
    std::size_t hint_steps = 0;
    std::uint64_t seed = 0;
    std::string fingerprint;
};

struct TrainResult {
    RunReport report;
    NetworkSplit best;  // parameters at the lowest validation error
};

/// Optional instrumentation; both callbacks observe, never mutate.
struct TrainHooks {
    /// After each supervised+hint mini-batch pair; `step` counts pairs from 0.
    std::function<void(std::size_t step, const NetworkSplit& net)> after_minibatch;
    /// After each epoch's evaluation.
    std::function<void(const EpochLog& log)> after_epoch;
    /// When nonempty, a resume file is maintained here each epoch and loaded
    /// on startup if present, so an interrupted run continues where it left
    /// off.
    std::string resume_path;
};

/// Alternating two-optimizer training: per epoch the training set is
/// shuffled (a mt19937_64 seeded with schedule.seed drives the shuffles and
/// nothing else), split into mini-batches, and each batch gets (a) a
/// supervised step over all parameters with the supervised optimizer, then
/// (b) when lambda > 0, a hint step over the representation-stage parameters
/// with the hint optimizer, pairs enumerated within the same batch. Tracks
/// validation error per epoch and returns the best-validation checkpoint.
/// Trailing batches with fewer than 2 rows are dropped.
TrainResult train(NetworkSplit net, const Dataset& train_set, const Dataset& valid_set,
                  const Dataset& test_set, const HintConfig& hint, const TrainSchedule& schedule,
                  const TrainHooks& hooks = {});

/// Classification error in percent over the whole set.
double classification_error(const NetworkSplit& net, const Dataset& dataset,
                            std::size_t eval_batch = 500);

/// Writes the per-epoch CSV: epoch,j_sup,j_hint,train_err,valid_err,test_err,seconds.
void write_training_log(const std::vector<EpochLog>& trajectory, const std::string& path);

}  // namespace classinv
