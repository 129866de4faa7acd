#include "classinv/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace classinv {

namespace fs = std::filesystem;

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "adadelta") return OptimizerKind::AdaDelta;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw std::invalid_argument("unknown optimizer: " + name);
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::AdaDelta ? "adadelta" : "sgd";
}

void adadelta_step(Tensor& param, const Tensor& grad, AdaDeltaState& state, double rho,
                   double eps) {
    if (!param.same_shape(grad)) {
        throw std::invalid_argument("adadelta_step: param " + shape_str(param.shape()) +
                                    " vs grad " + shape_str(grad.shape()));
    }
    if (state.grad_sq.empty()) {
        state.grad_sq = Tensor(param.shape());
        state.delta_sq = Tensor(param.shape());
    } else if (!state.grad_sq.same_shape(param)) {
        throw std::invalid_argument("adadelta_step: state shape " +
                                    shape_str(state.grad_sq.shape()) + " vs param " +
                                    shape_str(param.shape()));
    }
    const std::size_t n = param.size();
    double* x = param.data();
    const double* g = grad.data();
    double* eg = state.grad_sq.data();
    double* ed = state.delta_sq.data();
    for (std::size_t i = 0; i < n; ++i) {
        eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
        const double delta = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
        ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
        x[i] += delta;
    }
}

void Optimizer::step(const std::vector<Tensor*>& params,
                     const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("Optimizer::step: " + std::to_string(params.size()) +
                                    " params vs " + std::to_string(grads.size()) + " grads");
    }
    if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = *grads[i];
            if (!p.same_shape(g)) {
                throw std::invalid_argument("sgd step: param " + shape_str(p.shape()) +
                                            " vs grad " + shape_str(g.shape()));
            }
            for (std::size_t k = 0; k < p.size(); ++k) p[k] -= sgd_lr_ * g[k];
        }
        return;
    }
    if (states_.empty()) states_.resize(params.size());
    if (states_.size() != params.size()) {
        throw std::invalid_argument("Optimizer::step: state count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        adadelta_step(*params[i], *grads[i], states_[i], rho_, eps_);
    }
}

namespace {

void write_tensor_raw(std::ostream& out, const Tensor& t) {
    const std::uint64_t n = t.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
}

Tensor read_tensor_raw(std::istream& in, const std::vector<std::size_t>& shape) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    Tensor t(shape.empty() ? std::vector<std::size_t>{static_cast<std::size_t>(n)} : shape);
    if (t.size() != n) throw std::runtime_error("optimizer state: tensor size mismatch");
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(double)));
    return t;
}

}  // namespace

void Optimizer::save(std::ostream& out) const {
    const std::uint32_t kind = static_cast<std::uint32_t>(kind_);
    out.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
    const std::uint64_t count = states_.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const AdaDeltaState& s : states_) {
        write_tensor_raw(out, s.grad_sq);
        write_tensor_raw(out, s.delta_sq);
    }
}

void Optimizer::load(std::istream& in) {
    std::uint32_t kind = 0;
    in.read(reinterpret_cast<char*>(&kind), sizeof(kind));
    kind_ = static_cast<OptimizerKind>(kind);
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    states_.assign(count, AdaDeltaState{});
    for (AdaDeltaState& s : states_) {
        s.grad_sq = read_tensor_raw(in, {});
        s.delta_sq = read_tensor_raw(in, {});
    }
    if (!in) throw std::runtime_error("optimizer state: truncated stream");
}

// ---- evaluation ------------------------------------------------------------------------

double classification_error(const NetworkSplit& net, const Dataset& dataset,
                            std::size_t eval_batch) {
    const std::size_t n = dataset.size();
    if (n == 0) throw std::invalid_argument("classification_error: empty dataset");
    std::size_t wrong = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += eval_batch) {
        const std::size_t stop = std::min(start + eval_batch, n);
        rows.resize(stop - start);
        std::iota(rows.begin(), rows.end(), start);
        const Tensor probs = predict(net, dataset.images(rows));
        const std::size_t classes = probs.dim(1);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* row = probs.data() + i * classes;
            std::size_t arg = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (row[c] > row[arg]) arg = c;
            }
            if (static_cast<int>(arg) != dataset.label(rows[i])) ++wrong;
        }
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
}

// ---- resume state ------------------------------------------------------------------------

namespace {

constexpr char kResumeMagic[8] = {'C', 'I', 'N', 'V', 'R', 'E', 'S', '1'};

struct ResumeMeta {
    std::size_t next_epoch = 0;
    std::size_t best_epoch = 0;
    double best_valid_error = 100.0;
    std::size_t supervised_steps = 0;
    std::size_t hint_steps = 0;
    std::vector<EpochLog> trajectory;
    std::string rng_state;
};

void save_resume(const std::string& path, const ResumeMeta& meta, const NetworkSplit& current,
                 const NetworkSplit& best, const Optimizer& sup_opt, const Optimizer& hint_opt) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("resume: cannot open " + tmp);
        out.write(kResumeMagic, sizeof(kResumeMagic));
        const auto put_u64 = [&](std::uint64_t v) {
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        };
        const auto put_f64 = [&](double v) {
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        };
        put_u64(meta.next_epoch);
        put_u64(meta.best_epoch);
        put_f64(meta.best_valid_error);
        put_u64(meta.supervised_steps);
        put_u64(meta.hint_steps);
        put_u64(meta.trajectory.size());
        for (const EpochLog& log : meta.trajectory) {
            put_u64(log.epoch);
            put_f64(log.sup_loss);
            put_f64(log.hint_value);
            put_f64(log.train_error);
            put_f64(log.valid_error);
            put_f64(log.test_error);
            put_f64(log.seconds);
        }
        put_u64(meta.rng_state.size());
        out.write(meta.rng_state.data(), static_cast<std::streamsize>(meta.rng_state.size()));
        std::ostringstream opt_blob;
        sup_opt.save(opt_blob);
        hint_opt.save(opt_blob);
        const std::string blob = opt_blob.str();
        put_u64(blob.size());
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    save_checkpoint(current, path + ".current");
    save_checkpoint(best, path + ".best");
    fs::rename(tmp, path);
}

bool load_resume(const std::string& path, ResumeMeta& meta, NetworkSplit& current,
                 NetworkSplit& best, Optimizer& sup_opt, Optimizer& hint_opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kResumeMagic, sizeof(kResumeMagic)) != 0) {
        throw std::runtime_error("resume: bad magic in " + path);
    }
    const auto get_u64 = [&]() {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    };
    const auto get_f64 = [&]() {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    };
    meta.next_epoch = get_u64();
    meta.best_epoch = get_u64();
    meta.best_valid_error = get_f64();
    meta.supervised_steps = get_u64();
    meta.hint_steps = get_u64();
    meta.trajectory.resize(get_u64());
    for (EpochLog& log : meta.trajectory) {
        log.epoch = get_u64();
        log.sup_loss = get_f64();
        log.hint_value = get_f64();
        log.train_error = get_f64();
        log.valid_error = get_f64();
        log.test_error = get_f64();
        log.seconds = get_f64();
    }
    meta.rng_state.resize(get_u64());
    in.read(meta.rng_state.data(), static_cast<std::streamsize>(meta.rng_state.size()));
    std::string blob(get_u64(), '\0');
    in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!in) throw std::runtime_error("resume: truncated file " + path);
    std::istringstream opt_blob(blob);
    sup_opt.load(opt_blob);
    hint_opt.load(opt_blob);
    current = load_checkpoint(path + ".current");
    best = load_checkpoint(path + ".best");
    return true;
}

Tensor flat_representation(const ForwardCache& cache, std::size_t tap) {
    const Tensor& rep = cache.outputs[tap - 1];
    if (rep.rank() == 2) return rep;
    return rep.reshaped({cache.batch, rep.size() / cache.batch});
}

}  // namespace

// ---- training loop ----------------------------------------------------------------------

TrainResult train(NetworkSplit net, const Dataset& train_set, const Dataset& valid_set,
                  const Dataset& test_set, const HintConfig& hint, const TrainSchedule& schedule,
                  const TrainHooks& hooks) {
    if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
    if (schedule.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    const bool hint_active = hint.lambda > 0.0;
    if (hint_active && schedule.batch_size < 2) {
        throw std::invalid_argument("train: batch size must be >= 2 when the hint is active");
    }
    if (hint_active && (hint.tap < 1 || hint.tap >= net.depth())) {
        throw std::invalid_argument("train: tap " + std::to_string(hint.tap) + " out of range");
    }
    if (hint_active && hint.tap != net.tap()) net.set_tap(hint.tap);

    Optimizer sup_opt(schedule.sup_optimizer, schedule.sgd_lr, schedule.adadelta_rho,
                      schedule.adadelta_eps);
    Optimizer hint_opt(schedule.hint_optimizer, schedule.sgd_lr, schedule.adadelta_rho,
                       schedule.adadelta_eps);
    std::mt19937_64 shuffle_rng(schedule.seed);

    TrainResult result;
    result.report.seed = schedule.seed;
    NetworkSplit best = net;
    double best_valid = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t start_epoch = 0;
    std::size_t sup_steps = 0, hint_steps = 0;
    std::vector<EpochLog> trajectory;
    double last_test_error = std::numeric_limits<double>::quiet_NaN();

    if (!hooks.resume_path.empty()) {
        ResumeMeta meta;
        if (load_resume(hooks.resume_path, meta, net, best, sup_opt, hint_opt)) {
            start_epoch = meta.next_epoch;
            best_epoch = meta.best_epoch;
            best_valid = meta.best_valid_error;
            sup_steps = meta.supervised_steps;
            hint_steps = meta.hint_steps;
            trajectory = std::move(meta.trajectory);
            std::istringstream rng_in(meta.rng_state);
            rng_in >> shuffle_rng;
            if (!trajectory.empty()) last_test_error = trajectory.back().test_error;
        }
    }

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const std::size_t depth = net.depth();
    for (std::size_t epoch = start_epoch; epoch < schedule.max_epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sup_loss_sum = 0.0, hint_value_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
            const std::size_t stop = std::min(start + schedule.batch_size, order.size());
            if (stop - start < 2 && order.size() > 1) break;  // drop trailing singleton
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(stop));
            const Tensor images = train_set.images(rows);
            const std::vector<int> labels = train_set.labels_of(rows);

            // supervised step over every parameter
            {
                ForwardCache cache = forward_cached(net, images, depth);
                CrossEntropyResult ce = cross_entropy(cache.probs, labels);
                const Tensor grad_probs =
                    hint.gamma == 1.0 ? ce.grad : scaled(ce.grad, hint.gamma);
                Gradients grads = backward_from_output(net, cache, grad_probs);
                sup_opt.step(net.parameters(), grads.flatten(depth));
                sup_loss_sum += ce.loss;
                ++sup_steps;
            }
            // hint step over the representation stage only
            if (hint_active) {
                ForwardCache cache = forward_cached(net, images, hint.tap);
                RepresentationBatch reps =
                    RepresentationBatch::from(flat_representation(cache, hint.tap), labels);
                HintPenaltyResult penalty = hint_penalty_batch(reps, hint.measure);
                const Tensor grad_rep =
                    hint.lambda == 1.0 ? penalty.grad : scaled(penalty.grad, hint.lambda);
                Gradients grads = backward_from_tap(net, cache, grad_rep);
                hint_opt.step(net.representation_parameters(), grads.flatten(hint.tap));
                hint_value_sum += penalty.value;
                ++hint_steps;
            }
            if (hooks.after_minibatch) hooks.after_minibatch(sup_steps - 1, net);
            ++batches;
        }

        EpochLog log;
        log.epoch = epoch;
        log.sup_loss = batches ? sup_loss_sum / static_cast<double>(batches) : 0.0;
        log.hint_value = batches ? hint_value_sum / static_cast<double>(batches) : 0.0;
        log.train_error = classification_error(net, train_set);
        log.valid_error = classification_error(net, valid_set);
        const bool eval_test = schedule.test_eval_cadence <= 1 ||
                               epoch % schedule.test_eval_cadence == 0 ||
                               epoch + 1 == schedule.max_epochs;
        if (eval_test || std::isnan(last_test_error)) {
            last_test_error = classification_error(net, test_set);
        }
        log.test_error = last_test_error;

        if (log.valid_error < best_valid) {
            best_valid = log.valid_error;
            best_epoch = epoch;
            best = net;
        }
        log.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                .count();
        trajectory.push_back(log);
        if (hooks.after_epoch) hooks.after_epoch(log);

        if (!hooks.resume_path.empty()) {
            ResumeMeta meta;
            meta.next_epoch = epoch + 1;
            meta.best_epoch = best_epoch;
            meta.best_valid_error = best_valid;
            meta.supervised_steps = sup_steps;
            meta.hint_steps = hint_steps;
            meta.trajectory = trajectory;
            std::ostringstream rng_out;
            rng_out << shuffle_rng;
            meta.rng_state = rng_out.str();
            save_resume(hooks.resume_path, meta, net, best, sup_opt, hint_opt);
        }

        if (schedule.early_stop_patience > 0 &&
            epoch - best_epoch >= schedule.early_stop_patience) {
            break;
        }
    }

    result.report.trajectory = std::move(trajectory);
    result.report.best_valid_error = best_valid;
    result.report.best_epoch = best_epoch;
    result.report.epochs_run = result.report.trajectory.size();
    result.report.supervised_steps = sup_steps;
    result.report.hint_steps = hint_steps;
    result.report.test_error_at_best = classification_error(best, test_set);
    result.best = std::move(best);
    return result;
}

void write_training_log(const std::vector<EpochLog>& trajectory, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "epoch,j_sup,j_hint,train_error,valid_error,test_error,seconds\n";
    out.precision(12);
    for (const EpochLog& log : trajectory) {
        out << log.epoch << ',' << log.sup_loss << ',' << log.hint_value << ','
            << log.train_error << ',' << log.valid_error << ',' << log.test_error << ','
            << log.seconds << '\n';
    }
}

}  // namespace classinv
