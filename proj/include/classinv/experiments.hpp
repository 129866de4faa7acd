#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "classinv/data.hpp"
#include "classinv/optim.hpp"

namespace classinv {

/// Seven seeded runs aggregated after discarding the best and the worst test
/// error; mean and standard deviation are taken over the retained runs.
struct AggregateReport {
    std::vector<RunReport> runs;          // sorted by seed
    std::vector<std::size_t> retained;    // indices into runs
    std::size_t discarded_high = 0;       // index of the discarded max test error
    std::size_t discarded_low = 0;        // index of the discarded min test error
    double valid_mean = 0.0;
    double valid_std = 0.0;
    double test_mean = 0.0;
    double test_std = 0.0;
    std::string fingerprint;
};

/// Pure function of the runs; order-independent (runs are sorted by seed).
/// Ties at an extreme discard the lowest seed. Throws when fewer than 3 runs
/// are given.
AggregateReport aggregate_runs(std::vector<RunReport> runs);

// ---- protocol -------------------------------------------------------------------------

struct ProtocolConfig {
    std::string model = "mlp";  // "mlp" or "lenet"
    std::string benchmark;      // name, for reporting
    std::size_t subset_size = 0;  // 0 = whole training set
    std::uint64_t subset_seed = 0;
    HintConfig hint;
    TrainSchedule schedule;  // schedule.seed is the base seed; run i adds i
    std::size_t repeats = 7;
    std::size_t workers = 1;
};

std::string config_fingerprint(const ProtocolConfig& config);

NetworkSplit build_model(const std::string& name, std::uint64_t seed, std::size_t tap);

/// Runs `repeats` seeded trainings (seed = base + i) over the same subset and
/// aggregates them. Runs execute on `workers` threads; results are joined in
/// seed order. Throws when fewer than 3 runs complete.
AggregateReport run_protocol(const Benchmark& bench, const ProtocolConfig& config);

// ---- studies --------------------------------------------------------------------------

struct StudyCell {
    std::string benchmark;
    std::string model;
    std::size_t subset = 0;
    std::string measure;  // "none" for baselines
    std::size_t tap = 0;  // 0 for baselines
    AggregateReport report;
};

/// Unregularized baseline plus one protocol per tap placement (h1, h2, h3),
/// mlp with the squared Euclidean measure.
std::vector<StudyCell> layer_study(const Benchmark& bench, const ProtocolConfig& base);

/// Baseline plus one protocol per dissimilarity measure at the configured
/// model, tap fixed at the last hidden layer.
std::vector<StudyCell> measure_study(const Benchmark& bench, const ProtocolConfig& base);

/// Baseline vs hint pair for one benchmark/model/subset cell.
std::vector<StudyCell> tables_study(const Benchmark& bench, const ProtocolConfig& base);

void write_study_csv(const std::vector<StudyCell>& cells, const std::string& path);
/// Full trajectories per run, for plotting.
void write_study_json(const std::vector<StudyCell>& cells, const std::string& path);

// ---- invariance probe ------------------------------------------------------------------

struct ProbeConfig {
    std::vector<int> classes = {1, 7};
    std::size_t probe_per_class = 1000;
    std::size_t cadence = 50;  // mini-batches between probe evaluations
    std::string model = "mlp";
    TrainSchedule schedule;
};

struct ProbeSeries {
    std::vector<std::size_t> steps;               // mini-batches processed (0 = untrained)
    std::vector<std::vector<double>> per_layer;   // per_layer[k][point], k = 0..layers-1
    std::vector<std::string> layer_names;         // h1..h4
};

/// Trains the model without regularization on the class-filtered training set
/// while periodically evaluating the hint penalty (normalized Manhattan) of
/// every layer, output included, on a fixed seeded probe sample. Probe
/// evaluation is a read-only forward pass.
ProbeSeries invariance_probe(const Benchmark& bench, const ProbeConfig& config);

void write_probe_csv(const ProbeSeries& series, const std::string& path);
void write_probe_json(const ProbeSeries& series, const std::string& path);

}  // namespace classinv
