#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "classinv/network.hpp"
#include "classinv/tensor.hpp"

namespace classinv {

enum class Dissimilarity { SquaredEuclidean, NormalizedManhattan, Angular };

Dissimilarity dissimilarity_from_string(const std::string& name);
std::string to_string(Dissimilarity measure);

/// Weights and placement of the representation penalty.
struct HintConfig {
    Dissimilarity measure = Dissimilarity::SquaredEuclidean;
    double gamma = 1.0;   // supervised term weight, >= 0
    double lambda = 1.0;  // hint term weight, >= 0
    std::size_t tap = 3;  // hidden layer whose output is penalized
};

/// Tapped-layer outputs of a mini-batch grouped by class for pair
/// enumeration. class_rows holds, for each class present, the row indices
/// belonging to it; the lists partition 0..B.
struct RepresentationBatch {
    Tensor reps;  // [B x V]
    std::vector<int> labels;
    std::vector<std::vector<std::size_t>> class_rows;

    static RepresentationBatch from(Tensor reps, std::vector<int> labels);
};

// ---- supervised loss ------------------------------------------------------------

struct CrossEntropyResult {
    double loss = 0.0;  // mean negative log-likelihood
    Tensor grad;        // gradient at probs, [B x S]
};

/// Mean negative log-likelihood of the true classes. Rows of probs are
/// expected to sum to 1. Throws std::out_of_range when a label exceeds the
/// class count.
CrossEntropyResult cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// ---- dissimilarity measures ------------------------------------------------------

struct DissimilarityResult {
    double value = 0.0;
    Tensor grad_a;
    Tensor grad_b;
};

/// SED: sum of squared differences. NMD: mean absolute difference. Angular:
/// arccos of the normalized inner product; throws std::domain_error on a
/// zero-norm vector.
DissimilarityResult dissimilarity(const Tensor& a, const Tensor& b, Dissimilarity measure);

/// Value-only form.
double dissimilarity_value(const Tensor& a, const Tensor& b, Dissimilarity measure);

// ---- mini-batch hint penalty -----------------------------------------------------

struct HintPenaltyResult {
    double value = 0.0;  // unweighted penalty
    Tensor grad;         // gradient at reps, [B x V]
};

/// Mini-batch penalty: average over classes with >= 2 rows of the per-class
/// average over ordered pairs (i, j != i) of the pairwise dissimilarity.
/// Classes with a single row contribute nothing and do not count toward the
/// class average. Gradient flows to both members of every pair.
HintPenaltyResult hint_penalty_batch(const RepresentationBatch& batch, Dissimilarity measure);

/// Value-only evaluation; uses closed forms for SED and NMD so large probe
/// sets stay cheap (pairwise loop for Angular). Agrees with
/// hint_penalty_batch up to floating-point reassociation.
double hint_penalty_value(const RepresentationBatch& batch, Dissimilarity measure);

// ---- combined objective -------------------------------------------------------------

struct ObjectiveValue {
    double supervised = 0.0;  // mean cross-entropy, unweighted
    double hint = 0.0;        // hint penalty at the tap layer, unweighted
    double total = 0.0;       // gamma * supervised + lambda * hint
};

/// Forward-only evaluation of the combined training objective on one batch.
ObjectiveValue full_objective(const NetworkSplit& net, const Tensor& batch,
                              const std::vector<int>& labels, const HintConfig& config);

}  // namespace classinv
