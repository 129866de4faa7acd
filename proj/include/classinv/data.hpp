#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "classinv/tensor.hpp"

namespace classinv {

/// Malformed IDX/CIFAR input; carries the byte offset of the problem.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_ = 0;
};

// ---- IDX container -----------------------------------------------------------------

struct IdxData {
    std::vector<std::size_t> shape;  // [N] for labels, [N x H x W] for images
    std::vector<std::uint8_t> bytes;

    bool is_images() const { return shape.size() == 3; }
};

/// Parses an IDX file: big-endian magic (0x00000803 images, 0x00000801
/// labels), big-endian dimension sizes, raw uint8 payload.
IdxData load_idx(const std::string& path);
/// As load_idx but rejects files of the wrong kind.
IdxData load_idx_images(const std::string& path);
IdxData load_idx_labels(const std::string& path);

void save_idx_images(const std::string& path, std::size_t n, std::size_t h, std::size_t w,
                     const std::vector<std::uint8_t>& pixels);
void save_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// ---- datasets ------------------------------------------------------------------------

/// Labeled image set. Pixels are stored as the quantized bytes the IDX
/// container carries; accessors materialize float64 values in [0, 1].
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels, std::size_t h,
            std::size_t w, std::string split);

    std::size_t size() const { return labels_.size(); }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    const std::string& split() const { return split_; }

    int label(std::size_t i) const { return labels_[i]; }
    /// [B x 1 x H x W] batch in [0, 1].
    Tensor images(const std::vector<std::size_t>& rows) const;
    std::vector<int> labels_of(const std::vector<std::size_t>& rows) const;
    /// Whole-set labels as ints.
    std::vector<int> all_labels() const;

    const std::vector<std::uint8_t>& raw_pixels() const { return pixels_; }
    const std::vector<std::uint8_t>& raw_labels() const { return labels_; }

private:
    std::vector<std::uint8_t> pixels_;
    std::vector<std::uint8_t> labels_;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::string split_;
};

struct Provenance {
    std::string benchmark;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> parameters;
    std::map<std::string, std::string> source_hashes;  // filename -> fnv1a64 hex
};

struct Benchmark {
    Dataset train;
    Dataset valid;
    Dataset test;
    Provenance provenance;
};

// ---- benchmark synthesis ------------------------------------------------------------------

/// Standard file names expected inside the raw data directory.
extern const char* const kMnistTrainImages;
extern const char* const kMnistTrainLabels;
extern const char* const kMnistTestImages;
extern const char* const kMnistTestLabels;

/// Deterministic 50000/10000/10000 split: the 60000-image train archive is
/// permuted with the seed, the official test set stays the test split.
Benchmark make_mnist_std(const std::string& raw_dir, std::uint64_t seed);

/// 100000/20000/50000 samples; each pairs a source digit from the matching
/// mnist_std split with a fresh smoothed-noise background.
Benchmark make_mnist_noise(const std::string& raw_dir, std::uint64_t seed);

/// As make_mnist_noise but backgrounds come from disjoint CIFAR-10 pools:
/// train from a fixed 40000-image subset of CIFAR train (batches 1..4), valid
/// from the remaining 10000 (batch 5), test from the CIFAR test batch.
Benchmark make_mnist_img(const std::string& raw_dir, std::uint64_t seed);

struct SubsetConfig {
    std::size_t size = 0;
    std::uint64_t seed = 0;
};

/// Seeded class-stratified subsample preserving label proportions within one
/// sample per class; selected rows keep their original order.
Dataset subset(const Dataset& dataset, const SubsetConfig& config);

/// Rows of `dataset` whose label is in `classes`, in original order.
Dataset filter_classes(const Dataset& dataset, const std::vector<int>& classes);

// ---- persistence ---------------------------------------------------------------------------

/// Writes three IDX pairs (train/valid/test) plus provenance.json.
void write_benchmark(const Benchmark& benchmark, const std::string& out_dir);
/// Loads what write_benchmark produced.
Benchmark load_benchmark(const std::string& dir);

// ---- synthesis building blocks (exposed for tests) ----------------------------------------

/// One CIFAR-10 record converted to a 28x28 grayscale image in [0, 1]:
/// fixed luma weights 0.299/0.587/0.114, 32 -> 28 center crop.
std::array<double, 784> cifar_record_to_gray28(const std::uint8_t* record);

/// Reads a CIFAR-10 binary batch (3073-byte records) and returns the records.
std::vector<std::array<std::uint8_t, 3073>> read_cifar_batch(const std::string& path);

void fill_uniform_noise(std::mt19937_64& rng, double* buf, std::size_t n);
/// 5x5 box filter with coordinate clamping at the edges, 28x28 planes.
void box_filter_5x5_28(const double* in, double* out);

/// Per-sample deterministic generator; independent of synthesis order.
std::mt19937_64 sample_rng(std::uint64_t seed, const std::string& split, std::uint64_t index);

/// FNV-1a 64-bit of a file's bytes, hex-encoded.
std::string file_fnv1a_hex(const std::string& path);

}  // namespace classinv
