#include "classinv/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace classinv {

namespace fs = std::filesystem;

const char* const kMnistTrainImages = "train-images-idx3-ubyte";
const char* const kMnistTrainLabels = "train-labels-idx1-ubyte";
const char* const kMnistTestImages = "t10k-images-idx3-ubyte";
const char* const kMnistTestLabels = "t10k-labels-idx1-ubyte";

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& path) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(path + ": truncated header", offset);
    }
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

IdxData load_idx(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    const std::uint32_t magic = read_be32(bytes, 0, path);
    std::size_t rank = 0;
    if (magic == kImagesMagic) {
        rank = 3;
    } else if (magic == kLabelsMagic) {
        rank = 1;
    } else {
        throw FormatError(path + ": bad IDX magic", 0);
    }
    IdxData data;
    data.shape.resize(rank);
    std::size_t offset = 4;
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        data.shape[i] = read_be32(bytes, offset, path);
        total *= data.shape[i];
        offset += 4;
    }
    if (bytes.size() - offset != total) {
        throw FormatError(path + ": payload size " + std::to_string(bytes.size() - offset) +
                              " does not match dimensions (" + std::to_string(total) + ")",
                          offset);
    }
    data.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return data;
}

IdxData load_idx_images(const std::string& path) {
    IdxData data = load_idx(path);
    if (!data.is_images()) throw FormatError(path + ": expected an image file, got labels", 0);
    return data;
}

IdxData load_idx_labels(const std::string& path) {
    IdxData data = load_idx(path);
    if (data.is_images()) throw FormatError(path + ": expected a label file, got images", 0);
    return data;
}

void save_idx_images(const std::string& path, std::size_t n, std::size_t h, std::size_t w,
                     const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != n * h * w) {
        throw std::invalid_argument("save_idx_images: " + std::to_string(pixels.size()) +
                                    " bytes for " + std::to_string(n * h * w) + " pixels");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_be32(out, kImagesMagic);
    write_be32(out, static_cast<std::uint32_t>(n));
    write_be32(out, static_cast<std::uint32_t>(h));
    write_be32(out, static_cast<std::uint32_t>(w));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

void save_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_be32(out, kLabelsMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

// ---- Dataset -----------------------------------------------------------------------

Dataset::Dataset(std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels,
                 std::size_t h, std::size_t w, std::string split)
    : pixels_(std::move(pixels)), labels_(std::move(labels)), height_(h), width_(w),
      split_(std::move(split)) {
    if (pixels_.size() != labels_.size() * height_ * width_) {
        throw std::invalid_argument("Dataset: " + std::to_string(pixels_.size()) +
                                    " pixels for " + std::to_string(labels_.size()) + " labels");
    }
    for (std::uint8_t label : labels_) {
        if (label > 9) {
            throw std::invalid_argument("Dataset: label " + std::to_string(label) +
                                        " outside 0..9");
        }
    }
}

Tensor Dataset::images(const std::vector<std::size_t>& rows) const {
    const std::size_t plane = height_ * width_;
    Tensor out({rows.size(), 1, height_, width_});
    double* dst = out.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::uint8_t* src = pixels_.data() + rows[i] * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[i * plane + p] = src[p] / 255.0;
    }
    return out;
}

std::vector<int> Dataset::labels_of(const std::vector<std::size_t>& rows) const {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels_[rows[i]];
    return out;
}

std::vector<int> Dataset::all_labels() const {
    return std::vector<int>(labels_.begin(), labels_.end());
}

// ---- synthesis helpers ------------------------------------------------------------------

namespace {

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

struct RawMnist {
    IdxData train_images, train_labels, test_images, test_labels;
    std::map<std::string, std::string> hashes;
};

RawMnist load_raw_mnist(const std::string& raw_dir) {
    RawMnist raw;
    const auto path = [&](const char* name) { return (fs::path(raw_dir) / name).string(); };
    for (const char* name :
         {kMnistTrainImages, kMnistTrainLabels, kMnistTestImages, kMnistTestLabels}) {
        if (!fs::exists(path(name))) {
            throw std::runtime_error("missing MNIST file: " + path(name));
        }
    }
    raw.train_images = load_idx_images(path(kMnistTrainImages));
    raw.train_labels = load_idx_labels(path(kMnistTrainLabels));
    raw.test_images = load_idx_images(path(kMnistTestImages));
    raw.test_labels = load_idx_labels(path(kMnistTestLabels));
    if (raw.train_images.shape[0] != raw.train_labels.shape[0] ||
        raw.test_images.shape[0] != raw.test_labels.shape[0]) {
        throw std::runtime_error("MNIST image/label counts disagree in " + raw_dir);
    }
    for (const char* name :
         {kMnistTrainImages, kMnistTrainLabels, kMnistTestImages, kMnistTestLabels}) {
        raw.hashes[name] = file_fnv1a_hex(path(name));
    }
    return raw;
}

Dataset dataset_from_indices(const IdxData& images, const IdxData& labels,
                             const std::vector<std::size_t>& rows, const std::string& split) {
    const std::size_t plane = images.shape[1] * images.shape[2];
    std::vector<std::uint8_t> pixels(rows.size() * plane);
    std::vector<std::uint8_t> labs(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(images.bytes.data() + rows[i] * plane, plane, pixels.data() + i * plane);
        labs[i] = labels.bytes[rows[i]];
    }
    return Dataset(std::move(pixels), std::move(labs), images.shape[1], images.shape[2], split);
}

}  // namespace

std::string file_fnv1a_hex(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::mt19937_64 sample_rng(std::uint64_t seed, const std::string& split, std::uint64_t index) {
    const std::uint64_t salt = fnv1a64(split.data(), split.size());
    return std::mt19937_64(splitmix64(seed ^ splitmix64(salt ^ index)));
}

void fill_uniform_noise(std::mt19937_64& rng, double* buf, std::size_t n) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) buf[i] = dist(rng);
}

void box_filter_5x5_28(const double* in, double* out) {
    constexpr int side = 28, radius = 2;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double sum = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = std::clamp(y + dy, 0, side - 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int xx = std::clamp(x + dx, 0, side - 1);
                    sum += in[yy * side + xx];
                }
            }
            out[y * side + x] = sum / 25.0;
        }
    }
}

std::array<double, 784> cifar_record_to_gray28(const std::uint8_t* record) {
    // record: label byte + 1024 red + 1024 green + 1024 blue, 32x32 row-major
    std::array<double, 784> out{};
    const std::uint8_t* r = record + 1;
    const std::uint8_t* g = r + 1024;
    const std::uint8_t* b = g + 1024;
    for (std::size_t y = 0; y < 28; ++y) {
        for (std::size_t x = 0; x < 28; ++x) {
            const std::size_t src = (y + 2) * 32 + (x + 2);
            const double luma = 0.299 * r[src] + 0.587 * g[src] + 0.114 * b[src];
            out[y * 28 + x] = luma / 255.0;
        }
    }
    return out;
}

std::vector<std::array<std::uint8_t, 3073>> read_cifar_batch(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    if (bytes.empty() || bytes.size() % 3073 != 0) {
        throw FormatError(path + ": CIFAR batch size must be a multiple of 3073 bytes",
                          bytes.size() - bytes.size() % 3073);
    }
    std::vector<std::array<std::uint8_t, 3073>> records(bytes.size() / 3073);
    for (std::size_t i = 0; i < records.size(); ++i) {
        std::copy_n(bytes.data() + i * 3073, 3073, records[i].data());
    }
    return records;
}

// ---- benchmarks ------------------------------------------------------------------------

Benchmark make_mnist_std(const std::string& raw_dir, std::uint64_t seed) {
    const RawMnist raw = load_raw_mnist(raw_dir);
    const std::size_t n = raw.train_images.shape[0];
    if (n != 60000) {
        throw std::runtime_error("mnist-std: expected 60000 train images, got " +
                                 std::to_string(n));
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(splitmix64(seed));
    std::shuffle(perm.begin(), perm.end(), rng);

    const std::vector<std::size_t> train_rows(perm.begin(), perm.begin() + 50000);
    const std::vector<std::size_t> valid_rows(perm.begin() + 50000, perm.end());
    std::vector<std::size_t> test_rows(raw.test_images.shape[0]);
    std::iota(test_rows.begin(), test_rows.end(), std::size_t{0});

    Benchmark bench;
    bench.train = dataset_from_indices(raw.train_images, raw.train_labels, train_rows, "train");
    bench.valid = dataset_from_indices(raw.train_images, raw.train_labels, valid_rows, "valid");
    bench.test = dataset_from_indices(raw.test_images, raw.test_labels, test_rows, "test");
    bench.provenance.benchmark = "mnist-std";
    bench.provenance.seed = seed;
    bench.provenance.source_hashes = raw.hashes;
    return bench;
}

namespace {

// Composites digits over per-sample backgrounds; target counts are reached by
// cycling through the source split (each digit reused the same number of
// times), backgrounds are fresh per sample.
Dataset composite_split(const Dataset& source, std::size_t target, std::uint64_t seed,
                        const std::string& split, const std::string& benchmark,
                        const std::vector<std::array<std::uint8_t, 3073>>* background_pool) {
    constexpr std::size_t plane = 784;
    std::vector<std::uint8_t> pixels(target * plane);
    std::vector<std::uint8_t> labels(target);
    const std::string salt = benchmark + "/" + split;
    double noise[plane];
    double background[plane];
    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t src = i % source.size();
        std::mt19937_64 rng = sample_rng(seed, salt, i);
        if (background_pool != nullptr) {
            std::uniform_int_distribution<std::size_t> pick(0, background_pool->size() - 1);
            const auto& record = (*background_pool)[pick(rng)];
            const std::array<double, plane> gray = cifar_record_to_gray28(record.data());
            std::copy(gray.begin(), gray.end(), background);
        } else {
            fill_uniform_noise(rng, noise, plane);
            box_filter_5x5_28(noise, background);
        }
        const std::uint8_t* digit = source.raw_pixels().data() + src * plane;
        std::uint8_t* dst = pixels.data() + i * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            const double value = std::max(digit[p] / 255.0, background[p]);
            dst[p] = static_cast<std::uint8_t>(std::lround(value * 255.0));
        }
        labels[i] = static_cast<std::uint8_t>(source.label(src));
    }
    return Dataset(std::move(pixels), std::move(labels), 28, 28, split);
}

}  // namespace

Benchmark make_mnist_noise(const std::string& raw_dir, std::uint64_t seed) {
    const Benchmark base = make_mnist_std(raw_dir, seed);
    Benchmark bench;
    bench.train = composite_split(base.train, 100000, seed, "train", "mnist-noise", nullptr);
    bench.valid = composite_split(base.valid, 20000, seed, "valid", "mnist-noise", nullptr);
    bench.test = composite_split(base.test, 50000, seed, "test", "mnist-noise", nullptr);
    bench.provenance.benchmark = "mnist-noise";
    bench.provenance.seed = seed;
    bench.provenance.parameters = {{"noise", "uniform"},
                                   {"filter", "box5x5"},
                                   {"composite", "max"}};
    bench.provenance.source_hashes = base.provenance.source_hashes;
    return bench;
}

Benchmark make_mnist_img(const std::string& raw_dir, std::uint64_t seed) {
    const auto cifar_path = [&](const std::string& name) {
        return (fs::path(raw_dir) / "cifar-10-batches-bin" / name).string();
    };
    std::vector<std::string> missing;
    std::vector<std::string> batch_names;
    for (int i = 1; i <= 5; ++i) batch_names.push_back("data_batch_" + std::to_string(i) + ".bin");
    batch_names.push_back("test_batch.bin");
    for (const std::string& name : batch_names) {
        if (!fs::exists(cifar_path(name))) missing.push_back(cifar_path(name));
    }
    if (!missing.empty()) {
        std::string list;
        for (const std::string& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw std::runtime_error("missing CIFAR-10 files: " + list);
    }

    // Fixed pools: batches 1..4 back the train split, batch 5 the validation
    // split, the test batch the test split.
    std::vector<std::array<std::uint8_t, 3073>> train_pool;
    for (int i = 1; i <= 4; ++i) {
        auto records = read_cifar_batch(cifar_path("data_batch_" + std::to_string(i) + ".bin"));
        train_pool.insert(train_pool.end(), records.begin(), records.end());
    }
    const auto valid_pool = read_cifar_batch(cifar_path("data_batch_5.bin"));
    const auto test_pool = read_cifar_batch(cifar_path("test_batch.bin"));

    const Benchmark base = make_mnist_std(raw_dir, seed);
    Benchmark bench;
    bench.train = composite_split(base.train, 100000, seed, "train", "mnist-img", &train_pool);
    bench.valid = composite_split(base.valid, 20000, seed, "valid", "mnist-img", &valid_pool);
    bench.test = composite_split(base.test, 50000, seed, "test", "mnist-img", &test_pool);
    bench.provenance.benchmark = "mnist-img";
    bench.provenance.seed = seed;
    bench.provenance.parameters = {{"background", "cifar10-gray-crop28"}, {"composite", "max"}};
    bench.provenance.source_hashes = base.provenance.source_hashes;
    for (const std::string& name : batch_names) {
        bench.provenance.source_hashes[name] = file_fnv1a_hex(cifar_path(name));
    }
    return bench;
}

Dataset subset(const Dataset& dataset, const SubsetConfig& config) {
    const std::size_t n = dataset.size();
    if (config.size > n) {
        throw std::invalid_argument("subset: size " + std::to_string(config.size) +
                                    " exceeds dataset size " + std::to_string(n));
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[dataset.label(i)].push_back(i);

    // Largest-remainder quotas keep per-class proportions within one sample.
    std::vector<std::pair<int, double>> fractional;
    std::map<int, std::size_t> take;
    std::size_t assigned = 0;
    for (const auto& [cls, rows] : by_class) {
        const double quota =
            static_cast<double>(config.size) * static_cast<double>(rows.size()) /
            static_cast<double>(n);
        const std::size_t base = static_cast<std::size_t>(quota);
        take[cls] = base;
        assigned += base;
        fractional.emplace_back(cls, quota - static_cast<double>(base));
    }
    std::sort(fractional.begin(), fractional.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (std::size_t i = 0; assigned < config.size; ++i, ++assigned) {
        ++take[fractional[i % fractional.size()].first];
    }

    std::mt19937_64 rng(splitmix64(config.seed));
    std::vector<std::size_t> chosen;
    chosen.reserve(config.size);
    for (auto& [cls, rows] : by_class) {
        std::shuffle(rows.begin(), rows.end(), rng);
        chosen.insert(chosen.end(), rows.begin(),
                      rows.begin() + static_cast<std::ptrdiff_t>(std::min(take[cls],
                                                                          rows.size())));
    }
    std::sort(chosen.begin(), chosen.end());

    const std::size_t plane = dataset.height() * dataset.width();
    std::vector<std::uint8_t> pixels(chosen.size() * plane);
    std::vector<std::uint8_t> labels(chosen.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        std::copy_n(dataset.raw_pixels().data() + chosen[i] * plane, plane,
                    pixels.data() + i * plane);
        labels[i] = static_cast<std::uint8_t>(dataset.label(chosen[i]));
    }
    return Dataset(std::move(pixels), std::move(labels), dataset.height(), dataset.width(),
                   dataset.split());
}

Dataset filter_classes(const Dataset& dataset, const std::vector<int>& classes) {
    const std::size_t plane = dataset.height() * dataset.width();
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (std::find(classes.begin(), classes.end(), dataset.label(i)) == classes.end()) {
            continue;
        }
        const std::uint8_t* src = dataset.raw_pixels().data() + i * plane;
        pixels.insert(pixels.end(), src, src + plane);
        labels.push_back(static_cast<std::uint8_t>(dataset.label(i)));
    }
    return Dataset(std::move(pixels), std::move(labels), dataset.height(), dataset.width(),
                   dataset.split());
}

// ---- persistence ----------------------------------------------------------------------

namespace {

void write_split(const Dataset& split, const fs::path& dir, const std::string& name) {
    save_idx_images((dir / (name + "-images-idx3-ubyte")).string(), split.size(),
                    split.height(), split.width(), split.raw_pixels());
    save_idx_labels((dir / (name + "-labels-idx1-ubyte")).string(), split.raw_labels());
}

Dataset read_split(const fs::path& dir, const std::string& name) {
    const IdxData images = load_idx_images((dir / (name + "-images-idx3-ubyte")).string());
    const IdxData labels = load_idx_labels((dir / (name + "-labels-idx1-ubyte")).string());
    if (images.shape[0] != labels.shape[0]) {
        throw std::runtime_error("split " + name + ": image/label counts disagree");
    }
    return Dataset(images.bytes, labels.bytes, images.shape[1], images.shape[2], name);
}

}  // namespace

void write_benchmark(const Benchmark& benchmark, const std::string& out_dir) {
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_split(benchmark.train, dir, "train");
    write_split(benchmark.valid, dir, "valid");
    write_split(benchmark.test, dir, "test");

    nlohmann::json j;
    j["benchmark"] = benchmark.provenance.benchmark;
    j["seed"] = benchmark.provenance.seed;
    j["parameters"] = benchmark.provenance.parameters;
    j["sources"] = benchmark.provenance.source_hashes;
    std::ofstream out(dir / "provenance.json");
    out << j.dump(2) << '\n';
}

Benchmark load_benchmark(const std::string& dir) {
    const fs::path path(dir);
    Benchmark bench;
    bench.train = read_split(path, "train");
    bench.valid = read_split(path, "valid");
    bench.test = read_split(path, "test");
    const fs::path sidecar = path / "provenance.json";
    if (fs::exists(sidecar)) {
        std::ifstream in(sidecar);
        nlohmann::json j;
        in >> j;
        bench.provenance.benchmark = j.value("benchmark", "");
        bench.provenance.seed = j.value("seed", 0ull);
        if (j.contains("parameters")) {
            bench.provenance.parameters =
                j["parameters"].get<std::map<std::string, std::string>>();
        }
        if (j.contains("sources")) {
            bench.provenance.source_hashes =
                j["sources"].get<std::map<std::string, std::string>>();
        }
    }
    return bench;
}

}  // namespace classinv
