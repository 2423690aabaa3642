#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "insgd/tensor.hpp"

namespace insgd::data {

// Malformed or unreadable dataset file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Tensor images;            // [N, C, H, W]
    std::vector<int> labels;  // N values in [0, classes)
    std::size_t classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    // Checks N agreement and label range; throws FormatError.
    void validate() const;
    // Rows `indices` as a new dataset (an empty selection gives size 0).
    Dataset select(const std::vector<std::size_t>& indices) const;
    // Images of the given rows stacked into [k, C, H, W].
    Tensor gather_images(std::span<const std::size_t> indices) const;
    std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
    Shape sample_shape() const;
};

// Raw IDX container with unsigned-byte payload.
struct IdxArray {
    std::vector<std::size_t> dims;
    std::vector<std::uint8_t> bytes;
};

IdxArray read_idx(const std::filesystem::path& path);
// IDX payload scaled to [0, 1].
Tensor parse_idx(const std::filesystem::path& path);
// MNIST image and label files as [N, 1, 28, 28] with 10 classes.
Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);

// One CIFAR-10 binary batch file: records of 1 label byte + 3072 pixel bytes.
Dataset parse_cifar10_bin(const std::filesystem::path& path);
// data_batch_1..5.bin (train) and test_batch.bin (test) from `dir`.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);
bool cifar10_available(const std::filesystem::path& dir);

// Gaussian clusters with unit variance around random centers whose pairwise
// distance is at least `separation`. Samples have shape [dim, 1, 1] unless
// `sample_shape` is given (its element count must equal dim).
Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                   std::uint64_t seed, Shape sample_shape = {});

struct AugmentSpec {
    std::size_t pad = 0;
    std::size_t crop_h = 0;  // 0 means the input height
    std::size_t crop_w = 0;
    double hflip_prob = 0.0;
    std::vector<double> mean;  // per channel; empty means 0
    std::vector<double> stddev;  // per channel; empty means 1

    void validate(std::size_t channels, std::size_t height, std::size_t width) const;
    static AugmentSpec cifar10_train();
    static AugmentSpec cifar10_eval();
};

enum class AugmentMode { train, eval };

// train: zero-pad, random crop, random horizontal flip, normalize.
// eval: normalize only.
Tensor augment(const Tensor& batch, const AugmentSpec& spec, Rng& rng, AugmentMode mode);
// Inverse of the normalization step.
Tensor denormalize(const Tensor& batch, const AugmentSpec& spec);

// Stratified sample of n_per_class rows per class, deterministic by seed.
Dataset subset(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed);
// Two disjoint stratified samples drawn from one shuffled order per class.
std::pair<Dataset, Dataset> split_stratified(const Dataset& ds, std::size_t first_per_class,
                                             std::size_t second_per_class, std::uint64_t seed);
// Row indices used by split_stratified, exposed for disjointness checks.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const Dataset& ds,
                                                                            std::size_t first_per_class,
                                                                            std::size_t second_per_class,
                                                                            std::uint64_t seed);

}  // namespace insgd::data
