#ifndef FITPATH_DATA_HPP
#define FITPATH_DATA_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fitpath/tensor.hpp"

namespace fitpath {

struct Dataset {
    Tensor images;            // [N,C,H,W] for image data, [N,D] for vectors
    std::vector<int> labels;  // class ids in [0, num_classes)
    int num_classes = 0;

    std::int64_t size() const { return images.numel() == 0 ? 0 : images.extent(0); }
};

// MNIST IDX loader. Accepts raw or gzip-compressed files under `dir` with
// the standard names (train-images-idx3-ubyte[.gz], ...). Pixels are scaled
// to [0,1] and normalized with mean 0.1307, std 0.3081. Throws DataError on
// bad magic numbers or truncated payloads.
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);

// Deterministic Gaussian clusters for fast tests: K classes, N samples,
// labels assigned round-robin (balanced within one sample). Cluster centers
// are mutually orthogonal directions at pairwise distance `separation`
// (unit-variance noise), so separation >= 6 is easily linearly separable.
Dataset synthetic_blobs(int num_classes, std::int64_t n, std::int64_t dim, std::uint64_t seed,
                        double separation = 8.0);

// Reinterpret vector data as image data, e.g. [N,784] -> [N,1,28,28].
Dataset reshape_images(Dataset ds, const Shape& sample_shape);

struct Batch {
    Tensor x;
    std::vector<int> y;
};

// One epoch of batches covering every sample exactly once, in an order
// shuffled deterministically by `seed`. Batches are gathered on demand.
class Batches {
public:
    Batches(const Dataset& dataset, std::int64_t batch_size, std::uint64_t seed);

    std::int64_t count() const { return static_cast<std::int64_t>(offsets_.size()) - 1; }
    Batch get(std::int64_t i) const;

private:
    const Dataset* dataset_;
    std::vector<std::int64_t> order_;
    std::vector<std::int64_t> offsets_;  // batch i covers order_[offsets_[i], offsets_[i+1])
};

// First `n` samples after a seeded shuffle; used as the Fisher calibration
// set. Returns the whole dataset when it has fewer than n samples.
Dataset calibration_subset(const Dataset& dataset, std::int64_t n, std::uint64_t seed);

}  // namespace fitpath

#endif
