#include "fitpath/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <zlib.h>

#include "fitpath/errors.hpp"

namespace fitpath {

namespace {

constexpr double kMnistMean = 0.1307;
constexpr double kMnistStd = 0.3081;

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("data: cannot read '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in) {
    z_stream strm{};
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK) throw DataError("data: zlib init failed");
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 20);
    strm.next_in = const_cast<Bytef*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = chunk.data();
        strm.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw DataError("data: corrupt gzip stream");
        }
        out.insert(out.end(), chunk.begin(), chunk.begin() + (chunk.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

std::vector<std::uint8_t> read_maybe_gz(const std::string& path) {
    auto buf = read_file(path);
    if (buf.size() >= 2 && buf[0] == 0x1f && buf[1] == 0x8b) return gunzip(buf);
    return buf;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

std::string find_idx_file(const std::string& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    const std::string candidates[] = {stem, stem + ".gz"};
    for (const auto& c : candidates) {
        if (fs::exists(fs::path(dir) / c)) return (fs::path(dir) / c).string();
    }
    throw DataError("data: '" + stem + "' not found under '" + dir + "'");
}

Tensor load_idx_images(const std::string& path) {
    auto buf = read_maybe_gz(path);
    if (buf.size() < 16) throw DataError("data: truncated IDX header in '" + path + "'");
    const auto magic = be32(buf.data());
    if (magic != 2051) {
        throw DataError("data: bad magic " + std::to_string(magic) + " in '" + path +
                        "' (expected 2051)");
    }
    const std::int64_t n = be32(buf.data() + 4);
    const std::int64_t rows = be32(buf.data() + 8);
    const std::int64_t cols = be32(buf.data() + 12);
    if (static_cast<std::int64_t>(buf.size()) < 16 + n * rows * cols) {
        throw DataError("data: truncated IDX payload in '" + path + "'");
    }
    Tensor images({n, 1, rows, cols});
    for (std::int64_t i = 0; i < n * rows * cols; ++i) {
        const double scaled = static_cast<double>(buf[16 + static_cast<size_t>(i)]) / 255.0;
        images[i] = (scaled - kMnistMean) / kMnistStd;
    }
    return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
    auto buf = read_maybe_gz(path);
    if (buf.size() < 8) throw DataError("data: truncated IDX header in '" + path + "'");
    const auto magic = be32(buf.data());
    if (magic != 2049) {
        throw DataError("data: bad magic " + std::to_string(magic) + " in '" + path +
                        "' (expected 2049)");
    }
    const std::int64_t n = be32(buf.data() + 4);
    if (static_cast<std::int64_t>(buf.size()) < 8 + n) {
        throw DataError("data: truncated IDX payload in '" + path + "'");
    }
    std::vector<int> labels(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = buf[8 + static_cast<size_t>(i)];
    return labels;
}

}  // namespace

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
    Dataset train, test;
    train.images = load_idx_images(find_idx_file(dir, "train-images-idx3-ubyte"));
    train.labels = load_idx_labels(find_idx_file(dir, "train-labels-idx1-ubyte"));
    test.images = load_idx_images(find_idx_file(dir, "t10k-images-idx3-ubyte"));
    test.labels = load_idx_labels(find_idx_file(dir, "t10k-labels-idx1-ubyte"));
    train.num_classes = test.num_classes = 10;
    if (train.images.extent(0) != static_cast<std::int64_t>(train.labels.size()) ||
        test.images.extent(0) != static_cast<std::int64_t>(test.labels.size())) {
        throw DataError("data: image/label counts disagree under '" + dir + "'");
    }
    return {std::move(train), std::move(test)};
}

Dataset synthetic_blobs(int num_classes, std::int64_t n, std::int64_t dim, std::uint64_t seed,
                        double separation) {
    if (num_classes < 2) throw ConfigError("synthetic_blobs: need K >= 2 classes");
    if (n < num_classes) throw ConfigError("synthetic_blobs: need N >= K samples");
    if (dim < 1) throw ConfigError("synthetic_blobs: need dim >= 1");

    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Cluster centers: orthonormal random directions when dim allows, so all
    // pairwise center distances equal `separation`; otherwise plain
    // normalized directions.
    std::vector<std::vector<double>> centers(static_cast<size_t>(num_classes),
                                             std::vector<double>(static_cast<size_t>(dim)));
    for (auto& c : centers) {
        for (auto& x : c) x = normal(rng);
        if (dim >= num_classes) {
            for (const auto& prev : centers) {
                if (&prev == &c) break;
                double dot = 0.0;
                for (std::int64_t i = 0; i < dim; ++i)
                    dot += prev[static_cast<size_t>(i)] * c[static_cast<size_t>(i)];
                for (std::int64_t i = 0; i < dim; ++i)
                    c[static_cast<size_t>(i)] -= dot * prev[static_cast<size_t>(i)];
            }
        }
        double norm = 0.0;
        for (double x : c) norm += x * x;
        norm = std::sqrt(norm);
        const double target = separation / std::sqrt(2.0);
        for (auto& x : c) x *= target / norm;
    }

    Dataset ds;
    ds.num_classes = num_classes;
    ds.images = Tensor({n, dim});
    ds.labels.resize(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % num_classes);
        ds.labels[static_cast<size_t>(i)] = label;
        const auto& c = centers[static_cast<size_t>(label)];
        for (std::int64_t d = 0; d < dim; ++d) {
            ds.images[i * dim + d] = c[static_cast<size_t>(d)] + normal(rng);
        }
    }
    return ds;
}

Dataset reshape_images(Dataset ds, const Shape& sample_shape) {
    Shape full = sample_shape;
    full.insert(full.begin(), ds.size());
    ds.images = ds.images.reshaped(full);
    return ds;
}

Batches::Batches(const Dataset& dataset, std::int64_t batch_size, std::uint64_t seed)
    : dataset_(&dataset) {
    if (batch_size < 1) throw ConfigError("batches: batch size must be >= 1");
    const std::int64_t n = dataset.size();
    order_.resize(static_cast<size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng = make_rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
    for (std::int64_t off = 0; off < n; off += batch_size) offsets_.push_back(off);
    offsets_.push_back(n);
}

Batch Batches::get(std::int64_t i) const {
    const auto lo = offsets_[static_cast<size_t>(i)], hi = offsets_[static_cast<size_t>(i) + 1];
    const std::int64_t stride = dataset_->images.numel() / dataset_->images.extent(0);
    Shape shape = dataset_->images.shape();
    shape[0] = hi - lo;
    Batch b;
    b.x = Tensor(std::move(shape));
    b.y.resize(static_cast<size_t>(hi - lo));
    for (std::int64_t k = lo; k < hi; ++k) {
        const auto src = order_[static_cast<size_t>(k)];
        std::memcpy(b.x.data().data() + (k - lo) * stride,
                    dataset_->images.data().data() + src * stride,
                    sizeof(double) * static_cast<size_t>(stride));
        b.y[static_cast<size_t>(k - lo)] = dataset_->labels[static_cast<size_t>(src)];
    }
    return b;
}

Dataset calibration_subset(const Dataset& dataset, std::int64_t n, std::uint64_t seed) {
    const std::int64_t take = std::min(n, dataset.size());
    std::vector<std::int64_t> order(static_cast<size_t>(dataset.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::int64_t stride = dataset.images.numel() / dataset.images.extent(0);
    Shape shape = dataset.images.shape();
    shape[0] = take;
    Dataset out;
    out.num_classes = dataset.num_classes;
    out.images = Tensor(std::move(shape));
    out.labels.resize(static_cast<size_t>(take));
    for (std::int64_t i = 0; i < take; ++i) {
        const auto src = order[static_cast<size_t>(i)];
        std::memcpy(out.images.data().data() + i * stride,
                    dataset.images.data().data() + src * stride,
                    sizeof(double) * static_cast<size_t>(stride));
        out.labels[static_cast<size_t>(i)] = dataset.labels[static_cast<size_t>(src)];
    }
    return out;
}

}  // namespace fitpath
