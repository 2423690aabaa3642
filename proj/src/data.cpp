#include "insgd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace insgd::data {

void Dataset::validate() const {
    if (labels.empty()) return;
    if (images.rank() != 4 || images.dim(0) != labels.size())
        throw FormatError("dataset has " + std::to_string(labels.size()) + " labels but images of shape " +
                          shape_str(images.shape()));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw FormatError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

Shape Dataset::sample_shape() const {
    if (images.rank() != 4) throw FormatError("dataset has no images");
    return Shape{images.dim(1), images.dim(2), images.dim(3)};
}

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
    const Shape s = sample_shape();
    const std::size_t stride = shape_numel(s);
    std::vector<double> out;
    out.reserve(indices.size() * stride);
    for (std::size_t idx : indices) {
        if (idx >= size()) throw std::out_of_range("dataset index out of range");
        auto src = images.data().subspan(idx * stride, stride);
        out.insert(out.end(), src.begin(), src.end());
    }
    return Tensor(Shape{indices.size(), s[0], s[1], s[2]}, std::move(out));
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) out.push_back(labels.at(idx));
    return out;
}

Dataset Dataset::select(const std::vector<std::size_t>& indices) const {
    Dataset d;
    d.classes = classes;
    if (indices.empty()) return d;
    d.images = gather_images(indices);
    d.labels = gather_labels(indices);
    return d;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 4) throw FormatError(path.string() + ": truncated IDX header");
    if (bytes[0] != 0 || bytes[1] != 0) throw FormatError(path.string() + ": bad IDX magic");
    if (bytes[2] != 0x08)
        throw FormatError(path.string() + ": unsupported IDX type byte " + std::to_string(bytes[2]));
    const std::size_t rank = bytes[3];
    if (rank == 0) throw FormatError(path.string() + ": IDX file with zero dimensions");
    const std::size_t header = 4 + 4 * rank;
    if (bytes.size() < header) throw FormatError(path.string() + ": truncated IDX header");
    IdxArray out;
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        const std::size_t o = 4 + 4 * d;
        const std::size_t extent = (std::size_t{bytes[o]} << 24) | (std::size_t{bytes[o + 1]} << 16) |
                                   (std::size_t{bytes[o + 2]} << 8) | std::size_t{bytes[o + 3]};
        if (extent == 0) throw FormatError(path.string() + ": IDX extent of zero");
        out.dims.push_back(extent);
        count *= extent;
    }
    if (bytes.size() < header + count)
        throw FormatError(path.string() + ": truncated IDX payload (" + std::to_string(bytes.size() - header) +
                          " of " + std::to_string(count) + " bytes)");
    if (bytes.size() > header + count) throw FormatError(path.string() + ": trailing bytes after IDX payload");
    out.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return out;
}

Tensor parse_idx(const std::filesystem::path& path) {
    IdxArray a = read_idx(path);
    std::vector<double> v(a.bytes.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.bytes[i] / 255.0;
    return Tensor(Shape(a.dims.begin(), a.dims.end()), std::move(v));
}

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
    Tensor img = parse_idx(images);
    IdxArray lab = read_idx(labels);
    if (img.rank() != 3) throw FormatError(images.string() + ": expected a 3-d image array");
    if (lab.dims.size() != 1 || lab.dims[0] != img.dim(0))
        throw FormatError(labels.string() + ": label count does not match image count");
    Dataset d;
    d.classes = 10;
    d.images = img.reshaped(Shape{img.dim(0), 1, img.dim(1), img.dim(2)});
    d.labels.assign(lab.bytes.begin(), lab.bytes.end());
    d.validate();
    return d;
}

namespace {
constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;
}

Dataset parse_cifar10_bin(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecord != 0)
        throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(kCifarRecord));
    const std::size_t n = bytes.size() / kCifarRecord;
    Dataset d;
    d.classes = 10;
    if (n == 0) return d;
    std::vector<double> pixels(n * 3072);
    d.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
        if (rec[0] >= 10) throw FormatError(path.string() + ": label " + std::to_string(rec[0]) + " in record " +
                                            std::to_string(r));
        d.labels[r] = rec[0];
        for (std::size_t i = 0; i < 3072; ++i) pixels[r * 3072 + i] = rec[1 + i] / 255.0;
    }
    d.images = Tensor(Shape{n, 3, 32, 32}, std::move(pixels));
    return d;
}

bool cifar10_available(const std::filesystem::path& dir) {
    if (!std::filesystem::is_regular_file(dir / "test_batch.bin")) return false;
    for (int i = 1; i <= 5; ++i)
        if (!std::filesystem::is_regular_file(dir / ("data_batch_" + std::to_string(i) + ".bin"))) return false;
    return true;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
    std::vector<Dataset> parts;
    for (int i = 1; i <= 5; ++i) parts.push_back(parse_cifar10_bin(dir / ("data_batch_" + std::to_string(i) + ".bin")));
    std::vector<double> pixels;
    Dataset train;
    train.classes = 10;
    for (auto& p : parts) {
        if (p.size() == 0) continue;
        pixels.insert(pixels.end(), p.images.data().begin(), p.images.data().end());
        train.labels.insert(train.labels.end(), p.labels.begin(), p.labels.end());
    }
    if (!train.labels.empty()) train.images = Tensor(Shape{train.labels.size(), 3, 32, 32}, std::move(pixels));
    return {std::move(train), parse_cifar10_bin(dir / "test_batch.bin")};
}

Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                   std::uint64_t seed, Shape sample_shape) {
    if (classes == 0 || per_class == 0 || dim == 0) throw std::invalid_argument("make_blobs: empty request");
    if (sample_shape.empty()) sample_shape = Shape{dim, 1, 1};
    if (sample_shape.size() != 3 || shape_numel(sample_shape) != dim)
        throw std::invalid_argument("make_blobs: sample shape must be 3-d with dim elements");
    Rng rng(seed);
    // Centers uniform in a cube that grows until the spacing constraint holds.
    std::vector<std::vector<double>> centers;
    double radius = std::max(1.0, separation);
    std::size_t attempts = 0;
    while (centers.size() < classes) {
        std::vector<double> c(dim);
        for (auto& v : c) v = rng.uniform(-radius, radius);
        bool ok = true;
        for (const auto& other : centers) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < dim; ++i) d2 += (c[i] - other[i]) * (c[i] - other[i]);
            if (std::sqrt(d2) < separation) {
                ok = false;
                break;
            }
        }
        if (ok) {
            centers.push_back(std::move(c));
        } else if (++attempts % 100 == 0) {
            radius *= 1.5;
        }
    }
    const std::size_t n = classes * per_class;
    std::vector<double> values(n * dim);
    Dataset d;
    d.classes = classes;
    d.labels.resize(n);
    for (std::size_t k = 0; k < classes; ++k)
        for (std::size_t j = 0; j < per_class; ++j) {
            const std::size_t row = k * per_class + j;
            d.labels[row] = static_cast<int>(k);
            for (std::size_t i = 0; i < dim; ++i) values[row * dim + i] = centers[k][i] + rng.normal();
        }
    d.images = Tensor(Shape{n, sample_shape[0], sample_shape[1], sample_shape[2]}, std::move(values));
    return d;
}

void AugmentSpec::validate(std::size_t channels, std::size_t height, std::size_t width) const {
    const std::size_t ch = crop_h ? crop_h : height, cw = crop_w ? crop_w : width;
    if (ch > height + 2 * pad || cw > width + 2 * pad) throw std::invalid_argument("augment: crop exceeds padded size");
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw std::invalid_argument("augment: hflip_prob outside [0, 1]");
    if (!mean.empty() && mean.size() != channels) throw std::invalid_argument("augment: mean size != channels");
    if (!stddev.empty() && stddev.size() != channels) throw std::invalid_argument("augment: std size != channels");
    for (double s : stddev)
        if (!(s > 0.0)) throw std::invalid_argument("augment: std must be > 0");
}

AugmentSpec AugmentSpec::cifar10_train() {
    return AugmentSpec{4, 32, 32, 0.5, {0.4914, 0.4822, 0.4465}, {0.2023, 0.1994, 0.2010}};
}

AugmentSpec AugmentSpec::cifar10_eval() {
    return AugmentSpec{0, 0, 0, 0.0, {0.4914, 0.4822, 0.4465}, {0.2023, 0.1994, 0.2010}};
}

Tensor augment(const Tensor& batch, const AugmentSpec& spec, Rng& rng, AugmentMode mode) {
    if (batch.rank() != 4) throw ShapeError("augment: expected [N,C,H,W], got " + shape_str(batch.shape()));
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    spec.validate(c, h, w);
    auto normalize = [&](Tensor& t) {
        const std::size_t plane = t.dim(2) * t.dim(3);
        for (std::size_t i = 0; i < t.dim(0); ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double m = spec.mean.empty() ? 0.0 : spec.mean[ch];
                const double s = spec.stddev.empty() ? 1.0 : spec.stddev[ch];
                double* p = t.data().data() + (i * c + ch) * plane;
                for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - m) / s;
            }
    };
    if (mode == AugmentMode::eval) {
        Tensor out = batch;
        normalize(out);
        return out;
    }
    const std::size_t ch = spec.crop_h ? spec.crop_h : h, cw = spec.crop_w ? spec.crop_w : w;
    const std::size_t ph = h + 2 * spec.pad, pw = w + 2 * spec.pad;
    Tensor out(Shape{n, c, ch, cw});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t oy = static_cast<std::size_t>(rng.below(ph - ch + 1));
        const std::size_t ox = static_cast<std::size_t>(rng.below(pw - cw + 1));
        const bool flip = rng.bernoulli(spec.hflip_prob);
        for (std::size_t chn = 0; chn < c; ++chn)
            for (std::size_t y = 0; y < ch; ++y)
                for (std::size_t x = 0; x < cw; ++x) {
                    // position in the zero-padded image
                    const std::size_t py = oy + y;
                    const std::size_t px = ox + (flip ? cw - 1 - x : x);
                    double v = 0.0;
                    if (py >= spec.pad && py < spec.pad + h && px >= spec.pad && px < spec.pad + w)
                        v = batch[((i * c + chn) * h + (py - spec.pad)) * w + (px - spec.pad)];
                    out[((i * c + chn) * ch + y) * cw + x] = v;
                }
    }
    normalize(out);
    return out;
}

Tensor denormalize(const Tensor& batch, const AugmentSpec& spec) {
    Tensor out = batch;
    const std::size_t c = batch.dim(1), plane = batch.dim(2) * batch.dim(3);
    for (std::size_t i = 0; i < batch.dim(0); ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double m = spec.mean.empty() ? 0.0 : spec.mean[ch];
            const double s = spec.stddev.empty() ? 1.0 : spec.stddev[ch];
            double* p = out.data().data() + (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) p[k] = p[k] * s + m;
        }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const Dataset& ds,
                                                                            std::size_t first_per_class,
                                                                            std::size_t second_per_class,
                                                                            std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(ds.classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> first, second;
    for (std::size_t k = 0; k < ds.classes; ++k) {
        auto& rows = by_class[k];
        if (rows.size() < first_per_class + second_per_class)
            throw std::invalid_argument("class " + std::to_string(k) + " has " + std::to_string(rows.size()) +
                                        " samples, need " + std::to_string(first_per_class + second_per_class));
        rng.shuffle(rows);
        first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(first_per_class));
        second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(first_per_class),
                      rows.begin() + static_cast<std::ptrdiff_t>(first_per_class + second_per_class));
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {std::move(first), std::move(second)};
}

std::pair<Dataset, Dataset> split_stratified(const Dataset& ds, std::size_t first_per_class,
                                             std::size_t second_per_class, std::uint64_t seed) {
    auto [a, b] = split_indices(ds, first_per_class, second_per_class, seed);
    return {ds.select(a), ds.select(b)};
}

Dataset subset(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed) {
    return ds.select(split_indices(ds, n_per_class, 0, seed).first);
}

}  // namespace insgd::data
