#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "insgd/data.hpp"
#include "insgd/nn.hpp"
#include "insgd/optim.hpp"

using namespace insgd;
using namespace insgd::data;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "insgd_data_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> idx_header(std::vector<std::uint32_t> dims) {
    std::vector<std::uint8_t> b{0, 0, 0x08, static_cast<std::uint8_t>(dims.size())};
    for (auto d : dims)
        for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(d >> s));
    return b;
}

}  // namespace

TEST_CASE("idx parsing") {
    auto p = scratch("vec.idx");
    auto b = idx_header({3});
    b.insert(b.end(), {0, 128, 255});
    write_bytes(p, b);
    Tensor t = parse_idx(p);
    CHECK(t.shape() == Shape{3});
    CHECK(t[0] == 0.0);
    CHECK(t[1] == 128.0 / 255.0);
    CHECK(t[2] == 1.0);

    b.pop_back();
    write_bytes(p, b);
    CHECK_THROWS_AS(parse_idx(p), FormatError);

    auto img = idx_header({2, 3, 4});
    for (int i = 0; i < 24; ++i) img.push_back(static_cast<std::uint8_t>(i));
    write_bytes(p, img);
    CHECK(read_idx(p).dims == std::vector<std::size_t>{2, 3, 4});

    auto bad = idx_header({1});
    bad[2] = 0x0D;
    bad.push_back(0);
    write_bytes(p, bad);
    CHECK_THROWS_AS(read_idx(p), FormatError);
    CHECK_THROWS_AS(read_idx(scratch("missing.idx")), FormatError);
}

TEST_CASE("mnist pair") {
    auto ip = scratch("img.idx"), lp = scratch("lab.idx");
    auto img = idx_header({2, 28, 28});
    img.resize(img.size() + 2 * 784, 51);
    write_bytes(ip, img);
    auto lab = idx_header({2});
    lab.insert(lab.end(), {3, 9});
    write_bytes(lp, lab);
    Dataset d = load_mnist(ip, lp);
    CHECK(d.images.shape() == Shape{2, 1, 28, 28});
    CHECK(d.labels == std::vector<int>{3, 9});
    CHECK(d.images[100] == doctest::Approx(0.2));

    lab = idx_header({2});
    lab.insert(lab.end(), {3, 12});
    write_bytes(lp, lab);
    CHECK_THROWS_AS(load_mnist(ip, lp), FormatError);
}

TEST_CASE("cifar-10 binary records") {
    auto p = scratch("batch.bin");
    std::vector<std::uint8_t> rec(3073, 0);
    rec[0] = 7;
    write_bytes(p, rec);
    Dataset one = parse_cifar10_bin(p);
    CHECK(one.labels == std::vector<int>{7});
    CHECK(one.images == Tensor::zeros({1, 3, 32, 32}));

    std::vector<std::uint8_t> two = rec;
    two.insert(two.end(), rec.begin(), rec.end());
    two[3073] = 2;
    two[3073 + 1 + 1024] = 255;  // first pixel of the green plane
    write_bytes(p, two);
    Dataset d = parse_cifar10_bin(p);
    CHECK(d.size() == 2);
    CHECK(d.labels[1] == 2);
    CHECK(d.images[3072 + 1024] == 1.0);

    write_bytes(p, {});
    CHECK(parse_cifar10_bin(p).size() == 0);

    rec.pop_back();
    write_bytes(p, rec);
    CHECK_THROWS_AS(parse_cifar10_bin(p), FormatError);
    std::vector<std::uint8_t> bad(3073, 0);
    bad[0] = 10;
    write_bytes(p, bad);
    CHECK_THROWS_AS(parse_cifar10_bin(p), FormatError);
    CHECK_FALSE(cifar10_available(scratch("no_such_dir")));
}

TEST_CASE("blobs") {
    Dataset a = make_blobs(3, 40, 4, 10.0, 5), b = make_blobs(3, 40, 4, 10.0, 5);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 120);
    CHECK(a.sample_shape() == Shape{4, 1, 1});

    Dataset one = make_blobs(1, 10, 2, 5.0, 1);
    for (int l : one.labels) CHECK(l == 0);

    Dataset img = make_blobs(2, 5, 12, 5.0, 1, {3, 2, 2});
    CHECK(img.sample_shape() == Shape{3, 2, 2});
    CHECK_THROWS(make_blobs(2, 5, 12, 5.0, 1, {3, 2, 3}));

    // a linear probe separates well-spaced clusters
    Dataset sep = make_blobs(2, 100, 2, 20.0, 9);
    std::vector<std::size_t> idx(sep.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(0);
    Model m = build_linear(2, 2, rng);
    HyperParams hp;
    hp.lr = 0.1;
    Sgd opt(hp);
    const Tensor x = sep.gather_images(idx);
    for (int s = 0; s < 300; ++s) train_step(m, opt, x, sep.labels, rng);
    ForwardContext ctx{Mode::eval, &rng};
    CHECK(count_correct(m.forward(constant(x), ctx).value(), sep.labels) == sep.size());
}

TEST_CASE("augmentation") {
    Rng rng(1);
    Tensor x = init::uniform({2, 3, 4, 5}, 0, 1, rng);
    AugmentSpec plain;
    plain.mean = {0.5, 0.5, 0.5};
    plain.stddev = {0.25, 0.5, 1.0};
    Tensor y = augment(x, plain, rng, AugmentMode::train);
    CHECK(y[0] == doctest::Approx((x[0] - 0.5) / 0.25));
    Tensor back = denormalize(y, plain);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == doctest::Approx(x[i]));
    CHECK(augment(x, plain, rng, AugmentMode::eval) == y);

    AugmentSpec flip;
    flip.hflip_prob = 1.0;
    Tensor f = augment(x, flip, rng, AugmentMode::train);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c) CHECK(f[r * 5 + c] == x[r * 5 + (4 - c)]);

    // flip rate over 1e4 single-pixel-wide images
    AugmentSpec half;
    half.hflip_prob = 0.5;
    Tensor strip(Shape{10000, 1, 1, 2});
    for (std::size_t i = 0; i < 10000; ++i) strip[2 * i + 1] = 1.0;
    Tensor s = augment(strip, half, rng, AugmentMode::train);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < 10000; ++i) flips += s[2 * i] == 1.0;
    CHECK(std::abs(static_cast<double>(flips) / 1e4 - 0.5) < 0.02);

    AugmentSpec crop = AugmentSpec::cifar10_train();
    Tensor img = init::uniform({3, 3, 32, 32}, 0, 1, rng);
    CHECK(augment(img, crop, rng, AugmentMode::train).shape() == Shape{3, 3, 32, 32});

    AugmentSpec pad_only;
    pad_only.pad = 2;
    pad_only.crop_h = 8;
    pad_only.crop_w = 9;
    Tensor padded = augment(x, pad_only, rng, AugmentMode::train);
    CHECK(padded.shape() == Shape{2, 3, 8, 9});
    double total = 0;
    for (double v : padded.values()) total += v;
    double orig = 0;
    for (double v : x.values()) orig += v;
    CHECK(total == doctest::Approx(orig));  // the full image plus zero border

    AugmentSpec wrong;
    wrong.mean = {0.1};
    CHECK_THROWS(augment(x, wrong, rng, AugmentMode::train));
}

TEST_CASE("stratified subsets") {
    Dataset all = make_blobs(4, 30, 2, 5.0, 2);
    Dataset s = subset(all, 7, 1);
    CHECK(s.size() == 28);
    std::vector<int> hist(4);
    for (int l : s.labels) ++hist[static_cast<std::size_t>(l)];
    for (int h : hist) CHECK(h == 7);

    auto [a, b] = split_indices(all, 20, 10, 3);
    CHECK(a.size() == 80);
    CHECK(b.size() == 40);
    std::set<std::size_t> sa(a.begin(), a.end());
    for (std::size_t i : b) CHECK_FALSE(sa.contains(i));
    CHECK(split_indices(all, 20, 10, 3) == split_indices(all, 20, 10, 3));
    CHECK_THROWS(split_indices(all, 25, 10, 3));

    Dataset none = all.select({});
    CHECK(none.size() == 0);
}
