#include "insgd/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace insgd {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (shape_numel(shape_) != data_.size())
        throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> v;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("ragged matrix literal");
        v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(v));
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_finite(const Tensor& t, const std::string& where) {
    if (!t.all_finite()) throw NumericalError(where, "non-finite value in tensor " + shape_str(t.shape()));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

namespace init {

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

Tensor normal(Shape shape, double mean, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(mean, stddev);
    return t;
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace init
}  // namespace insgd
