#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace insgd {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a NaN or Inf would escape an operation.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& where, const std::string& what)
        : std::runtime_error(where + ": " + what), where_(where) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    // Same storage reinterpreted; the element count must match.
    Tensor reshaped(Shape shape) const;

    void fill(double v);
    bool all_finite() const noexcept;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Throws NumericalError naming `where` if any value is NaN or Inf.
void require_finite(const Tensor& t, const std::string& where);

// Seeded generator. The stream is std::mt19937_64 and every derived draw
// (uniform, normal, integer) is computed here rather than through the
// implementation-defined std distributions, so output is portable.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller; the second variate is cached.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // Uniform integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

namespace init {
Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
Tensor normal(Shape shape, double mean, double stddev, Rng& rng);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for linear and conv layers.
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);
}  // namespace init

}  // namespace insgd
