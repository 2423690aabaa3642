#include "insgd/adaptive_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "insgd/tensor.hpp"

namespace insgd::filter {

FilterState::FilterState(std::size_t taps, double step_size, NormKind kind, double eps_guard)
    : w(taps, 0.0), step(step_size), eps(eps_guard), norm(kind) {
    validate();
}

void FilterState::validate() const {
    if (w.empty()) throw std::invalid_argument("filter needs at least one tap");
    if (!(step > 0.0)) throw std::invalid_argument("filter step size must be > 0");
    if (!(eps >= 0.0)) throw std::invalid_argument("filter eps must be >= 0");
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

namespace {

void check_input(const FilterState& fs, std::span<const double> u) {
    if (u.size() != fs.w.size())
        throw std::invalid_argument("input has " + std::to_string(u.size()) + " samples, filter has " +
                                    std::to_string(fs.w.size()) + " taps");
}

// w + (step * e) * u / denom, evaluated in that order for every tap.
StepResult normalized_update(const FilterState& fs, std::span<const double> u, double e, double denom) {
    StepResult r{fs.w, e};
    const double scaled = fs.step * e;
    for (std::size_t i = 0; i < u.size(); ++i) r.w[i] += scaled * u[i] / denom;
    return r;
}

}  // namespace

StepResult lms_step(const FilterState& fs, std::span<const double> u, double d) {
    check_input(fs, u);
    const double e = d - dot(u, fs.w);
    StepResult r{fs.w, e};
    for (std::size_t i = 0; i < u.size(); ++i) r.w[i] += fs.step * e * u[i];
    return r;
}

StepResult nlms_step(const FilterState& fs, std::span<const double> u, double d) {
    check_input(fs, u);
    const double e = d - dot(u, fs.w);
    const double denom = fs.eps + dot(u, u);
    if (denom == 0.0) return StepResult{fs.w, e};
    return normalized_update(fs, u, e, denom);
}

StepResult nlms_l1_step(const FilterState& fs, std::span<const double> u, double d) {
    check_input(fs, u);
    const double e = d - dot(u, fs.w);
    double l1 = 0.0;
    for (double v : u) l1 += std::fabs(v);
    const double denom = fs.eps + l1;
    if (denom == 0.0) return StepResult{fs.w, e};
    return normalized_update(fs, u, e, denom);
}

StepResult adapt(const FilterState& fs, std::span<const double> u, double d) {
    switch (fs.norm) {
        case NormKind::none: return lms_step(fs, u, d);
        case NormKind::l1: return nlms_l1_step(fs, u, d);
        case NormKind::l2: return nlms_step(fs, u, d);
    }
    throw std::invalid_argument("unknown filter norm");
}

double inverse_activation(Activation act, double d) {
    switch (act) {
        case Activation::tanh:
            if (!(d > -1.0 && d < 1.0)) throw std::domain_error("tanh target must lie in (-1, 1)");
            return std::atanh(d);
        case Activation::sigmoid:
            if (!(d > 0.0 && d < 1.0)) throw std::domain_error("sigmoid target must lie in (0, 1)");
            return std::log(d / (1.0 - d));
    }
    throw std::invalid_argument("unknown activation");
}

double apply_activation(Activation act, double v) {
    return act == Activation::tanh ? std::tanh(v) : 1.0 / (1.0 + std::exp(-v));
}

StepResult nlms_activation_step(const FilterState& fs, std::span<const double> u, double d, Activation act) {
    check_input(fs, u);
    const double target = inverse_activation(act, d);
    const double e = target - dot(u, fs.w);
    const double denom = fs.eps + dot(u, u);
    if (denom == 0.0) return StepResult{fs.w, e};
    return normalized_update(fs, u, e, denom);
}

std::vector<double> wiener_solve(const Matrix& r_u, std::span<const double> r_du) {
    const std::size_t n = r_u.n;
    if (n == 0 || r_u.a.size() != n * n || r_du.size() != n)
        throw std::invalid_argument("wiener_solve: dimension mismatch");
    double scale = 0.0;
    for (double v : r_u.a) scale = std::max(scale, std::fabs(v));
    if (scale == 0.0) throw SingularMatrixError("wiener_solve: zero autocorrelation matrix");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::fabs(r_u(i, j) - r_u(j, i)) > 1e-12 * scale)
                throw SingularMatrixError("wiener_solve: autocorrelation matrix is not symmetric");

    // Positive definiteness via an attempted Cholesky factorization.
    {
        Matrix l{n, std::vector<double>(n * n, 0.0)};
        for (std::size_t j = 0; j < n; ++j) {
            double diag = r_u(j, j);
            for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
            if (!(diag > 1e-14 * scale)) throw SingularMatrixError("wiener_solve: matrix is not positive definite");
            l(j, j) = std::sqrt(diag);
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = r_u(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
                l(i, j) = s / l(j, j);
            }
        }
    }

    Matrix a = r_u;
    std::vector<double> b(r_du.begin(), r_du.end());
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
        if (std::fabs(a(pivot, col)) <= 1e-14 * scale) throw SingularMatrixError("wiener_solve: singular matrix");
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
        x[i] = s / a(i, i);
    }
    return x;
}

Matrix ar1_autocorrelation(std::size_t taps, double rho) {
    Matrix m{taps, std::vector<double>(taps * taps)};
    for (std::size_t i = 0; i < taps; ++i)
        for (std::size_t j = 0; j < taps; ++j)
            m(i, j) = std::pow(rho, static_cast<double>(i > j ? i - j : j - i));
    return m;
}

Algo parse_algo(const std::string& s) {
    if (s == "lms") return Algo::lms;
    if (s == "nlms") return Algo::nlms;
    if (s == "nlms-l1") return Algo::nlms_l1;
    throw std::invalid_argument("unknown filter algorithm '" + s + "' (expected lms, nlms or nlms-l1)");
}

std::string to_string(Algo algo) {
    switch (algo) {
        case Algo::lms: return "lms";
        case Algo::nlms: return "nlms";
        case Algo::nlms_l1: return "nlms-l1";
    }
    return "?";
}

void SysIdScenario::validate() const {
    if (true_weights.empty()) throw std::invalid_argument("scenario needs at least one tap");
    if (!(std::fabs(rho) < 1.0)) throw std::invalid_argument("AR(1) coefficient must satisfy |rho| < 1");
    if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
    if (steps == 0) throw std::invalid_argument("scenario needs at least one step");
    if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) throw std::invalid_argument("outlier rate must be in [0, 1]");
}

SysIdScenario make_scenario(std::size_t taps, double rho, double noise_variance, std::size_t steps,
                            std::uint64_t seed) {
    Rng rng(seed);
    SysIdScenario s;
    s.true_weights.resize(taps);
    for (auto& w : s.true_weights) w = rng.normal();
    s.rho = rho;
    s.noise_variance = noise_variance;
    s.steps = steps;
    s.validate();
    return s;
}

SysIdResult run_sysid(const SysIdScenario& scenario, Algo algo, double step, std::uint64_t seed,
                      std::size_t record_every, double eps) {
    scenario.validate();
    if (record_every == 0) record_every = 1;
    const std::size_t taps = scenario.true_weights.size();
    const NormKind kind = algo == Algo::lms ? NormKind::none : algo == Algo::nlms ? NormKind::l2 : NormKind::l1;
    FilterState fs(taps, step, kind, eps);

    Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
    const double innovation = std::sqrt(1.0 - scenario.rho * scenario.rho);
    const double noise_sd = std::sqrt(scenario.noise_variance);
    double x = rng.normal();
    auto next_sample = [&]() {
        x = scenario.rho * x + innovation * rng.normal();
        double sample = x;
        if (scenario.outlier_rate > 0.0 && rng.bernoulli(scenario.outlier_rate)) sample *= scenario.outlier_scale;
        return sample;
    };
    // u[0] is the newest sample.
    std::vector<double> u(taps);
    for (std::size_t i = taps; i-- > 0;) u[i] = next_sample();

    auto err_norm = [&](const std::vector<double>& w) {
        double s = 0.0;
        for (std::size_t i = 0; i < taps; ++i) {
            const double d = w[i] - scenario.true_weights[i];
            s += d * d;
        }
        return std::sqrt(s);
    };

    SysIdResult result;
    result.min_err_norm = err_norm(fs.w);
    double mse = 0.0;
    for (std::size_t k = 1; k <= scenario.steps; ++k) {
        if (k > 1) {
            std::rotate(u.rbegin(), u.rbegin() + 1, u.rend());
            u[0] = next_sample();
        }
        const double d = dot(u, scenario.true_weights) + noise_sd * rng.normal();
        StepResult r = adapt(fs, u, d);
        const double e2 = r.error * r.error;
        mse = k == 1 ? e2 : 0.99 * mse + 0.01 * e2;
        if (k == 1) result.initial_mse = mse;
        fs.w = std::move(r.w);

        const double en = err_norm(fs.w);
        const bool finite = std::isfinite(mse) && std::isfinite(en);
        if (finite) result.min_err_norm = std::min(result.min_err_norm, en);
        if (!finite) {
            result.diverged = true;
            result.trace.push_back({k, std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<double>::infinity()});
            result.final_mse = std::numeric_limits<double>::infinity();
            result.final_err_norm = std::numeric_limits<double>::infinity();
            result.final_weights = fs.w;
            return result;
        }
        if (k % record_every == 0 || k == scenario.steps || k == 1) result.trace.push_back({k, en, mse});
    }
    result.final_mse = mse;
    result.final_err_norm = err_norm(fs.w);
    result.final_weights = fs.w;
    result.diverged = result.final_mse > result.initial_mse;
    return result;
}

}  // namespace insgd::filter
