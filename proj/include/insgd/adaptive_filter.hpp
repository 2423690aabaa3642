#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

namespace insgd::filter {

enum class NormKind { none, l1, l2 };

// Weights and settings of a transversal adaptive filter.
struct FilterState {
    std::vector<double> w;
    double step = 1.0;   // lambda
    double eps = 1e-8;   // divide guard
    NormKind norm = NormKind::l2;

    FilterState() = default;
    FilterState(std::size_t taps, double step_size, NormKind kind = NormKind::l2, double eps_guard = 1e-8);
    void validate() const;
};

struct StepResult {
    std::vector<double> w;
    double error;  // a-priori error d - u.w
};

double dot(std::span<const double> a, std::span<const double> b);

// w + step * e * u
StepResult lms_step(const FilterState& fs, std::span<const double> u, double d);
// w + step * e * u / (eps + ||u||_2^2)
StepResult nlms_step(const FilterState& fs, std::span<const double> u, double d);
// w + step * e * u / (eps + ||u||_1)
StepResult nlms_l1_step(const FilterState& fs, std::span<const double> u, double d);
// Dispatches on fs.norm (none -> LMS).
StepResult adapt(const FilterState& fs, std::span<const double> u, double d);

enum class Activation { tanh, sigmoid };
// Inverse activation: atanh or logit. Throws std::domain_error outside the
// open range of the activation.
double inverse_activation(Activation act, double d);
double apply_activation(Activation act, double v);
// NLMS toward the pre-activation target: the error is inverse(d) - w.u.
StepResult nlms_activation_step(const FilterState& fs, std::span<const double> u, double d, Activation act);

// Row-major square matrix.
struct Matrix {
    std::size_t n = 0;
    std::vector<double> a;
    double operator()(std::size_t r, std::size_t c) const { return a[r * n + c]; }
    double& operator()(std::size_t r, std::size_t c) { return a[r * n + c]; }
};

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Solves R_u w = R_du for symmetric positive-definite R_u by Gaussian
// elimination with partial pivoting. Throws SingularMatrixError when R_u is
// not symmetric, indefinite, or singular.
std::vector<double> wiener_solve(const Matrix& r_u, std::span<const double> r_du);

// Autocorrelation matrix of `taps` consecutive samples of a unit-variance
// AR(1) process with coefficient rho: R[i][j] = rho^|i-j|.
Matrix ar1_autocorrelation(std::size_t taps, double rho);

enum class Algo { lms, nlms, nlms_l1 };
Algo parse_algo(const std::string& s);
std::string to_string(Algo algo);

struct SysIdScenario {
    std::vector<double> true_weights;
    double rho = 0.0;           // AR(1) coefficient; 0 gives iid Gaussian input
    double noise_variance = 0.0;
    std::size_t steps = 1000;
    double outlier_rate = 0.0;  // fraction of input samples scaled by outlier_scale
    double outlier_scale = 100.0;

    void validate() const;
};

// Scenario with `taps` unknown weights drawn N(0, 1) from `seed`.
SysIdScenario make_scenario(std::size_t taps, double rho, double noise_variance, std::size_t steps,
                            std::uint64_t seed);

struct TracePoint {
    std::size_t step;
    double err_norm;  // ||w - w_o||_2
    double mse;       // running mean of e^2
};

struct SysIdResult {
    std::vector<TracePoint> trace;
    std::vector<double> final_weights;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    double final_err_norm = 0.0;
    double min_err_norm = 0.0;
    bool diverged = false;  // a weight or error became non-finite, or MSE rose
};

// Runs one filter against the scenario. The input is a tapped delay line of
// the scalar process; d = u.w_o + noise. `record_every` thins the trace
// (the last step is always recorded). The running MSE is an exponential
// average of e^2 with smoothing 0.99, seeded by the first error.
SysIdResult run_sysid(const SysIdScenario& scenario, Algo algo, double step, std::uint64_t seed,
                      std::size_t record_every = 1, double eps = 1e-8);

}  // namespace insgd::filter
