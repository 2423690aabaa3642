#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "insgd/nn.hpp"
#include "insgd/tensor.hpp"

namespace insgd {

enum class OptimizerKind { sgd, adagrad, rmsprop, adam, lsalr, insgd };
enum class NormalizerMode { raw, log_clip };

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind kind);
NormalizerMode parse_normalizer_mode(const std::string& s);
std::string to_string(NormalizerMode mode);

struct HyperParams {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 0.1;
    double momentum = 0.0;      // gradient momentum
    double dampening = 0.0;
    double weight_decay = 0.0;
    double beta = 0.9;          // input-power EMA coefficient (INSGD)
    double eps_div = 1e-8;      // divide guard of the adaptive baselines
    double eps_clip = 0.01;     // floor of the clip function
    int norm_order = 2;
    NormalizerMode mode = NormalizerMode::log_clip;
    double rms_decay = 0.9;     // squared-gradient EMA of RMSProp
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    bool bias_correction = true;

    // Throws std::invalid_argument naming the first out-of-range field.
    void validate() const;
};

void to_json(nlohmann::json& j, const HyperParams& hp);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, HyperParams& hp);

// max(u, eps_clip).
double f_clip(double u, double eps_clip) noexcept;

// Exponential moving average of a layer's input power.
struct PowerAccumulator {
    double beta = 0.9;
    int norm_order = 2;
    double power = 0.0;
    bool initialized = false;

    // First call (or beta == 0) takes `norm` as is; afterwards
    // P <- beta * P + (1 - beta) * norm. Returns the new P.
    double update(double norm);
};

double power_update(PowerAccumulator& acc, double norm);

// Divisor INSGD applies to a gradient given the current power estimate.
double insgd_normalizer(double power, NormalizerMode mode, double eps_clip);

struct ParamSlot {
    Tensor momentum_buffer;
    Tensor sq_avg;
    Tensor first_moment;
    std::optional<PowerAccumulator> power;
    double last_normalizer = 0.0;
    std::size_t steps = 0;
};

// Shared step interface. A step either updates every parameter or, on a
// non-finite gradient or result, leaves weights and state untouched and
// throws NumericalError naming the parameter.
class Optimizer {
public:
    explicit Optimizer(HyperParams hp);
    virtual ~Optimizer() = default;

    void step(std::span<Parameter* const> params);

    const HyperParams& hyper_params() const noexcept { return hp_; }
    double lr() const noexcept { return hp_.lr; }
    void set_lr(double lr) { hp_.lr = lr; }
    std::size_t steps() const noexcept { return steps_; }
    const ParamSlot* slot(const Parameter* p) const;
    // Mean divisor over input-normalized parameters at the last step; empty
    // for optimizers that do not normalize.
    virtual std::optional<double> normalizer_mean() const { return std::nullopt; }

protected:
    // Applies one update to `w` in place. `input_power` is ||x||_p^p of the
    // layer input when the parameter has an input statistic.
    virtual void update(const Parameter& p, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                        std::optional<double> input_power) = 0;
    virtual bool wants_input_power() const { return false; }
    virtual void on_step_begin() {}
    virtual void on_step_end() {}

    HyperParams hp_;

private:
    std::map<const Parameter*, ParamSlot> slots_;
    std::size_t steps_ = 0;
};

// Weight decay then momentum then descent; the tail shared by SGD and INSGD.
void apply_decay_momentum_descent(const HyperParams& hp, ParamSlot& slot, std::span<double> w,
                                  std::vector<double>& g);

class Sgd final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                std::optional<double>) override;
};

class AdaGrad final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                std::optional<double>) override;
};

class RmsProp final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                std::optional<double>) override;
};

class Adam final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                std::optional<double>) override;
};

// Layer-specific adaptive rate: the whole tensor's step is scaled by
// 1 + ln(1 + 1/||g||_2).
class Lsalr final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                std::optional<double>) override;
};

// Input normalized SGD. For weights fed by a layer input:
//   P  <- EMA of ||x||_p^p
//   g  <- g / f_clip(ln P)          (log_clip)   or   g / (eps_clip + P)   (raw)
//   g  <- g + weight_decay * w
//   b  <- momentum * b + (1 - dampening) * g;  g <- b
//   w  <- w - lr * g
// Other parameters skip the first two lines.
class Insgd final : public Optimizer {
public:
    using Optimizer::Optimizer;
    std::optional<double> normalizer_mean() const override { return normalizer_mean_; }

protected:
    void update(const Parameter& p, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                std::optional<double> input_power) override;
    bool wants_input_power() const override { return true; }
    void on_step_begin() override;
    void on_step_end() override;

private:
    std::optional<double> normalizer_mean_;
    double normalizer_sum_ = 0.0;
    std::size_t normalizer_count_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const HyperParams& hp);

// One training step: forward in train mode, loss, zero grads, backward,
// optimizer step. Returns the loss before the update; `correct`, when given,
// receives the number of argmax hits in the batch.
double train_step(Model& model, Optimizer& opt, const Tensor& inputs, const std::vector<int>& labels, Rng& rng,
                  std::size_t* correct = nullptr);

// Rows of [B, K] scores whose argmax equals the label.
std::size_t count_correct(const Tensor& scores, const std::vector<int>& labels);

}  // namespace insgd
