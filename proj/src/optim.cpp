#include "insgd/optim.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace insgd {

OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adagrad") return OptimizerKind::adagrad;
    if (s == "rmsprop") return OptimizerKind::rmsprop;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "lsalr") return OptimizerKind::lsalr;
    if (s == "insgd") return OptimizerKind::insgd;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adagrad: return "adagrad";
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::lsalr: return "lsalr";
        case OptimizerKind::insgd: return "insgd";
    }
    return "?";
}

NormalizerMode parse_normalizer_mode(const std::string& s) {
    if (s == "raw") return NormalizerMode::raw;
    if (s == "log_clip") return NormalizerMode::log_clip;
    throw std::invalid_argument("unknown normalizer mode '" + s + "' (expected raw or log_clip)");
}

std::string to_string(NormalizerMode mode) { return mode == NormalizerMode::raw ? "raw" : "log_clip"; }

void HyperParams::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("optimizer: " + what); };
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
    if (!(dampening >= 0.0 && dampening < 1.0)) fail("dampening must be in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(beta >= 0.0 && beta < 1.0)) fail("beta must be in [0, 1)");
    if (!(eps_div >= 0.0)) fail("eps_div must be >= 0");
    if (!(eps_clip >= 0.0)) fail("eps_clip must be >= 0");
    if (mode == NormalizerMode::log_clip && !(eps_clip > 0.0)) fail("eps_clip must be > 0 in log_clip mode");
    if (norm_order != 1 && norm_order != 2) fail("norm_order must be 1 or 2");
    if (!(rms_decay >= 0.0 && rms_decay < 1.0)) fail("rms_decay must be in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must be in [0, 1)");
}

void to_json(nlohmann::json& j, const HyperParams& hp) {
    j = nlohmann::json{{"name", to_string(hp.kind)},
                       {"lr", hp.lr},
                       {"momentum", hp.momentum},
                       {"dampening", hp.dampening},
                       {"weight_decay", hp.weight_decay},
                       {"beta", hp.beta},
                       {"norm_order", hp.norm_order},
                       {"mode", to_string(hp.mode)},
                       {"eps_clip", hp.eps_clip},
                       {"eps_div", hp.eps_div},
                       {"rms_decay", hp.rms_decay},
                       {"adam_beta1", hp.adam_beta1},
                       {"adam_beta2", hp.adam_beta2},
                       {"bias_correction", hp.bias_correction}};
}

void from_json(const nlohmann::json& j, HyperParams& hp) {
    if (!j.is_object()) throw std::invalid_argument("optimizer config must be a JSON object");
    static const std::set<std::string> known{"name",     "lr",        "momentum",   "dampening",  "weight_decay",
                                             "beta",     "norm_order", "mode",      "eps_clip",   "eps_div",
                                             "rms_decay", "adam_beta1", "adam_beta2", "bias_correction"};
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw std::invalid_argument("optimizer: unknown key '" + key + "'");
    if (j.contains("name")) hp.kind = parse_optimizer_kind(j.at("name").get<std::string>());
    auto num = [&](const char* key, double& field) {
        if (j.contains(key)) field = j.at(key).get<double>();
    };
    num("lr", hp.lr);
    num("momentum", hp.momentum);
    num("dampening", hp.dampening);
    num("weight_decay", hp.weight_decay);
    num("beta", hp.beta);
    num("eps_clip", hp.eps_clip);
    num("eps_div", hp.eps_div);
    num("rms_decay", hp.rms_decay);
    num("adam_beta1", hp.adam_beta1);
    num("adam_beta2", hp.adam_beta2);
    if (j.contains("norm_order")) hp.norm_order = j.at("norm_order").get<int>();
    if (j.contains("mode")) hp.mode = parse_normalizer_mode(j.at("mode").get<std::string>());
    if (j.contains("bias_correction")) hp.bias_correction = j.at("bias_correction").get<bool>();
    hp.validate();
}

double f_clip(double u, double eps_clip) noexcept { return u >= eps_clip ? u : eps_clip; }

double PowerAccumulator::update(double norm) {
    if (!(norm >= 0.0)) throw std::invalid_argument("power_update: norm must be >= 0");
    if (!initialized || beta == 0.0) {
        power = norm;
        initialized = true;
    } else {
        power = beta * power + (1.0 - beta) * norm;
    }
    return power;
}

double power_update(PowerAccumulator& acc, double norm) { return acc.update(norm); }

double insgd_normalizer(double power, NormalizerMode mode, double eps_clip) {
    if (mode == NormalizerMode::raw) return eps_clip + power;
    // ln 0 would be -inf; the floor keeps the clip branch well defined.
    return f_clip(std::log(std::max(power, 1e-300)), eps_clip);
}

Optimizer::Optimizer(HyperParams hp) : hp_(hp) { hp_.validate(); }

const ParamSlot* Optimizer::slot(const Parameter* p) const {
    auto it = slots_.find(p);
    return it == slots_.end() ? nullptr : &it->second;
}

void Optimizer::step(std::span<Parameter* const> params) {
    // Validate everything before touching state so a failed step is a no-op.
    std::vector<Tensor> grads;
    std::vector<std::optional<double>> powers;
    grads.reserve(params.size());
    for (Parameter* p : params) {
        grads.push_back(p->grad());
        if (!grads.back().all_finite()) throw NumericalError(p->name, "non-finite gradient");
        std::optional<double> power;
        if (wants_input_power() && p->input_stat) {
            if (!p->input_stat->fresh())
                throw std::logic_error(p->name + ": layer input statistic is stale (no forward since last step)");
            power = p->input_stat->norm_power(hp_.norm_order);
            if (!std::isfinite(*power)) throw NumericalError(p->name, "non-finite input power");
        }
        powers.push_back(power);
    }

    std::vector<Tensor> saved_values;
    saved_values.reserve(params.size());
    for (Parameter* p : params) saved_values.push_back(p->value());
    const auto saved_slots = slots_;

    try {
        on_step_begin();
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter& p = *params[i];
            ParamSlot& s = slots_[&p];
            update(p, s, p.value().data(), grads[i], powers[i]);
            ++s.steps;
            if (!p.value().all_finite()) throw NumericalError(p.name, "update produced a non-finite weight");
        }
        on_step_end();
    } catch (...) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value() = saved_values[i];
        slots_ = saved_slots;
        throw;
    }
    for (Parameter* p : params)
        if (p->input_stat) p->input_stat->discard();
    ++steps_;
}

void apply_decay_momentum_descent(const HyperParams& hp, ParamSlot& slot, std::span<double> w,
                                  std::vector<double>& g) {
    if (hp.weight_decay != 0.0)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += hp.weight_decay * w[i];
    if (hp.momentum != 0.0) {
        if (slot.momentum_buffer.empty()) {
            slot.momentum_buffer = Tensor(Shape{g.size()}, g);
        } else {
            auto b = slot.momentum_buffer.data();
            for (std::size_t i = 0; i < g.size(); ++i) b[i] = hp.momentum * b[i] + (1.0 - hp.dampening) * g[i];
        }
        std::copy(slot.momentum_buffer.data().begin(), slot.momentum_buffer.data().end(), g.begin());
    }
    for (std::size_t i = 0; i < g.size(); ++i) w[i] -= hp.lr * g[i];
}

void Sgd::update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                 std::optional<double>) {
    std::vector<double> g = grad.values();
    apply_decay_momentum_descent(hp_, slot, w, g);
}

namespace {
std::vector<double> decayed_grad(const HyperParams& hp, std::span<const double> w, const Tensor& grad) {
    std::vector<double> g = grad.values();
    if (hp.weight_decay != 0.0)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += hp.weight_decay * w[i];
    return g;
}

Tensor& lazy_zeros(Tensor& t, std::size_t n) {
    if (t.empty()) t = Tensor::zeros(Shape{n});
    return t;
}
}  // namespace

void AdaGrad::update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                     std::optional<double>) {
    const auto g = decayed_grad(hp_, w, grad);
    auto v = lazy_zeros(slot.sq_avg, g.size()).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] += g[i] * g[i];
        if (g[i] != 0.0) w[i] -= hp_.lr * g[i] / std::sqrt(v[i] + hp_.eps_div);
    }
}

void RmsProp::update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                     std::optional<double>) {
    const auto g = decayed_grad(hp_, w, grad);
    auto v = lazy_zeros(slot.sq_avg, g.size()).data();
    const double rho = hp_.rms_decay;
    for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = rho * v[i] + (1.0 - rho) * g[i] * g[i];
        if (g[i] != 0.0) w[i] -= hp_.lr * g[i] / std::sqrt(v[i] + hp_.eps_div);
    }
}

void Adam::update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                  std::optional<double>) {
    const auto g = decayed_grad(hp_, w, grad);
    auto m = lazy_zeros(slot.first_moment, g.size()).data();
    auto v = lazy_zeros(slot.sq_avg, g.size()).data();
    const double b1 = hp_.adam_beta1, b2 = hp_.adam_beta2;
    const double t = static_cast<double>(slot.steps + 1);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        if (m[i] == 0.0) continue;
        if (hp_.bias_correction)
            w[i] -= hp_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + hp_.eps_div);
        else
            w[i] -= hp_.lr * m[i] / std::sqrt(v[i] + hp_.eps_div);
    }
}

void Lsalr::update(const Parameter&, ParamSlot&, std::span<double> w, const Tensor& grad, std::optional<double>) {
    const auto g = decayed_grad(hp_, w, grad);
    double sq = 0.0;
    for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm == 0.0) return;
    const double factor = 1.0 + std::log(1.0 + 1.0 / norm);
    for (std::size_t i = 0; i < g.size(); ++i) w[i] -= hp_.lr * factor * g[i];
}

void Insgd::on_step_begin() {
    normalizer_sum_ = 0.0;
    normalizer_count_ = 0;
}

void Insgd::on_step_end() {
    if (normalizer_count_ > 0) normalizer_mean_ = normalizer_sum_ / static_cast<double>(normalizer_count_);
}

void Insgd::update(const Parameter&, ParamSlot& slot, std::span<double> w, const Tensor& grad,
                   std::optional<double> input_power) {
    std::vector<double> g = grad.values();
    if (input_power) {
        if (!slot.power) slot.power = PowerAccumulator{hp_.beta, hp_.norm_order};
        const double power = slot.power->update(*input_power);
        const double normalizer = insgd_normalizer(power, hp_.mode, hp_.eps_clip);
        if (!std::isfinite(normalizer) || !(normalizer > 0.0))
            throw NumericalError("insgd", "normalizer is not a positive finite number");
        for (double& v : g) v /= normalizer;
        slot.last_normalizer = normalizer;
        normalizer_sum_ += normalizer;
        ++normalizer_count_;
    }
    apply_decay_momentum_descent(hp_, slot, w, g);
}

std::unique_ptr<Optimizer> make_optimizer(const HyperParams& hp) {
    switch (hp.kind) {
        case OptimizerKind::sgd: return std::make_unique<Sgd>(hp);
        case OptimizerKind::adagrad: return std::make_unique<AdaGrad>(hp);
        case OptimizerKind::rmsprop: return std::make_unique<RmsProp>(hp);
        case OptimizerKind::adam: return std::make_unique<Adam>(hp);
        case OptimizerKind::lsalr: return std::make_unique<Lsalr>(hp);
        case OptimizerKind::insgd: return std::make_unique<Insgd>(hp);
    }
    throw std::invalid_argument("unknown optimizer kind");
}

std::size_t count_correct(const Tensor& scores, const std::vector<int>& labels) {
    if (scores.rank() != 2 || scores.dim(0) != labels.size())
        throw ShapeError("count_correct: scores " + shape_str(scores.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t k = scores.dim(1);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto row = scores.data().subspan(r * k, k);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == labels[r]) ++hits;
    }
    return hits;
}

double train_step(Model& model, Optimizer& opt, const Tensor& inputs, const std::vector<int>& labels, Rng& rng,
                  std::size_t* correct) {
    ForwardContext ctx{Mode::train, &rng};
    Var out = model.forward(constant(inputs), ctx);
    Var loss = model.loss(out, labels);
    if (correct) *correct = count_correct(out.value(), labels);
    const double value = loss.value().item();
    model.zero_grad();
    backward(loss);
    auto params = model.parameters();
    opt.step(params);
    return value;
}

}  // namespace insgd
