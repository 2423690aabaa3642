#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "insgd/autograd.hpp"
#include "insgd/tensor.hpp"

namespace insgd {

enum class Mode { train, eval };

// Power of the most recent training-mode input batch of a layer, kept for
// both norm orders: sum |x| and sum x^2 over every element of the batch.
class InputStat {
public:
    void record(const Tensor& x);
    // ||x||_p^p for p in {1, 2}.
    double norm_power(int p) const;
    bool fresh() const noexcept { return fresh_; }
    std::uint64_t records() const noexcept { return records_; }
    // Returns ||x||_p^p and marks the statistic used. Throws std::logic_error
    // if no forward pass recorded a new value since the last consume.
    double consume(int p);
    // Marks the statistic used without reading it.
    void discard() noexcept { fresh_ = false; }

private:
    double l1_ = 0.0;
    double l2_squared_ = 0.0;
    bool fresh_ = false;
    std::uint64_t records_ = 0;
};

// A trainable tensor. Weights that multiply a layer input carry the layer's
// InputStat; biases and normalization scale/shift do not.
struct Parameter {
    std::string name;
    Var var;
    std::shared_ptr<InputStat> input_stat;

    Tensor& value() { return var.mutable_value(); }
    const Tensor& value() const { return var.value(); }
    // Accumulated gradient, or zeros if backward never reached this parameter.
    Tensor grad() const;
    void zero_grad() { var.zero_grad(); }
};

struct ForwardContext {
    Mode mode = Mode::train;
    Rng* rng = nullptr;  // needed by dropout in train mode
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Var forward(const Var& x, ForwardContext& ctx) = 0;
    virtual std::string kind() const = 0;
    virtual std::vector<Parameter*> parameters() { return {}; }
    // Non-trainable state that belongs in checkpoints (running statistics).
    virtual std::vector<Tensor*> buffers() { return {}; }
    virtual const InputStat* input_stat() const { return nullptr; }
};

class Dense final : public Layer {
public:
    Dense(std::size_t in, std::size_t out, Rng& rng, bool bias = true, std::string name = "dense");
    Var forward(const Var& x, ForwardContext& ctx) override;
    std::string kind() const override { return "dense"; }
    std::vector<Parameter*> parameters() override;
    const InputStat* input_stat() const override { return stat_.get(); }

    Parameter& weight() { return weight_; }  // [out, in]
    Parameter* bias() { return has_bias_ ? &bias_ : nullptr; }

private:
    std::shared_ptr<InputStat> stat_;
    Parameter weight_;
    Parameter bias_;
    bool has_bias_;
};

class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
           std::size_t pad, Rng& rng, bool bias = true, std::string name = "conv");
    Var forward(const Var& x, ForwardContext& ctx) override;
    std::string kind() const override { return "conv2d"; }
    std::vector<Parameter*> parameters() override;
    const InputStat* input_stat() const override { return stat_.get(); }

    Parameter& weight() { return weight_; }  // [F, C, k, k]
    std::size_t stride() const noexcept { return stride_; }
    std::size_t pad() const noexcept { return pad_; }

private:
    std::shared_ptr<InputStat> stat_;
    Parameter weight_;
    Parameter bias_;
    bool has_bias_;
    std::size_t stride_;
    std::size_t pad_;
};

// Batch normalization over axis 1 for [N,C] or [N,C,H,W] inputs.
class BatchNorm final : public Layer {
public:
    explicit BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.1, std::string name = "bn");
    Var forward(const Var& x, ForwardContext& ctx) override;
    std::string kind() const override { return "batchnorm"; }
    std::vector<Parameter*> parameters() override { return {&scale_, &shift_}; }
    std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }

    Parameter& scale() { return scale_; }
    Parameter& shift() { return shift_; }
    const Tensor& running_mean() const { return running_mean_; }
    const Tensor& running_var() const { return running_var_; }

private:
    Parameter scale_;
    Parameter shift_;
    Tensor running_mean_;
    Tensor running_var_;
    double eps_;
    double momentum_;
};

class Dropout final : public Layer {
public:
    explicit Dropout(double rate);
    Var forward(const Var& x, ForwardContext& ctx) override;
    std::string kind() const override { return "dropout"; }
    double rate() const noexcept { return rate_; }

private:
    double rate_;
};

class ReLU final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) override { return relu(x); }
    std::string kind() const override { return "relu"; }
};

class Tanh final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) override { return tanh(x); }
    std::string kind() const override { return "tanh"; }
};

class Sigmoid final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) override { return sigmoid(x); }
    std::string kind() const override { return "sigmoid"; }
};

class Flatten final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) override { return flatten(x); }
    std::string kind() const override { return "flatten"; }
};

class GlobalAvgPool final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) override { return global_avg_pool(x); }
    std::string kind() const override { return "gap"; }
};

enum class LossKind { cross_entropy, mse };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind kind);

// Fixed-shape target for the MSE head: one-hot rows.
Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

class Model {
public:
    Model(LossKind loss, std::size_t classes) : loss_(loss), classes_(classes) {}

    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Var forward(const Var& x, ForwardContext& ctx);
    Var loss(const Var& output, const std::vector<int>& labels) const;

    std::vector<Parameter*> parameters();
    std::size_t parameter_count();
    std::vector<Tensor*> buffers();
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
    LossKind loss_kind() const noexcept { return loss_; }
    std::size_t classes() const noexcept { return classes_; }
    void zero_grad();

    // Checkpoint: every parameter then every buffer, in model order.
    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    LossKind loss_;
    std::size_t classes_;
};

// Four stride-reduced 3x3 conv blocks with batch norm, dropout 0.2, and a
// linear head; 3x32x32 in, 10 logits out.
Model build_custom_cnn(Rng& rng, LossKind loss = LossKind::cross_entropy, std::size_t in_channels = 3,
                       std::size_t classes = 10);

enum class Activation { relu, tanh, sigmoid };
Activation parse_activation(const std::string& s);

Model build_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes, Activation act,
                Rng& rng, LossKind loss = LossKind::cross_entropy);

// Single dense layer from flattened input to outputs.
Model build_linear(std::size_t inputs, std::size_t outputs, Rng& rng, LossKind loss = LossKind::cross_entropy,
                   bool bias = true);

// Flat tensor list file: "INSGDW01", u32 count, then per tensor u32 rank,
// rank x u64 extents and numel little-endian f64 values.
void write_tensors(const std::filesystem::path& path, const std::vector<const Tensor*>& tensors);
std::vector<Tensor> read_tensors(const std::filesystem::path& path);

}  // namespace insgd
