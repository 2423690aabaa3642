#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "insgd/tensor.hpp"

namespace insgd {

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    bool is_leaf() const noexcept { return parents.empty(); }
    // Zero-filled grad buffer shaped like value, created on first use.
    Tensor& grad_buffer();
};

// Handle to a node of the define-by-run graph.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    // Resets the grad buffer to zeros (leaves only need this between steps).
    void zero_grad();

private:
    std::shared_ptr<Node> node_;
};

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

// While alive, ops on this thread build no graph (evaluation mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled() noexcept;

// Reverse sweep from a single-element output. Leaf grads accumulate across
// calls; intermediate grads are recomputed each time.
void backward(const Var& output);

// elementwise, same shapes
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// Multiplies by a fixed tensor that is not differentiated (dropout masks).
Var mul_const(const Var& a, const Tensor& mask);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// reductions over all elements, result shape [1]
Var sum(const Var& a);
Var mean(const Var& a);
Var max(const Var& a);

Var reshape(const Var& a, Shape shape);
// [N, ...] -> [N, prod(...)]
Var flatten(const Var& a);

Var matmul(const Var& a, const Var& b);
// 2-d transpose.
Var transpose(const Var& a);
// x[B,n] + bias[n] broadcast over rows.
Var add_rowwise(const Var& x, const Var& bias);
// x[N,C,H,W] + bias[C] broadcast over batch and space.
Var add_channelwise(const Var& x, const Var& bias);

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t pad);
// Cross-correlation with zero padding. input [N,C,H,W], kernel [F,C,kh,kw].
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad);

// [N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& x);

// Normalizes with batch statistics over every axis but 1. The biased batch
// variance is written to `batch_var`, the mean to `batch_mean`.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor& batch_mean,
                     Tensor& batch_var);
// Normalizes with fixed statistics; differentiable in x, gamma and beta.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                    double eps);

// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
// Mean over the batch of 0.5 * ||target - pred||^2.
Var mse_loss(const Var& pred, const Tensor& target);

}  // namespace insgd
