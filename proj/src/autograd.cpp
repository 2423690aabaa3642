#include "insgd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace insgd {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires_grad(std::initializer_list<const Var*> inputs) {
    for (const Var* v : inputs)
        if (v->requires_grad()) return true;
    return false;
}

// Wraps an op result; records parents and the backward rule only when some
// input needs a gradient and recording is on.
Var make_result(Tensor value, const char* op, std::initializer_list<const Var*> inputs,
                std::function<void(Node&)> backward_fn) {
    require_finite(value, op);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    if (g_grad_enabled && any_requires_grad(inputs)) {
        node->requires_grad = true;
        for (const Var* v : inputs) node->parents.push_back(v->node());
        node->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

template <typename F>
Var unary(const Var& a, const char* op, F&& fwd_and_deriv) {
    Tensor out(a.shape());
    Tensor deriv(a.shape());
    const auto in = a.value().data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        auto [y, dy] = fwd_and_deriv(in[i]);
        out[i] = y;
        deriv[i] = dy;
    }
    auto an = a.node();
    return make_result(std::move(out), op, {&a}, [an, deriv = std::move(deriv)](Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * deriv[i];
    });
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor::zeros(value.shape());
    return grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var leaf(Tensor value, bool requires_grad) {
    require_finite(value, "leaf");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

void backward(const Var& output) {
    if (!output) throw std::invalid_argument("backward on empty Var");
    if (output.value().numel() != 1)
        throw ShapeError("backward requires a scalar output, got " + shape_str(output.shape()));
    if (!output.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
    visited.insert(output.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (!n->is_leaf()) n->grad = Tensor::zeros(n->value.shape());
    output.node()->grad_buffer()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    // Release intermediate buffers; leaf grads stay.
    for (Node* n : order)
        if (!n->is_leaf()) n->grad = Tensor();
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_result(std::move(out), "add", {&a, &b}, [an, bn](Node& self) {
        for (auto* p : {an.get(), bn.get()}) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_result(std::move(out), "sub", {&a, &b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_result(std::move(out), "mul", {&a, &b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an->value[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * factor;
    auto an = a.node();
    return make_result(std::move(out), "scale", {&a}, [an, factor](Node& self) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * factor;
    });
}

Var mul_const(const Var& a, const Tensor& mask) {
    if (a.shape() != mask.shape()) throw ShapeError("mul_const: mask shape mismatch");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * mask[i];
    auto an = a.node();
    return make_result(std::move(out), "mul_const", {&a}, [an, mask](Node& self) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Var relu(const Var& a) {
    return unary(a, "relu", [](double x) { return std::pair{x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0}; });
}

Var tanh(const Var& a) {
    return unary(a, "tanh", [](double x) {
        const double y = std::tanh(x);
        return std::pair{y, 1.0 - y * y};
    });
}

Var sigmoid(const Var& a) {
    return unary(a, "sigmoid", [](double x) {
        const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return std::pair{y, y * (1.0 - y)};
    });
}

Var exp(const Var& a) {
    return unary(a, "exp", [](double x) {
        const double y = std::exp(x);
        return std::pair{y, y};
    });
}

Var log(const Var& a) {
    return unary(a, "log", [](double x) { return std::pair{std::log(x), 1.0 / x}; });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    auto an = a.node();
    return make_result(Tensor::scalar(s), "sum", {&a}, [an](Node& self) {
        auto& g = an->grad_buffer();
        for (auto& v : g.data()) v += self.grad[0];
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().numel());
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    auto an = a.node();
    return make_result(Tensor::scalar(s / n), "mean", {&a}, [an, n](Node& self) {
        auto& g = an->grad_buffer();
        for (auto& v : g.data()) v += self.grad[0] / n;
    });
}

Var max(const Var& a) {
    const auto in = a.value().data();
    const std::size_t arg = static_cast<std::size_t>(std::max_element(in.begin(), in.end()) - in.begin());
    auto an = a.node();
    return make_result(Tensor::scalar(in[arg]), "max", {&a}, [an, arg](Node& self) {
        an->grad_buffer()[arg] += self.grad[0];
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    auto an = a.node();
    return make_result(std::move(out), "reshape", {&a}, [an](Node& self) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var flatten(const Var& a) {
    const std::size_t n = a.shape().at(0);
    return reshape(a, Shape{n, a.value().numel() / n});
}

Var matmul(const Var& a, const Var& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
    const std::size_t m = as[0], k = as[1], n = bs[1];
    Tensor out(Shape{m, n});
    gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n, false);
    auto an = a.node(), bn = b.node();
    return make_result(std::move(out), "matmul", {&a, &b}, [an, bn, m, k, n](Node& self) {
        const double* dy = self.grad.data().data();
        if (an->requires_grad)  // dA = dY B^T
            gemm_nt(dy, bn->value.data().data(), an->grad_buffer().data().data(), m, n, k);
        if (bn->requires_grad)  // dB = A^T dY
            gemm_tn(an->value.data().data(), dy, bn->grad_buffer().data().data(), k, m, n);
    });
}

Var transpose(const Var& a) {
    const auto& s = a.shape();
    if (s.size() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(s));
    const std::size_t rows = s[0], cols = s[1];
    Tensor out(Shape{cols, rows});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a.value()[r * cols + c];
    auto an = a.node();
    return make_result(std::move(out), "transpose", {&a}, [an, rows, cols](Node& self) {
        auto& g = an->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c * rows + r];
    });
}

Var add_rowwise(const Var& x, const Var& bias) {
    const auto& xs = x.shape();
    if (xs.size() != 2 || bias.value().numel() != xs[1])
        throw ShapeError("add_rowwise: bias " + shape_str(bias.shape()) + " vs input " + shape_str(xs));
    const std::size_t rows = xs[0], cols = xs[1];
    Tensor out = x.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
    auto xn = x.node(), bn = bias.node();
    return make_result(std::move(out), "add_rowwise", {&x, &bias}, [xn, bn, rows, cols](Node& self) {
        if (xn->requires_grad) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
        }
    });
}

Var add_channelwise(const Var& x, const Var& bias) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || bias.value().numel() != xs[1])
        throw ShapeError("add_channelwise: bias " + shape_str(bias.shape()) + " vs input " + shape_str(xs));
    const std::size_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
    Tensor out = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* p = out.data().data() + (i * c + ch) * plane;
            const double b = bias.value()[ch];
            for (std::size_t s = 0; s < plane; ++s) p[s] += b;
        }
    auto xn = x.node(), bn = bias.node();
    return make_result(std::move(out), "add_channelwise", {&x, &bias}, [xn, bn, n, c, plane](Node& self) {
        if (xn->requires_grad) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* p = self.grad.data().data() + (i * c + ch) * plane;
                    double s = 0.0;
                    for (std::size_t k = 0; k < plane; ++k) s += p[k];
                    g[ch] += s;
                }
        }
    });
}

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t pad) {
    if (input.size() != 4 || kernel.size() != 4)
        throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(input) + " and " +
                         shape_str(kernel));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (input[1] != kernel[1])
        throw ShapeError("conv2d: input channels " + std::to_string(input[1]) + " vs kernel channels " +
                         std::to_string(kernel[1]));
    const std::size_t hp = input[2] + 2 * pad, wp = input[3] + 2 * pad;
    if (kernel[2] > hp || kernel[3] > wp) throw ShapeError("conv2d: kernel larger than padded input");
    return Shape{input[0], kernel[0], (hp - kernel[2]) / stride + 1, (wp - kernel[3]) / stride + 1};
}

namespace {

struct ConvGeometry {
    std::size_t c, h, w, kh, kw, stride, pad, ho, wo;
    std::size_t rows() const { return c * kh * kw; }
    std::size_t cols() const { return ho * wo; }
};

// col[(c*kh + i)*kw + j][oy*wo + ox] = x[c][oy*s + i - pad][ox*s + j - pad]
void im2col(const double* x, const ConvGeometry& g, double* col) {
    for (std::size_t ch = 0; ch < g.c; ++ch)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = col + ((ch * g.kh + i) * g.kw + j) * g.cols();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                             static_cast<std::ptrdiff_t>(g.pad);
                    double* dst = row + oy * g.wo;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (ch * g.h + static_cast<std::size_t>(y)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[xx];
                    }
                }
            }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
    for (std::size_t ch = 0; ch < g.c; ++ch)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = col + ((ch * g.kh + i) * g.kw + j) * g.cols();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                             static_cast<std::ptrdiff_t>(g.pad);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    double* dst = dx + (ch * g.h + static_cast<std::size_t>(y)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(g.w)) dst[xx] += row[oy * g.wo + ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad) {
    const Shape out_shape = conv2d_output_shape(input.shape(), kernel.shape(), stride, pad);
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    const ConvGeometry geo{is[1], is[2], is[3], ks[2], ks[3], stride, pad, out_shape[2], out_shape[3]};
    const std::size_t batch = is[0], filters = ks[0];
    const std::size_t in_plane = geo.c * geo.h * geo.w, out_plane = filters * geo.cols();

    Tensor out(out_shape);
    std::vector<double> col(geo.rows() * geo.cols());
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(input.value().data().data() + n * in_plane, geo, col.data());
        gemm_nn(kernel.value().data().data(), col.data(), out.data().data() + n * out_plane, filters, geo.rows(),
                geo.cols(), false);
    }

    auto xn = input.node(), kn = kernel.node();
    return make_result(std::move(out), "conv2d", {&input, &kernel},
                       [xn, kn, geo, batch, filters, in_plane, out_plane](Node& self) {
                           std::vector<double> col(geo.rows() * geo.cols());
                           std::vector<double> dcol(kn->requires_grad || xn->requires_grad ? col.size() : 0);
                           for (std::size_t n = 0; n < batch; ++n) {
                               const double* dy = self.grad.data().data() + n * out_plane;
                               if (kn->requires_grad) {
                                   im2col(xn->value.data().data() + n * in_plane, geo, col.data());
                                   gemm_nt(dy, col.data(), kn->grad_buffer().data().data(), filters, geo.cols(),
                                           geo.rows());
                               }
                               if (xn->requires_grad) {
                                   std::fill(dcol.begin(), dcol.end(), 0.0);
                                   gemm_tn(kn->value.data().data(), dy, dcol.data(), geo.rows(), filters,
                                           geo.cols());
                                   col2im_add(dcol.data(), geo, xn->grad_buffer().data().data() + n * in_plane);
                               }
                           }
                       });
}

Var global_avg_pool(const Var& x) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("global_avg_pool: expected [N,C,H,W], got " + shape_str(xs));
    const std::size_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
    Tensor out(Shape{n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) s += x.value()[i * plane + k];
        out[i] = s / static_cast<double>(plane);
    }
    auto xn = x.node();
    return make_result(std::move(out), "global_avg_pool", {&x}, [xn, n, c, plane](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < n * c; ++i) {
            const double d = self.grad[i] / static_cast<double>(plane);
            for (std::size_t k = 0; k < plane; ++k) g[i * plane + k] += d;
        }
    });
}

namespace {

struct ChannelLayout {
    std::size_t batch, channels, inner;
    std::size_t per_channel() const { return batch * inner; }
    std::size_t index(std::size_t n, std::size_t c, std::size_t i) const { return (n * channels + c) * inner + i; }
};

ChannelLayout channel_layout(const Shape& s, const Var& gamma, const Var& beta, const char* op) {
    if (s.size() < 2) throw ShapeError(std::string(op) + ": input needs a channel axis");
    std::size_t inner = 1;
    for (std::size_t d = 2; d < s.size(); ++d) inner *= s[d];
    if (gamma.value().numel() != s[1] || beta.value().numel() != s[1])
        throw ShapeError(std::string(op) + ": scale/shift size does not match " + std::to_string(s[1]) +
                         " channels");
    return ChannelLayout{s[0], s[1], inner};
}

// Shared tail of both batch-norm variants: y = gamma * xhat + beta.
Var batch_norm_apply(const Var& x, const Var& gamma, const Var& beta, const ChannelLayout& L, Tensor xhat,
                     std::vector<double> inv_std, bool batch_stats, const char* op) {
    Tensor out(x.shape());
    for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t c = 0; c < L.channels; ++c)
            for (std::size_t i = 0; i < L.inner; ++i) {
                const std::size_t k = L.index(n, c, i);
                out[k] = gamma.value()[c] * xhat[k] + beta.value()[c];
            }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result(
        std::move(out), op, {&x, &gamma, &beta},
        [xn, gn, bn, L, xhat = std::move(xhat), inv_std = std::move(inv_std), batch_stats](Node& self) {
            const double m = static_cast<double>(L.per_channel());
            for (std::size_t c = 0; c < L.channels; ++c) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t n = 0; n < L.batch; ++n)
                    for (std::size_t i = 0; i < L.inner; ++i) {
                        const std::size_t k = L.index(n, c, i);
                        sum_dy += self.grad[k];
                        sum_dy_xhat += self.grad[k] * xhat[k];
                    }
                if (gn->requires_grad) gn->grad_buffer()[c] += sum_dy_xhat;
                if (bn->requires_grad) bn->grad_buffer()[c] += sum_dy;
                if (!xn->requires_grad) continue;
                auto& dx = xn->grad_buffer();
                const double gam = gn->value[c];
                for (std::size_t n = 0; n < L.batch; ++n)
                    for (std::size_t i = 0; i < L.inner; ++i) {
                        const std::size_t k = L.index(n, c, i);
                        if (batch_stats)
                            dx[k] += gam * inv_std[c] / m * (m * self.grad[k] - sum_dy - xhat[k] * sum_dy_xhat);
                        else
                            dx[k] += gam * inv_std[c] * self.grad[k];
                    }
            }
        });
}

}  // namespace

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor& batch_mean,
                     Tensor& batch_var) {
    const ChannelLayout L = channel_layout(x.shape(), gamma, beta, "batch_norm");
    if (L.batch < 2) throw ShapeError("batch_norm: training mode needs a batch of at least 2");
    const double m = static_cast<double>(L.per_channel());
    batch_mean = Tensor(Shape{L.channels});
    batch_var = Tensor(Shape{L.channels});
    std::vector<double> inv_std(L.channels);
    Tensor xhat(x.shape());
    for (std::size_t c = 0; c < L.channels; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < L.batch; ++n)
            for (std::size_t i = 0; i < L.inner; ++i) s += x.value()[L.index(n, c, i)];
        const double mu = s / m;
        double ss = 0.0;
        for (std::size_t n = 0; n < L.batch; ++n)
            for (std::size_t i = 0; i < L.inner; ++i) {
                const double d = x.value()[L.index(n, c, i)] - mu;
                ss += d * d;
            }
        const double var = ss / m;
        batch_mean[c] = mu;
        batch_var[c] = var;
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        for (std::size_t n = 0; n < L.batch; ++n)
            for (std::size_t i = 0; i < L.inner; ++i) {
                const std::size_t k = L.index(n, c, i);
                xhat[k] = (x.value()[k] - mu) * inv_std[c];
            }
    }
    return batch_norm_apply(x, gamma, beta, L, std::move(xhat), std::move(inv_std), true, "batch_norm_train");
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                    double eps) {
    const ChannelLayout L = channel_layout(x.shape(), gamma, beta, "batch_norm");
    if (mean.numel() != L.channels || var.numel() != L.channels)
        throw ShapeError("batch_norm: running statistics size mismatch");
    std::vector<double> inv_std(L.channels);
    for (std::size_t c = 0; c < L.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    Tensor xhat(x.shape());
    for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t c = 0; c < L.channels; ++c)
            for (std::size_t i = 0; i < L.inner; ++i) {
                const std::size_t k = L.index(n, c, i);
                xhat[k] = (x.value()[k] - mean[c]) * inv_std[c];
            }
    return batch_norm_apply(x, gamma, beta, L, std::move(xhat), std::move(inv_std), false, "batch_norm_eval");
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    const auto& s = logits.shape();
    if (s.size() != 2 || s[0] != labels.size())
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                         " labels");
    const std::size_t batch = s[0], classes = s[1];
    Tensor probs(s);
    double loss = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
            throw std::out_of_range("softmax_cross_entropy: label out of range");
        const double* z = logits.value().data().data() + r * classes;
        const double zmax = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
        for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(z[c] - zmax) / denom;
        loss -= (z[labels[r]] - zmax) - std::log(denom);
    }
    loss /= static_cast<double>(batch);
    auto ln = logits.node();
    return make_result(Tensor::scalar(loss), "softmax_cross_entropy", {&logits},
                       [ln, probs = std::move(probs), labels, batch, classes](Node& self) {
                           auto& g = ln->grad_buffer();
                           const double scale = self.grad[0] / static_cast<double>(batch);
                           for (std::size_t r = 0; r < batch; ++r)
                               for (std::size_t c = 0; c < classes; ++c) {
                                   const double target = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
                                   g[r * classes + c] += scale * (probs[r * classes + c] - target);
                               }
                       });
}

Var mse_loss(const Var& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::size_t batch = pred.shape()[0];
    double loss = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double e = target[i] - pred.value()[i];
        loss += 0.5 * e * e;
    }
    loss /= static_cast<double>(batch);
    auto pn = pred.node();
    return make_result(Tensor::scalar(loss), "mse_loss", {&pred}, [pn, target, batch](Node& self) {
        auto& g = pn->grad_buffer();
        const double b = static_cast<double>(batch);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0] * (pn->value[i] - target[i]) / b;
    });
}

}  // namespace insgd
