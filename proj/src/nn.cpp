#include "insgd/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace insgd {

void InputStat::record(const Tensor& x) {
    double l1 = 0.0, l2 = 0.0;
    for (double v : x.data()) {
        l1 += std::fabs(v);
        l2 += v * v;
    }
    l1_ = l1;
    l2_squared_ = l2;
    fresh_ = true;
    ++records_;
}

double InputStat::norm_power(int p) const {
    switch (p) {
        case 1: return l1_;
        case 2: return l2_squared_;
        default: throw std::invalid_argument("norm order must be 1 or 2, got " + std::to_string(p));
    }
}

double InputStat::consume(int p) {
    if (!fresh_) throw std::logic_error("layer input statistic is stale: no forward pass since the last step");
    const double v = norm_power(p);
    fresh_ = false;
    return v;
}

Tensor Parameter::grad() const {
    if (var.grad().shape() == var.value().shape()) return var.grad();
    return Tensor::zeros(var.value().shape());
}

namespace {
Parameter make_param(std::string name, Tensor value, std::shared_ptr<InputStat> stat = nullptr) {
    return Parameter{std::move(name), leaf(std::move(value), true), std::move(stat)};
}
}  // namespace

Dense::Dense(std::size_t in, std::size_t out, Rng& rng, bool bias, std::string name)
    : stat_(std::make_shared<InputStat>()), has_bias_(bias) {
    weight_ = make_param(name + ".weight", init::fan_in_uniform(Shape{out, in}, in, rng), stat_);
    if (has_bias_) bias_ = make_param(name + ".bias", init::fan_in_uniform(Shape{out}, in, rng));
}

Var Dense::forward(const Var& x, ForwardContext& ctx) {
    const auto& ws = weight_.value().shape();
    if (x.shape().size() != 2 || x.shape()[1] != ws[1])
        throw ShapeError("dense: input " + shape_str(x.shape()) + " does not match weight " + shape_str(ws));
    if (ctx.mode == Mode::train) stat_->record(x.value());
    Var y = matmul(x, transpose(weight_.var));
    return has_bias_ ? add_rowwise(y, bias_.var) : y;
}

std::vector<Parameter*> Dense::parameters() {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t pad, Rng& rng, bool bias, std::string name)
    : stat_(std::make_shared<InputStat>()), has_bias_(bias), stride_(stride), pad_(pad) {
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t fan_in = in_channels * kernel * kernel;
    weight_ = make_param(name + ".weight",
                         init::fan_in_uniform(Shape{out_channels, in_channels, kernel, kernel}, fan_in, rng), stat_);
    if (has_bias_) bias_ = make_param(name + ".bias", init::fan_in_uniform(Shape{out_channels}, fan_in, rng));
}

Var Conv2d::forward(const Var& x, ForwardContext& ctx) {
    Var y = conv2d(x, weight_.var, stride_, pad_);
    if (ctx.mode == Mode::train) stat_->record(x.value());
    return has_bias_ ? add_channelwise(y, bias_.var) : y;
}

std::vector<Parameter*> Conv2d::parameters() {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
}

BatchNorm::BatchNorm(std::size_t channels, double eps, double momentum, std::string name)
    : scale_(make_param(name + ".scale", Tensor::ones(Shape{channels}))),
      shift_(make_param(name + ".shift", Tensor::zeros(Shape{channels}))),
      running_mean_(Tensor::zeros(Shape{channels})),
      running_var_(Tensor::ones(Shape{channels})),
      eps_(eps),
      momentum_(momentum) {}

Var BatchNorm::forward(const Var& x, ForwardContext& ctx) {
    if (x.shape().size() < 2 || x.shape()[1] != running_mean_.numel())
        throw ShapeError("batchnorm: expected " + std::to_string(running_mean_.numel()) + " channels, got input " +
                         shape_str(x.shape()));
    if (ctx.mode == Mode::eval) return batch_norm_eval(x, scale_.var, shift_.var, running_mean_, running_var_, eps_);

    Tensor batch_mean, batch_var;
    Var y = batch_norm_train(x, scale_.var, shift_.var, eps_, batch_mean, batch_var);
    // Running variance uses the unbiased estimate.
    const double m = static_cast<double>(x.value().numel() / running_mean_.numel());
    const double unbias = m / (m - 1.0);
    for (std::size_t c = 0; c < running_mean_.numel(); ++c) {
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * batch_mean[c];
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * batch_var[c] * unbias;
    }
    return y;
}

Dropout::Dropout(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
}

Var Dropout::forward(const Var& x, ForwardContext& ctx) {
    if (ctx.mode == Mode::eval || rate_ == 0.0) return x;
    if (!ctx.rng) throw std::logic_error("dropout in train mode needs an Rng");
    Tensor mask(x.shape());
    const double keep_scale = 1.0 / (1.0 - rate_);
    for (auto& m : mask.data()) m = ctx.rng->bernoulli(rate_) ? 0.0 : keep_scale;
    return mul_const(x, mask);
}

LossKind parse_loss_kind(const std::string& s) {
    if (s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "mse") return LossKind::mse;
    throw std::invalid_argument("unknown loss '" + s + "' (expected cross_entropy or mse)");
}

std::string to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "cross_entropy"; }

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
    Tensor t(Shape{labels.size(), classes});
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
            throw std::out_of_range("one_hot: label out of range");
        t[r * classes + static_cast<std::size_t>(labels[r])] = 1.0;
    }
    return t;
}

Var Model::forward(const Var& x, ForwardContext& ctx) {
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            h = layers_[i]->forward(h, ctx);
        } catch (const NumericalError& e) {
            throw NumericalError("layer " + std::to_string(i) + " (" + layers_[i]->kind() + ")", e.what());
        }
    }
    return h;
}

Var Model::loss(const Var& output, const std::vector<int>& labels) const {
    if (loss_ == LossKind::cross_entropy) return softmax_cross_entropy(output, labels);
    return mse_loss(output, one_hot(labels, classes_));
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    for (auto& layer : layers_)
        for (Parameter* p : layer->parameters()) out.push_back(p);
    return out;
}

std::size_t Model::parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->value().numel();
    return n;
}

std::vector<Tensor*> Model::buffers() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_)
        for (Tensor* b : layer->buffers()) out.push_back(b);
    return out;
}

void Model::zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
}

void Model::save(const std::filesystem::path& path) {
    std::vector<const Tensor*> all;
    for (Parameter* p : parameters()) all.push_back(&p->value());
    for (Tensor* b : buffers()) all.push_back(b);
    write_tensors(path, all);
}

void Model::load(const std::filesystem::path& path) {
    std::vector<Tensor> loaded = read_tensors(path);
    std::vector<Tensor*> targets;
    for (Parameter* p : parameters()) targets.push_back(&p->value());
    for (Tensor* b : buffers()) targets.push_back(b);
    if (loaded.size() != targets.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(loaded.size()) + " tensors, model expects " +
                                 std::to_string(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (loaded[i].shape() != targets[i]->shape())
            throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " has shape " +
                                     shape_str(loaded[i].shape()) + ", expected " + shape_str(targets[i]->shape()));
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = std::move(loaded[i]);
}

Model build_custom_cnn(Rng& rng, LossKind loss, std::size_t in_channels, std::size_t classes) {
    Model m(loss, classes);
    const std::size_t widths[] = {8, 16, 32, 64};
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string tag = "conv" + std::to_string(i + 1);
        m.add<Conv2d>(c, widths[i], 3, i == 0 ? 1 : 2, 1, rng, true, tag);
        m.add<BatchNorm>(widths[i], 1e-5, 0.1, "bn" + std::to_string(i + 1));
        m.add<ReLU>();
        c = widths[i];
    }
    m.add<Dropout>(0.2);
    m.add<Flatten>();
    m.add<Dense>(64 * 4 * 4, classes, rng, true, "fc");
    return m;
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

Model build_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes, Activation act,
                Rng& rng, LossKind loss) {
    Model m(loss, classes);
    m.add<Flatten>();
    std::size_t width = inputs;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        m.add<Dense>(width, hidden[i], rng, true, "fc" + std::to_string(i + 1));
        switch (act) {
            case Activation::relu: m.add<ReLU>(); break;
            case Activation::tanh: m.add<Tanh>(); break;
            case Activation::sigmoid: m.add<Sigmoid>(); break;
        }
        width = hidden[i];
    }
    m.add<Dense>(width, classes, rng, true, "out");
    return m;
}

Model build_linear(std::size_t inputs, std::size_t outputs, Rng& rng, LossKind loss, bool bias) {
    Model m(loss, outputs);
    m.add<Flatten>();
    m.add<Dense>(inputs, outputs, rng, bias, "linear");
    return m;
}

namespace {

constexpr char kMagic[8] = {'I', 'N', 'S', 'G', 'D', 'W', '0', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& is) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) throw std::runtime_error("checkpoint truncated");
        v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const std::vector<const Tensor*>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
        for (auto e : t->shape()) put_le<std::uint64_t>(os, e);
        for (double v : t->data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Tensor> read_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic))
        throw std::runtime_error(path.string() + ": not a weight file");
    const auto count = get_le<std::uint32_t>(is);
    std::vector<Tensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto rank = get_le<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
        out.emplace_back(std::move(shape), std::move(data));
    }
    return out;
}

}  // namespace insgd
