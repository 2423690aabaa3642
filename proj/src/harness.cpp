#include "insgd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#ifndef INSGD_VERSION
#define INSGD_VERSION "unknown"
#endif

namespace insgd::harness {

using nlohmann::json;

double apply_schedule(std::size_t epoch, const Schedule& schedule, double base_lr) {
    double lr = base_lr;
    for (std::size_t m : schedule.milestones)
        if (m <= epoch) lr *= schedule.factor;
    return lr;
}

std::string build_version() { return INSGD_VERSION; }

std::string config_hash(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string optimizer_label(const HyperParams& hp) {
    std::string label = to_string(hp.kind);
    if (hp.kind == OptimizerKind::insgd) {
        label += hp.norm_order == 1 ? "-l1" : "-l2";
        if (hp.mode == NormalizerMode::raw) label += "-raw";
    }
    return label;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

data::AugmentSpec parse_augment(const json& j) {
    check_keys(j, {"pad", "crop", "hflip_prob", "mean", "std"}, "augment");
    data::AugmentSpec a;
    read_opt(j, "pad", a.pad);
    if (j.contains("crop")) {
        auto crop = j.at("crop").get<std::vector<std::size_t>>();
        if (crop.size() != 2) throw ConfigError("augment.crop must be [h, w]");
        a.crop_h = crop[0];
        a.crop_w = crop[1];
    }
    read_opt(j, "hflip_prob", a.hflip_prob);
    read_opt(j, "mean", a.mean);
    read_opt(j, "std", a.stddev);
    return a;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    RunConfig c;
    try {
        check_keys(j, {"task", "model", "dataset", "optimizer", "loss", "schedule", "batch_size", "epochs", "seed",
                       "augment", "out_dir", "grid", "jobs"},
                   "config");
        read_opt(j, "task", c.task);
        if (c.task != "train" && c.task != "compare" && c.task != "sysid")
            throw ConfigError("task must be train, compare or sysid");
        if (j.contains("model")) {
            const auto& m = j.at("model");
            check_keys(m, {"kind", "hidden", "activation"}, "model");
            read_opt(m, "kind", c.model.kind);
            read_opt(m, "hidden", c.model.hidden);
            read_opt(m, "activation", c.model.activation);
            if (c.model.kind != "linear" && c.model.kind != "mlp" && c.model.kind != "custom_cnn")
                throw ConfigError("model.kind must be linear, mlp or custom_cnn");
            parse_activation(c.model.activation);
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            check_keys(d, {"kind", "path", "classes", "dim", "shape", "separation", "train_per_class",
                           "test_per_class", "subset_seed"},
                       "dataset");
            read_opt(d, "kind", c.dataset.kind);
            read_opt(d, "path", c.dataset.path);
            read_opt(d, "classes", c.dataset.classes);
            read_opt(d, "dim", c.dataset.dim);
            read_opt(d, "shape", c.dataset.sample_shape);
            read_opt(d, "separation", c.dataset.separation);
            read_opt(d, "train_per_class", c.dataset.train_per_class);
            read_opt(d, "test_per_class", c.dataset.test_per_class);
            read_opt(d, "subset_seed", c.dataset.subset_seed);
            if (c.dataset.kind != "blobs" && c.dataset.kind != "mnist" && c.dataset.kind != "cifar10")
                throw ConfigError("dataset.kind must be blobs, mnist or cifar10");
            if (c.dataset.kind == "blobs") {
                if (c.dataset.classes == 0 || c.dataset.dim == 0 || c.dataset.train_per_class == 0)
                    throw ConfigError("blobs need classes, dim and train_per_class > 0");
                if (!c.dataset.sample_shape.empty() &&
                    (c.dataset.sample_shape.size() != 3 ||
                     shape_numel(c.dataset.sample_shape) != c.dataset.dim))
                    throw ConfigError("dataset.shape must be [C,H,W] with C*H*W == dim");
            } else if (c.dataset.path.empty()) {
                throw ConfigError("dataset.path is required for " + c.dataset.kind);
            }
        }
        if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<HyperParams>();
        if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            check_keys(s, {"milestones", "factor"}, "schedule");
            read_opt(s, "milestones", c.schedule.milestones);
            read_opt(s, "factor", c.schedule.factor);
        }
        for (std::size_t i = 1; i < c.schedule.milestones.size(); ++i)
            if (c.schedule.milestones[i] <= c.schedule.milestones[i - 1])
                throw ConfigError("schedule.milestones must be strictly increasing");
        if (!(c.schedule.factor > 0.0 && c.schedule.factor <= 1.0))
            throw ConfigError("schedule.factor must be in (0, 1]");
        read_opt(j, "batch_size", c.batch_size);
        read_opt(j, "epochs", c.epochs);
        read_opt(j, "seed", c.seed);
        read_opt(j, "out_dir", c.out_dir);
        read_opt(j, "jobs", c.jobs);
        if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
        if (c.model.kind == "custom_cnn" && c.batch_size < 2)
            throw ConfigError("batch_size must be >= 2 with batch normalization");
        if (c.jobs == 0) throw ConfigError("jobs must be positive");
        if (j.contains("augment") && !j.at("augment").is_null()) c.augment = parse_augment(j.at("augment"));
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            check_keys(g, {"optimizers", "lrs", "seeds"}, "grid");
            if (g.contains("optimizers"))
                for (const auto& o : g.at("optimizers")) c.grid.optimizers.push_back(o.get<HyperParams>());
            read_opt(g, "lrs", c.grid.lrs);
            read_opt(g, "seeds", c.grid.seeds);
            for (double lr : c.grid.lrs)
                if (!(lr > 0.0)) throw ConfigError("grid.lrs must be positive");
        }
        if (c.task == "compare" && (c.grid.optimizers.empty() || c.grid.lrs.empty() || c.grid.seeds.empty()))
            throw ConfigError("compare needs grid.optimizers, grid.lrs and grid.seeds");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    c.source = j;
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

namespace {

void append_number(std::string& out, double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

}  // namespace

std::string format_metrics_csv(const std::vector<MetricsRecord>& records) {
    std::string out = "epoch,step,split,loss,accuracy,lr,normalizer_mean\n";
    for (const auto& r : records) {
        out += std::to_string(r.epoch);
        out += ',';
        out += std::to_string(r.step);
        out += ',';
        out += r.split;
        out += ',';
        append_number(out, r.loss);
        out += ',';
        append_number(out, r.accuracy);
        out += ',';
        append_number(out, r.lr);
        out += ',';
        if (r.normalizer_mean) append_number(out, *r.normalizer_mean);
        out += '\n';
    }
    return out;
}

Splits load_datasets(const DatasetSpec& spec) {
    try {
        if (spec.kind == "blobs") {
            data::Dataset all =
                data::make_blobs(spec.classes, spec.train_per_class + spec.test_per_class, spec.dim, spec.separation,
                                 spec.subset_seed, Shape(spec.sample_shape.begin(), spec.sample_shape.end()));
            auto [train, test] = data::split_stratified(all, spec.train_per_class, spec.test_per_class,
                                                        spec.subset_seed + 1);
            return {std::move(train), std::move(test)};
        }
        const std::filesystem::path dir(spec.path);
        data::Dataset train, test;
        if (spec.kind == "mnist") {
            for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                                  "t10k-labels-idx1-ubyte"})
                if (!std::filesystem::is_regular_file(dir / f))
                    throw DataError("missing MNIST file " + (dir / f).string());
            train = data::load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
            test = data::load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
        } else {
            if (!data::cifar10_available(dir))
                throw DataError("CIFAR-10 binary batches not found in " + dir.string() +
                                " (expected data_batch_1..5.bin and test_batch.bin)");
            std::tie(train, test) = data::load_cifar10(dir);
        }
        if (spec.train_per_class) train = data::subset(train, spec.train_per_class, spec.subset_seed);
        if (spec.test_per_class) test = data::subset(test, spec.test_per_class, spec.subset_seed + 1);
        return {std::move(train), std::move(test)};
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
}

Model build_model(const RunConfig& config, const Shape& sample_shape, std::size_t classes, Rng& rng) {
    const std::size_t inputs = shape_numel(sample_shape);
    if (config.model.kind == "custom_cnn") {
        if (sample_shape.size() != 3 || sample_shape[1] != 32 || sample_shape[2] != 32)
            throw ConfigError("custom_cnn expects 32x32 inputs, got " + shape_str(sample_shape));
        return build_custom_cnn(rng, config.loss, sample_shape[0], classes);
    }
    if (config.model.kind == "mlp")
        return build_mlp(inputs, config.model.hidden, classes, parse_activation(config.model.activation), rng,
                         config.loss);
    return build_linear(inputs, classes, rng, config.loss);
}

namespace {

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalResult evaluate(Model& model, const data::Dataset& ds, const RunConfig& config, Rng& rng) {
    if (ds.size() == 0) return {};
    NoGradGuard no_grad;
    ForwardContext ctx{Mode::eval, &rng};
    double loss_sum = 0.0;
    std::size_t hits = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += config.batch_size) {
        const std::size_t end = std::min(ds.size(), start + config.batch_size);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
        Tensor x = ds.gather_images(idx);
        if (config.augment) x = data::augment(x, *config.augment, rng, data::AugmentMode::eval);
        const auto labels = ds.gather_labels(idx);
        Var out = model.forward(constant(std::move(x)), ctx);
        loss_sum += model.loss(out, labels).value().item() * static_cast<double>(labels.size());
        hits += count_correct(out.value(), labels);
    }
    const double n = static_cast<double>(ds.size());
    return {loss_sum / n, static_cast<double>(hits) / n};
}

bool has_batchnorm(const Model& m) {
    for (const auto& l : m.layers())
        if (l->kind() == "batchnorm") return true;
    return false;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace

RunResult run_training(const RunConfig& config, const Splits& data, const RunOptions& options) {
    if (data.train.size() == 0) throw DataError("training split is empty");
    Rng rng(config.seed);
    Model model = build_model(config, data.train.sample_shape(), data.train.classes, rng);
    auto opt = make_optimizer(config.optimizer);
    const bool bn = has_batchnorm(model);
    if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

    RunResult result;
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng eval_rng(config.seed ^ 0x5851F42D4C957F2DULL);
    bool have_best = false;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = apply_schedule(epoch, config.schedule, config.optimizer.lr);
        opt->set_lr(lr);
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t seen = 0, hits = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                const std::size_t end = std::min(order.size(), start + config.batch_size);
                if (bn && end - start < 2) break;  // batch statistics need two samples
                std::span<const std::size_t> idx(order.data() + start, end - start);
                Tensor x = data.train.gather_images(idx);
                if (config.augment) x = data::augment(x, *config.augment, rng, data::AugmentMode::train);
                const auto labels = data.train.gather_labels(idx);
                std::size_t correct = 0;
                const double loss = train_step(model, *opt, x, labels, rng, &correct);
                loss_sum += loss * static_cast<double>(labels.size());
                hits += correct;
                seen += labels.size();
                ++result.steps;
            }
            const EvalResult test = evaluate(model, data.test, config, eval_rng);
            const double train_acc = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
            result.metrics.push_back({epoch, result.steps, "train", seen ? loss_sum / static_cast<double>(seen) : 0.0,
                                      train_acc, lr, opt->normalizer_mean()});
            result.metrics.push_back({epoch, result.steps, "test", test.loss, test.accuracy, lr,
                                      opt->normalizer_mean()});
            result.final_train_accuracy = train_acc;
            if (!have_best || test.accuracy > result.best_test_accuracy) {
                have_best = true;
                result.best_test_accuracy = test.accuracy;
                result.best_epoch = epoch;
                if (!options.out_dir.empty()) model.save(options.out_dir / "best.bin");
            }
        } catch (const NumericalError& e) {
            result.abort_cause = std::string("numerical abort in epoch ") + std::to_string(epoch) + ": " + e.what();
            break;
        }
        result.epoch_wall_ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (!options.quiet) {
            const auto& tr = result.metrics[result.metrics.size() - 2];
            const auto& te = result.metrics.back();
            std::cerr << "epoch " << epoch << " lr " << lr << " train loss " << tr.loss << " acc " << tr.accuracy
                      << " | test loss " << te.loss << " acc " << te.accuracy << '\n';
        }
    }

    if (!options.out_dir.empty()) {
        write_text(options.out_dir / "metrics.csv", format_metrics_csv(result.metrics));
        std::string timing = "epoch,wall_ms\n";
        for (std::size_t e = 0; e < result.epoch_wall_ms.size(); ++e) {
            timing += std::to_string(e) + ',';
            append_number(timing, result.epoch_wall_ms[e]);
            timing += '\n';
        }
        write_text(options.out_dir / "timing.csv", timing);
        json manifest{{"config", config.source},
                      {"seed", config.seed},
                      {"config_hash", config_hash(config.source)},
                      {"version", build_version()},
                      {"status", result.abort_cause ? "aborted" : "ok"},
                      {"best_test_accuracy", result.best_test_accuracy},
                      {"best_epoch", result.best_epoch},
                      {"steps", result.steps}};
        if (result.abort_cause) manifest["abort_cause"] = *result.abort_cause;
        write_text(options.out_dir / "manifest.json", manifest.dump(2) + "\n");
    }
    return result;
}

int cmd_train(const std::filesystem::path& config_path, const std::optional<std::string>& out_dir, bool quiet) {
    RunConfig config;
    try {
        config = load_run_config(config_path);
        if (config.task != "train") throw ConfigError("config task is '" + config.task + "', expected train");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    if (out_dir) config.out_dir = *out_dir;
    Splits splits;
    try {
        splits = load_datasets(config.dataset);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataMissing;
    }
    RunResult r;
    try {
        r = run_training(config, splits, RunOptions{config.out_dir, quiet});
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    if (r.abort_cause) {
        std::cerr << r.abort_cause.value() << '\n';
        return kNumericalAbort;
    }
    if (!quiet)
        std::cout << "best test accuracy " << r.best_test_accuracy << " at epoch " << r.best_epoch << "; outputs in "
                  << config.out_dir << '\n';
    return kOk;
}

namespace {

struct GridRun {
    HyperParams hp;
    std::uint64_t seed;
    std::string dir_name;
    RunResult result;
};

std::string lr_tag(double lr) {
    std::string s;
    append_number(s, lr);
    return s;
}

}  // namespace

int cmd_compare(const std::filesystem::path& config_path, const std::optional<std::string>& out_dir, bool quiet,
                std::optional<std::size_t> jobs) {
    RunConfig config;
    try {
        config = load_run_config(config_path);
        if (config.task != "compare") throw ConfigError("config task is '" + config.task + "', expected compare");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    if (out_dir) config.out_dir = *out_dir;
    if (jobs) config.jobs = std::max<std::size_t>(1, *jobs);
    Splits splits;
    try {
        splits = load_datasets(config.dataset);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataMissing;
    }

    std::vector<GridRun> runs;
    for (const auto& base : config.grid.optimizers)
        for (double lr : config.grid.lrs)
            for (std::uint64_t seed : config.grid.seeds) {
                HyperParams hp = base;
                hp.lr = lr;
                runs.push_back({hp, seed, optimizer_label(hp) + "_lr" + lr_tag(lr) + "_s" + std::to_string(seed), {}});
            }

    const std::filesystem::path root(config.out_dir);
    std::filesystem::create_directories(root / "runs");
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    std::exception_ptr failure;
    auto worker = [&]() {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            try {
                RunConfig rc = config;
                rc.optimizer = runs[i].hp;
                rc.seed = runs[i].seed;
                rc.task = "train";
                rc.source["optimizer"] = runs[i].hp;
                rc.source["seed"] = runs[i].seed;
                rc.source["task"] = "train";
                rc.source.erase("grid");
                runs[i].result = run_training(rc, splits, RunOptions{root / "runs" / runs[i].dir_name, true});
                if (!quiet) {
                    std::lock_guard lock(log_mutex);
                    std::cerr << runs[i].dir_name << ": best test accuracy " << runs[i].result.best_test_accuracy
                              << (runs[i].result.abort_cause ? " (aborted)" : "") << '\n';
                }
            } catch (...) {
                std::lock_guard lock(log_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min(config.jobs, runs.size()); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return kConfigError;
        } catch (const std::exception& e) {
            std::cerr << "run failed: " << e.what() << '\n';
            return kDataMissing;
        }
    }

    std::string summary = "optimizer,norm_order,lr,seed,best_test_acc,status\n";
    for (const auto& r : runs) {
        summary += optimizer_label(r.hp) + ',';
        summary += r.hp.kind == OptimizerKind::insgd ? std::to_string(r.hp.norm_order) : std::string();
        summary += ',' + lr_tag(r.hp.lr) + ',' + std::to_string(r.seed) + ',';
        append_number(summary, r.result.best_test_accuracy);
        summary += r.result.abort_cause ? ",aborted\n" : ",ok\n";
    }
    write_text(root / "summary.csv", summary);
    json manifest{{"config", config.source},
                  {"config_hash", config_hash(config.source)},
                  {"version", build_version()},
                  {"runs", runs.size()}};
    write_text(root / "manifest.json", manifest.dump(2) + "\n");

    if (!quiet) {
        std::map<std::pair<std::string, double>, std::pair<double, std::size_t>> means;
        for (const auto& r : runs) {
            auto& m = means[{optimizer_label(r.hp), r.hp.lr}];
            m.first += r.result.best_test_accuracy;
            ++m.second;
        }
        for (const auto& [key, m] : means)
            std::cout << key.first << " lr " << key.second << ": mean best test accuracy "
                      << m.first / static_cast<double>(m.second) << '\n';
    }
    return kOk;
}

int cmd_sysid(const SysIdArgs& args) {
    filter::SysIdResult r;
    try {
        if (!(args.mu > 0.0)) throw std::invalid_argument("--mu must be > 0");
        const auto scenario = filter::make_scenario(args.taps, args.rho, args.noise, args.steps, args.seed);
        r = filter::run_sysid(scenario, args.algo, args.mu, args.seed);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    const std::filesystem::path dir(args.out_dir);
    std::filesystem::create_directories(dir);
    std::string csv = "step,err_norm,mse\n";
    for (const auto& p : r.trace) {
        csv += std::to_string(p.step) + ',';
        append_number(csv, p.err_norm);
        csv += ',';
        append_number(csv, p.mse);
        csv += '\n';
    }
    write_text(dir / "trace.csv", csv);
    if (!args.quiet)
        std::cout << filter::to_string(args.algo) << " mu=" << args.mu << " final err_norm=" << r.final_err_norm
                  << " min err_norm=" << r.min_err_norm << " mse=" << r.final_mse << " initial mse=" << r.initial_mse
                  << (r.diverged ? " diverged" : " converged") << '\n';
    return kOk;
}

}  // namespace insgd::harness
