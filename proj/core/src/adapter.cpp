#include "adaptkit/adapter.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "adaptkit/errors.hpp"
#include "adaptkit/prng.hpp"

namespace adaptkit::adapter {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::array<std::string_view, 4> kMethodLabels = {"full", "lora", "rslora", "dora"};

constexpr size_t kToyDim = 32;
constexpr size_t kToyTrainSize = 64;
constexpr size_t kToyEvalSize = 16;

bool is_adapter(Method method) { return method != Method::full; }

void fill_uniform(MatrixXd& mat, Xoshiro256& gen, double scale) {
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
        for (Eigen::Index j = 0; j < mat.cols(); ++j) {
            mat(i, j) = (2.0 * gen.next_double() - 1.0) * scale;
        }
    }
}

}  // namespace

std::string_view method_label(Method method) {
    return kMethodLabels[static_cast<size_t>(method)];
}

std::optional<Method> parse_method(std::string_view label) {
    for (size_t i = 0; i < kMethodLabels.size(); ++i) {
        if (kMethodLabels[i] == label) return static_cast<Method>(i);
    }
    return std::nullopt;
}

double scaling_factor(Method method, double alpha, size_t r) {
    if (method == Method::full) {
        throw validation_error("full fine-tuning has no adapter scaling factor");
    }
    if (r == 0) throw validation_error("adapter rank must be >= 1");
    if (!(alpha > 0.0)) throw validation_error("alpha must be positive");
    if (method == Method::lora) return alpha / static_cast<double>(r);
    return alpha / std::sqrt(static_cast<double>(r));  // rslora; dora shares it
}

size_t param_count(Method method, size_t d_in, size_t d_out, size_t r) {
    switch (method) {
        case Method::full:
            return d_in * d_out;
        case Method::dora:
            return r * (d_in + d_out) + d_out;
        default:
            return r * (d_in + d_out);
    }
}

AdapterLayer init_layer(Method method, MatrixXd W0, size_t r, double gamma, uint64_t seed) {
    if (W0.rows() == 0 || W0.cols() == 0) throw validation_error("W0 must be non-empty");
    AdapterLayer layer;
    layer.method = method;
    layer.W0 = std::move(W0);
    layer.gamma = gamma;
    if (is_adapter(method)) {
        if (r == 0) throw validation_error("adapter rank must be >= 1");
        const auto d_in = layer.W0.cols();
        const auto d_out = layer.W0.rows();
        layer.A.resize(static_cast<Eigen::Index>(r), d_in);
        Xoshiro256 gen(seed);
        fill_uniform(layer.A, gen, 1.0 / std::sqrt(static_cast<double>(d_in)));
        layer.B = MatrixXd::Zero(d_out, static_cast<Eigen::Index>(r));
        if (method == Method::dora) layer.m = layer.W0.rowwise().norm();
    }
    return layer;
}

void check_layer(const AdapterLayer& layer) {
    if (layer.W0.rows() == 0 || layer.W0.cols() == 0) {
        throw validation_error("adapter layer has empty W0");
    }
    if (!is_adapter(layer.method)) {
        if (layer.A.size() != 0 || layer.B.size() != 0 || layer.m.size() != 0) {
            throw validation_error("full layer must not carry adapter factors");
        }
        return;
    }
    if (layer.A.rows() == 0) throw validation_error("adapter layer has empty A");
    if (layer.A.cols() != layer.W0.cols()) {
        throw validation_error("A column count must match W0 column count");
    }
    if (layer.B.rows() != layer.W0.rows() || layer.B.cols() != layer.A.rows()) {
        throw validation_error("B must be d_out x r");
    }
    if (layer.method == Method::dora) {
        if (layer.m.size() != layer.W0.rows()) {
            throw validation_error("m must have one entry per output row");
        }
    } else if (layer.m.size() != 0) {
        throw validation_error("m is only present for dora layers");
    }
}

Eigen::VectorXd adapter_forward(const AdapterLayer& layer, const VectorXd& x) {
    if (layer.method == Method::dora) return dora_forward(layer, x);
    check_layer(layer);
    if (x.size() != layer.W0.cols()) throw validation_error("x size must match W0 columns");
    if (layer.method == Method::full) return layer.W0 * x;
    return layer.W0 * x + layer.gamma * (layer.B * (layer.A * x));
}

Eigen::VectorXd dora_forward(const AdapterLayer& layer, const VectorXd& x) {
    if (layer.method != Method::dora) throw validation_error("dora_forward requires a dora layer");
    check_layer(layer);
    if (x.size() != layer.W0.cols()) throw validation_error("x size must match W0 columns");
    const MatrixXd V = layer.W0 + layer.gamma * layer.B * layer.A;
    const VectorXd norms = V.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
        if (norms(i) == 0.0) {
            throw validation_error("composed matrix has a zero-norm row at index " +
                                   std::to_string(i));
        }
    }
    const VectorXd vx = V * x;
    return (layer.m.array() / norms.array() * vx.array()).matrix();
}

double Grads::norm() const {
    double sq = W0.squaredNorm() + A.squaredNorm() + B.squaredNorm() + m.squaredNorm();
    return std::sqrt(sq);
}

Grads adapter_grads(const AdapterLayer& layer, const VectorXd& x, const VectorXd& upstream) {
    check_layer(layer);
    if (x.size() != layer.W0.cols()) throw validation_error("x size must match W0 columns");
    if (upstream.size() != layer.W0.rows()) {
        throw validation_error("upstream size must match W0 rows");
    }
    Grads g;
    switch (layer.method) {
        case Method::full:
            g.W0 = upstream * x.transpose();
            return g;
        case Method::lora:
        case Method::rslora: {
            const VectorXd ax = layer.A * x;
            g.B = layer.gamma * upstream * ax.transpose();
            g.A = layer.gamma * (layer.B.transpose() * upstream) * x.transpose();
            return g;
        }
        case Method::dora: {
            const MatrixXd V = layer.W0 + layer.gamma * layer.B * layer.A;
            const VectorXd norms = V.rowwise().norm();
            for (Eigen::Index i = 0; i < norms.size(); ++i) {
                if (norms(i) == 0.0) {
                    throw validation_error("composed matrix has a zero-norm row at index " +
                                           std::to_string(i));
                }
            }
            const VectorXd vx = V * x;
            g.m = (upstream.array() * vx.array() / norms.array()).matrix();
            // dL/dV_ij = u_i (m_i/n_i) (x_j - (V_i . x) V_ij / n_i^2)
            const VectorXd row_scale = (upstream.array() * layer.m.array() / norms.array());
            const VectorXd diag = (row_scale.array() * vx.array() /
                                   (norms.array() * norms.array()));
            const MatrixXd G = row_scale * x.transpose() - diag.asDiagonal() * V;
            g.A = layer.gamma * layer.B.transpose() * G;
            g.B = layer.gamma * G * layer.A.transpose();
            return g;
        }
    }
    throw validation_error("unknown adapter method");
}

namespace {

double objective(const AdapterLayer& layer, const VectorXd& x, const VectorXd& upstream) {
    return upstream.dot(adapter_forward(layer, x));
}

// Walks every trainable scalar, handing (analytic, central-difference) pairs
// to the visitor.
template <typename Visit>
void walk_fd(const AdapterLayer& layer, const VectorXd& x, const VectorXd& upstream, double eps,
             Visit&& visit) {
    if (!(eps > 0.0) || eps > 1e-2) throw validation_error("eps must lie in (0, 1e-2]");
    const Grads analytic = adapter_grads(layer, x, upstream);
    AdapterLayer probe = layer;

    auto scan = [&](MatrixXd& param, const MatrixXd& grad) {
        for (Eigen::Index i = 0; i < param.rows(); ++i) {
            for (Eigen::Index j = 0; j < param.cols(); ++j) {
                const double saved = param(i, j);
                param(i, j) = saved + eps;
                const double hi = objective(probe, x, upstream);
                param(i, j) = saved - eps;
                const double lo = objective(probe, x, upstream);
                param(i, j) = saved;
                if (!std::isfinite(hi) || !std::isfinite(lo)) {
                    throw validation_error("non-finite value encountered in gradient check");
                }
                visit(grad(i, j), (hi - lo) / (2.0 * eps));
            }
        }
    };

    if (layer.method == Method::full) {
        scan(probe.W0, analytic.W0);
        return;
    }
    scan(probe.A, analytic.A);
    scan(probe.B, analytic.B);
    if (layer.method == Method::dora) {
        for (Eigen::Index i = 0; i < probe.m.size(); ++i) {
            const double saved = probe.m(i);
            probe.m(i) = saved + eps;
            const double hi = objective(probe, x, upstream);
            probe.m(i) = saved - eps;
            const double lo = objective(probe, x, upstream);
            probe.m(i) = saved;
            if (!std::isfinite(hi) || !std::isfinite(lo)) {
                throw validation_error("non-finite value encountered in gradient check");
            }
            visit(analytic.m(i), (hi - lo) / (2.0 * eps));
        }
    }
}

}  // namespace

double gradient_check(const AdapterLayer& layer, const VectorXd& x,
                      const VectorXd& upstream, double eps) {
    double worst = 0.0;
    walk_fd(layer, x, upstream, eps, [&](double analytic, double fd) {
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-12});
        worst = std::max(worst, std::abs(analytic - fd) / denom);
    });
    return worst;
}

double gradient_check(const AdapterLayer& layer, const VectorXd& x, double eps) {
    return gradient_check(layer, x, adapter_forward(layer, x), eps);
}

double fd_discrepancy(const AdapterLayer& layer, const VectorXd& x, const VectorXd& upstream,
                      double eps) {
    double sq = 0.0;
    walk_fd(layer, x, upstream, eps, [&](double analytic, double fd) {
        const double d = analytic - fd;
        sq += d * d;
    });
    return std::sqrt(sq);
}

const std::set<std::string>& default_targets() {
    static const std::set<std::string> targets = {"q", "k", "v", "o", "gate", "up", "down"};
    return targets;
}

std::vector<std::string> validate_adapter_config(const AdapterConfig& cfg) {
    std::vector<std::string> errors;
    if (cfg.method == Method::full) {
        if (cfg.r != 0) errors.push_back("full fine-tuning takes no rank");
    } else {
        if (cfg.r == 0) errors.push_back("adapter rank must be >= 1");
        if (!(cfg.alpha > 0.0)) errors.push_back("alpha must be positive");
    }
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) errors.push_back("dropout must lie in [0, 1)");
    if (!(cfg.learning_rate > 0.0)) errors.push_back("learning rate must be positive");
    if (cfg.targets.empty()) errors.push_back("target projection set must be non-empty");
    return errors;
}

std::vector<std::string> validate_train_config(const TrainConfig& cfg) {
    std::vector<std::string> errors;
    if (cfg.per_device_batch == 0) errors.push_back("per-device batch must be >= 1");
    if (cfg.grad_accum_steps == 0) errors.push_back("gradient accumulation steps must be >= 1");
    if (cfg.effective_batch != cfg.per_device_batch * cfg.grad_accum_steps) {
        errors.push_back("effective batch must equal per-device batch x accumulation steps");
    }
    if (cfg.sequence_length == 0) errors.push_back("sequence length must be >= 1");
    if (cfg.epochs == 0) errors.push_back("epochs must be >= 1");
    if (!(cfg.eval_split > 0.0) || !(cfg.eval_split < 1.0)) {
        errors.push_back("eval split must lie in (0, 1)");
    }
    return errors;
}

std::optional<TrainConfig> train_preset(std::string_view name) {
    TrainConfig cfg;
    cfg.per_device_batch = 1;
    cfg.grad_accum_steps = 16;
    cfg.effective_batch = 16;
    cfg.sequence_length = 4096;
    cfg.warmup_steps = 50;
    cfg.epochs = 2;
    cfg.seed = 42;
    if (name == "cpt-table3") {
        cfg.eval_split = 0.025;
        return cfg;
    }
    if (name == "sft-full" || name == "sft-lora-r64" || name == "sft-rslora-r128" ||
        name == "sft-rslora-r256" || name == "sft-dora-r256") {
        cfg.eval_split = 0.05;
        return cfg;
    }
    return std::nullopt;
}

std::optional<AdapterConfig> adapter_preset(std::string_view name) {
    AdapterConfig cfg;
    cfg.targets = default_targets();
    cfg.dropout = 0.05;
    if (name == "sft-full") {
        cfg.method = Method::full;
        cfg.dropout = 0.0;
        cfg.learning_rate = 1e-5;
        return cfg;
    }
    if (name == "sft-lora-r64") {
        cfg.method = Method::lora;
        cfg.r = 64;
        cfg.alpha = 128.0;
        cfg.learning_rate = 2e-4;
        return cfg;
    }
    if (name == "sft-rslora-r128") {
        cfg.method = Method::rslora;
        cfg.r = 128;
        cfg.alpha = 128.0;
        cfg.learning_rate = 2e-5;
        return cfg;
    }
    if (name == "sft-rslora-r256") {
        cfg.method = Method::rslora;
        cfg.r = 256;
        cfg.alpha = 256.0;
        cfg.learning_rate = 2e-5;
        return cfg;
    }
    if (name == "sft-dora-r256") {
        cfg.method = Method::dora;
        cfg.r = 256;
        cfg.alpha = 256.0;
        cfg.learning_rate = 2e-5;
        return cfg;
    }
    return std::nullopt;
}

namespace {

// Stream seeds are drawn in a fixed order so each piece of randomness is
// independent of the others for the same master seed.
struct ToyStreams {
    uint64_t w0, target, data, init, dropout;
};

ToyStreams derive_streams(uint64_t seed) {
    SplitMix64 master(seed);
    ToyStreams s{};
    s.w0 = master.next();
    s.target = master.next();
    s.data = master.next();
    s.init = master.next();
    s.dropout = master.next();
    return s;
}

double mean_squared_loss(const AdapterLayer& layer, const MatrixXd& xs, const MatrixXd& ys) {
    double total = 0.0;
    for (Eigen::Index n = 0; n < xs.cols(); ++n) {
        total += (adapter_forward(layer, xs.col(n)) - ys.col(n)).squaredNorm();
    }
    return total / (static_cast<double>(xs.cols()) * static_cast<double>(layer.W0.rows()));
}

}  // namespace

TrainTelemetry toy_train(Method method, size_t r, double alpha, size_t steps, uint64_t seed,
                         const ToyTrainOptions& opts) {
    if (steps == 0) throw validation_error("steps must be >= 1");
    if (opts.dropout < 0.0 || opts.dropout >= 1.0) {
        throw validation_error("dropout must lie in [0, 1)");
    }
    if (!(opts.learning_rate > 0.0)) throw validation_error("learning rate must be positive");

    const ToyStreams streams = derive_streams(seed);
    const auto dim = static_cast<Eigen::Index>(kToyDim);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(kToyDim));

    MatrixXd W0(dim, dim);
    {
        Xoshiro256 gen(streams.w0);
        fill_uniform(W0, gen, inv_sqrt_d);
    }
    MatrixXd W_star = W0;
    {
        MatrixXd delta(dim, dim);
        Xoshiro256 gen(streams.target);
        fill_uniform(delta, gen, 0.1 * inv_sqrt_d);
        W_star += delta;
    }
    MatrixXd x_train(dim, static_cast<Eigen::Index>(kToyTrainSize));
    MatrixXd x_eval(dim, static_cast<Eigen::Index>(kToyEvalSize));
    {
        Xoshiro256 gen(streams.data);
        fill_uniform(x_train, gen, 1.0);
        fill_uniform(x_eval, gen, 1.0);
    }
    const MatrixXd y_train = W_star * x_train;
    const MatrixXd y_eval = W_star * x_eval;

    const double gamma = method == Method::full ? 0.0 : scaling_factor(method, alpha, r);
    AdapterLayer layer = init_layer(method, W0, method == Method::full ? 0 : r, gamma,
                                    streams.init);

    Xoshiro256 dropout_gen(streams.dropout);
    const bool use_dropout = opts.dropout > 0.0 && is_adapter(method);
    const double keep = 1.0 - opts.dropout;
    const double inv_count =
        1.0 / (static_cast<double>(kToyTrainSize) * static_cast<double>(kToyDim));

    TrainTelemetry telemetry;
    telemetry.losses.reserve(steps);
    telemetry.grad_norms.reserve(steps);

    for (size_t step = 0; step < steps; ++step) {
        Grads total;
        if (layer.method == Method::full) {
            total.W0 = MatrixXd::Zero(dim, dim);
        } else {
            total.A = MatrixXd::Zero(layer.A.rows(), layer.A.cols());
            total.B = MatrixXd::Zero(layer.B.rows(), layer.B.cols());
            if (layer.method == Method::dora) total.m = VectorXd::Zero(layer.m.size());
        }
        double loss = 0.0;
        for (Eigen::Index n = 0; n < x_train.cols(); ++n) {
            AdapterLayer active = layer;
            VectorXd scale;
            if (use_dropout) {
                // inverted dropout on the A*x intermediate: scaling row i of
                // A by mask_i/keep masks component i of A*x
                scale.resize(layer.A.rows());
                for (Eigen::Index i = 0; i < scale.size(); ++i) {
                    scale(i) = dropout_gen.next_double() < keep ? 1.0 / keep : 0.0;
                }
                active.A = scale.asDiagonal() * layer.A;
            }
            const VectorXd y = adapter_forward(active, x_train.col(n));
            const VectorXd residual = y - y_train.col(n);
            loss += residual.squaredNorm() * inv_count;
            const VectorXd upstream = 2.0 * inv_count * residual;
            Grads g = adapter_grads(active, x_train.col(n), upstream);
            if (layer.method == Method::full) {
                total.W0 += g.W0;
            } else {
                total.A += use_dropout ? MatrixXd(scale.asDiagonal() * g.A) : g.A;
                total.B += g.B;
                if (layer.method == Method::dora) total.m += g.m;
            }
        }
        const double grad_norm = total.norm();
        if (!std::isfinite(loss) || !std::isfinite(grad_norm)) {
            telemetry.diverged = true;
            break;
        }
        telemetry.losses.push_back(loss);
        telemetry.grad_norms.push_back(grad_norm);
        if (layer.method == Method::full) {
            layer.W0 -= opts.learning_rate * total.W0;
        } else {
            layer.A -= opts.learning_rate * total.A;
            layer.B -= opts.learning_rate * total.B;
            if (layer.method == Method::dora) layer.m -= opts.learning_rate * total.m;
        }
    }

    const double eval_loss = mean_squared_loss(layer, x_eval, y_eval);
    if (std::isfinite(eval_loss)) {
        telemetry.final_eval_loss = eval_loss;
    } else {
        telemetry.diverged = true;
    }
    return telemetry;
}

void write_telemetry_jsonl(const std::string& path, const TrainTelemetry& telemetry) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open output file: " + path);
    using nlohmann::json;
    for (size_t i = 0; i < telemetry.losses.size(); ++i) {
        json doc{{"step", i},
                 {"loss", telemetry.losses[i]},
                 {"grad_norm", telemetry.grad_norms[i]}};
        out << doc.dump() << "\n";
    }
    json tail{{"final_eval_loss", telemetry.final_eval_loss},
              {"diverged", telemetry.diverged}};
    out << tail.dump() << "\n";
    if (!out) throw io_error("write failed: " + path);
}

}  // namespace adaptkit::adapter
