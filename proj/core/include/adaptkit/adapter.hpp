#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace adaptkit::adapter {

enum class Method { full, lora, rslora, dora };

std::string_view method_label(Method method);
std::optional<Method> parse_method(std::string_view label);

// gamma = alpha / r (lora) or alpha / sqrt(r) (rslora, dora). Rejects full
// and r == 0.
double scaling_factor(Method method, double alpha, size_t r);

// Trainable parameters: full d_in*d_out, lora/rslora r*(d_in+d_out),
// dora r*(d_in+d_out) + d_out (the magnitude vector).
size_t param_count(Method method, size_t d_in, size_t d_out, size_t r);

// W0 is d_out x d_in and frozen for the adapter methods. A (r x d_in) and
// B (d_out x r) hold the low-rank factors; m (d_out, dora only) holds one
// magnitude per output row. For `full`, W0 itself is the trainable matrix
// and A/B/m stay empty.
struct AdapterLayer {
    Method method = Method::lora;
    Eigen::MatrixXd W0;
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::VectorXd m;
    double gamma = 0.0;
};

// B starts all-zero so the initial forward equals W0*x; A entries are drawn
// row-major as (2u - 1)/sqrt(d_in) from the named PRNG; for dora, m starts
// as the per-row norms of W0.
AdapterLayer init_layer(Method method, Eigen::MatrixXd W0, size_t r, double gamma,
                        uint64_t seed);

// Dimension/shape invariants; throws validation_error on any mismatch.
void check_layer(const AdapterLayer& layer);

// y = W0*x + gamma*B*(A*x) for lora/rslora, W0*x for full; dora delegates
// to dora_forward.
Eigen::VectorXd adapter_forward(const AdapterLayer& layer, const Eigen::VectorXd& x);

// With V = W0 + gamma*B*A, output row i is (m_i / ||V_i||) * (V*x)_i. A
// zero-norm row of V is a singularity and is rejected outright.
Eigen::VectorXd dora_forward(const AdapterLayer& layer, const Eigen::VectorXd& x);

// Gradients of <upstream, forward(x)> with respect to the trainable
// parameters. Unused members stay empty.
struct Grads {
    Eigen::MatrixXd W0;  // full only
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::VectorXd m;  // dora only

    double norm() const;  // Euclidean norm over all present entries
};

Grads adapter_grads(const AdapterLayer& layer, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& upstream);

// Max over trainable parameters of |analytic - central difference| /
// max(|analytic|, |difference|, 1e-12). The two-argument objective is
// 0.5*||forward(x)||^2, i.e. upstream = forward(x) held fixed.
double gradient_check(const AdapterLayer& layer, const Eigen::VectorXd& x, double eps);
double gradient_check(const AdapterLayer& layer, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& upstream, double eps);

// Euclidean norm of the analytic-minus-central-difference vector over all
// parameters; halving eps shrinks it about 4x on curved objectives.
double fd_discrepancy(const AdapterLayer& layer, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& upstream, double eps);

struct AdapterConfig {
    Method method = Method::lora;
    size_t r = 0;        // absent (0) for full
    double alpha = 0.0;  // unused for full
    double dropout = 0.0;
    double learning_rate = 0.0;
    std::set<std::string> targets;
};

const std::set<std::string>& default_targets();  // q k v o gate up down

// Every violated invariant, one message each; empty means valid.
std::vector<std::string> validate_adapter_config(const AdapterConfig& cfg);

struct TrainConfig {
    size_t per_device_batch = 0;
    size_t grad_accum_steps = 0;
    size_t effective_batch = 0;
    size_t sequence_length = 0;
    size_t warmup_steps = 0;
    size_t epochs = 0;
    double eval_split = 0.0;
    uint64_t seed = 42;
};

std::vector<std::string> validate_train_config(const TrainConfig& cfg);

// cpt-table3, sft-full, sft-lora-r64, sft-rslora-r128, sft-rslora-r256,
// sft-dora-r256. The sft presets share the cpt schedule but use a 5% eval
// split; adapter_preset is empty for cpt-table3 (no adapter there).
std::optional<TrainConfig> train_preset(std::string_view name);
std::optional<AdapterConfig> adapter_preset(std::string_view name);

struct TrainTelemetry {
    std::vector<double> losses;      // recorded before each update
    std::vector<double> grad_norms;  // adapter-gradient norm at the same point
    double final_eval_loss = 0.0;
    bool diverged = false;
};

struct ToyTrainOptions {
    double learning_rate = 0.05;
    double dropout = 0.0;
};

// Fixed 32->32 linear regression: frozen W0, targets from a hidden
// perturbation of it, mean-squared loss, full-batch gradient descent.
// Deterministic for a fixed seed; divergence stops early with the partial
// telemetry and the flag set instead of throwing.
TrainTelemetry toy_train(Method method, size_t r, double alpha, size_t steps, uint64_t seed,
                         const ToyTrainOptions& opts = {});

// JSONL, one line per step: {"step", "loss", "grad_norm"}; a final line
// carries {"final_eval_loss", "diverged"}.
void write_telemetry_jsonl(const std::string& path, const TrainTelemetry& telemetry);

}  // namespace adaptkit::adapter
