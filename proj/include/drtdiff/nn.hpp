#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "drtdiff/matrix.hpp"

namespace drtdiff::nn {

enum class Activation { relu, tanh, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Fully connected network shape: layer_dims = [d0, d1, ..., dL].
struct Architecture {
    std::vector<int> layer_dims;
    Activation activation = Activation::relu;
    bool bias = true;

    int num_layers() const noexcept { return static_cast<int>(layer_dims.size()) - 1; }
    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    /// Flat length of layer p (0-based): d_{p+1} * d_p (+ d_{p+1} with bias).
    std::size_t layer_size(int p) const;

    /// Throws InvalidArgument if L < 1 or any dim < 1.
    void validate() const;
};

/// Per-layer flat parameter vectors. Layer p stores its d_{p+1} x d_p weight
/// matrix row-major, followed by the bias vector when enabled.
struct LayeredParams {
    std::vector<std::vector<double>> layers;

    int num_layers() const noexcept { return static_cast<int>(layers.size()); }
    std::size_t total_size() const;

    friend bool operator==(const LayeredParams&, const LayeredParams&) = default;
};

/// Inputs are B x d0; labels index into [0, dL).
struct Batch {
    Matrix inputs;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

struct LossGrad {
    double loss = 0.0;
    LayeredParams grad;
};

/// Zero-mean normal weights with std sqrt(2/fan_in) for relu and
/// sqrt(1/fan_in) otherwise; zero biases.
LayeredParams init_params(const Architecture& arch, std::uint64_t seed);

LayeredParams zeros_like(const Architecture& arch);

/// Checks layer count and per-layer lengths against `arch`.
void check_shape(const Architecture& arch, const LayeredParams& params);

/// Returns B x dL logits. Activation is applied after every layer but the last.
Matrix forward(const Architecture& arch, const LayeredParams& params, const Matrix& x);

/// Mean softmax cross-entropy and its analytic gradient.
LossGrad loss_and_grad(const Architecture& arch, const LayeredParams& params, const Batch& batch);

/// Mean softmax cross-entropy only.
double loss(const Architecture& arch, const LayeredParams& params, const Batch& batch);

/// Fraction of rows whose argmax logit equals the label.
double accuracy(const Architecture& arch, const LayeredParams& params, const Batch& batch);

/// Central-difference gradient, one coordinate at a time.
LayeredParams finite_diff_grad(const Architecture& arch, const LayeredParams& params, const Batch& batch, double h);

/// Euclidean norm of each flattened layer.
std::vector<double> layer_norms(const LayeredParams& params);
std::vector<double> layer_sq_norms(const LayeredParams& params);

// Small vector-space helpers over LayeredParams.
void axpy(double alpha, const LayeredParams& x, LayeredParams& y);
LayeredParams difference(const LayeredParams& a, const LayeredParams& b);
double squared_distance(const LayeredParams& a, const LayeredParams& b);
double max_abs_diff(const LayeredParams& a, const LayeredParams& b);
bool all_finite(const LayeredParams& p);

/// Text checkpoint: `L`, then the L layer lengths, then every value.
void write_params(std::ostream& os, const LayeredParams& p);
LayeredParams read_params(std::istream& is);

}  // namespace drtdiff::nn
