#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "difflab/core.hpp"

namespace difflab {

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// All weights and biases live in one flat buffer. Layer l stores its weight
/// matrix (out x in, row-major) followed by its bias vector.
class Mlp {
public:
    explicit Mlp(std::vector<std::size_t> layer_sizes);

    const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
    std::size_t num_layers() const { return sizes_.size() - 1; }
    std::size_t input_dim() const { return sizes_.front(); }
    std::size_t output_dim() const { return sizes_.back(); }
    std::size_t parameter_count() const { return params_.size(); }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    std::span<double> weights(std::size_t layer);
    std::span<const double> weights(std::size_t layer) const;
    std::span<double> biases(std::size_t layer);
    std::span<const double> biases(std::size_t layer) const;

    friend bool operator==(const Mlp&, const Mlp&) = default;

private:
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;  // start of each layer's weights
    std::vector<double> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
Mlp init_mlp(std::vector<std::size_t> layer_sizes, std::uint64_t seed);

Vector mlp_forward(const Mlp& model, std::span<const double> input);
/// Writes the output into `out` without allocating beyond `scratch`.
void mlp_forward_into(const Mlp& model, std::span<const double> input, std::span<double> out,
                      std::vector<double>& scratch);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grads;  // same layout as Mlp::parameters()
};

/// loss = mean_i weights[i] * ||targets_i - model(inputs_i)||^2 with exact gradients.
LossAndGrad mlp_loss_grad(const Mlp& model, const Batch& inputs, const Batch& targets,
                          std::span<const double> weights);

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    static AdamState for_model(const Mlp& model, double learning_rate = 1e-3);
};

/// One bias-corrected Adam update in place.
void adam_step(Mlp& model, std::span<const double> grads, AdamState& state);

/// Checkpoint: {"layer_sizes": [...], "activation": "tanh",
///              "weights": [[row-major per layer]], "biases": [[per layer]]}.
nlohmann::json to_json(const Mlp& model);
Mlp mlp_from_json(const nlohmann::json& doc);

}  // namespace difflab
