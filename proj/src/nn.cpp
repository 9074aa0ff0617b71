#include "difflab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "difflab/error.hpp"

namespace difflab {

Mlp::Mlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw InvalidArgument("Mlp: need at least an input and an output layer");
    for (auto s : sizes_)
        if (s == 0) throw InvalidArgument("Mlp: layer sizes must be >= 1");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(total);
        total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    }
    params_.assign(total, 0.0);
}

std::span<double> Mlp::weights(std::size_t layer) {
    return {params_.data() + offsets_.at(layer), sizes_[layer] * sizes_[layer + 1]};
}
std::span<const double> Mlp::weights(std::size_t layer) const {
    return {params_.data() + offsets_.at(layer), sizes_[layer] * sizes_[layer + 1]};
}
std::span<double> Mlp::biases(std::size_t layer) {
    return {params_.data() + offsets_.at(layer) + sizes_[layer] * sizes_[layer + 1], sizes_[layer + 1]};
}
std::span<const double> Mlp::biases(std::size_t layer) const {
    return {params_.data() + offsets_.at(layer) + sizes_[layer] * sizes_[layer + 1], sizes_[layer + 1]};
}

Mlp init_mlp(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 3) throw InvalidArgument("init_mlp: need at least one hidden layer");
    Mlp model(std::move(layer_sizes));
    Rng rng(seed);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(model.layer_sizes()[l]));
        std::uniform_real_distribution<double> unif(-bound, bound);
        for (double& w : model.weights(l)) w = unif(rng);
    }
    return model;
}

namespace {

// Affine map out = W in + b for one layer.
void affine(const Mlp& model, std::size_t l, const double* in, double* out) {
    const std::size_t n_in = model.layer_sizes()[l];
    const std::size_t n_out = model.layer_sizes()[l + 1];
    const double* w = model.weights(l).data();
    const double* b = model.biases(l).data();
    for (std::size_t o = 0; o < n_out; ++o) {
        double acc = b[o];
        const double* row = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
        out[o] = acc;
    }
}

std::size_t activation_size(const Mlp& model) {
    std::size_t total = 0;
    for (auto s : model.layer_sizes()) total += s;
    return total;
}

// Fills acts with every layer's activation, input first. Returns the output offset.
std::size_t forward_all(const Mlp& model, std::span<const double> input, double* acts) {
    const auto& sizes = model.layer_sizes();
    std::copy(input.begin(), input.end(), acts);
    std::size_t off = 0;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const std::size_t next = off + sizes[l];
        affine(model, l, acts + off, acts + next);
        if (l + 1 < model.num_layers())
            for (std::size_t o = 0; o < sizes[l + 1]; ++o) acts[next + o] = std::tanh(acts[next + o]);
        off = next;
    }
    return off;
}

}  // namespace

void mlp_forward_into(const Mlp& model, std::span<const double> input, std::span<double> out,
                      std::vector<double>& scratch) {
    if (input.size() != model.input_dim())
        throw ShapeMismatch("mlp_forward: input has " + std::to_string(input.size()) + " entries, expected " +
                            std::to_string(model.input_dim()));
    if (out.size() != model.output_dim()) throw ShapeMismatch("mlp_forward: output size mismatch");
    scratch.resize(activation_size(model));
    const std::size_t off = forward_all(model, input, scratch.data());
    std::copy_n(scratch.data() + off, out.size(), out.begin());
}

Vector mlp_forward(const Mlp& model, std::span<const double> input) {
    Vector out(model.output_dim());
    std::vector<double> scratch;
    mlp_forward_into(model, input, out, scratch);
    return out;
}

LossAndGrad mlp_loss_grad(const Mlp& model, const Batch& inputs, const Batch& targets,
                          std::span<const double> weights) {
    const std::size_t n = inputs.size();
    if (n == 0) throw InvalidArgument("mlp_loss_grad: empty batch");
    if (inputs.dim() != model.input_dim()) throw ShapeMismatch("mlp_loss_grad: input dimension mismatch");
    if (targets.size() != n || targets.dim() != model.output_dim())
        throw ShapeMismatch("mlp_loss_grad: target shape mismatch");
    if (weights.size() != n) throw ShapeMismatch("mlp_loss_grad: one weight per sample required");

    const auto& sizes = model.layer_sizes();
    const std::size_t layers = model.num_layers();
    std::vector<std::size_t> act_off(sizes.size());
    for (std::size_t l = 1; l < sizes.size(); ++l) act_off[l] = act_off[l - 1] + sizes[l - 1];

    std::vector<double> acts(activation_size(model));
    std::size_t widest = 0;
    for (auto s : sizes) widest = std::max(widest, s);
    std::vector<double> delta(widest), prev(widest);

    LossAndGrad out;
    out.grads.assign(model.parameter_count(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t off = forward_all(model, inputs.row(s), acts.data());
        auto y = targets.row(s);
        const double lam = weights[s];
        double sq = 0.0;
        for (std::size_t o = 0; o < y.size(); ++o) {
            const double r = acts[off + o] - y[o];
            sq += r * r;
            delta[o] = 2.0 * lam * inv_n * r;
        }
        out.loss += lam * sq * inv_n;

        for (std::size_t l = layers; l-- > 0;) {
            const std::size_t n_in = sizes[l];
            const std::size_t n_out = sizes[l + 1];
            const double* a_in = acts.data() + act_off[l];
            const std::size_t w_off = static_cast<std::size_t>(model.weights(l).data() - model.parameters().data());
            double* gw = out.grads.data() + w_off;
            double* gb = gw + n_in * n_out;
            const double* w = model.weights(l).data();
            for (std::size_t o = 0; o < n_out; ++o) {
                const double dlt = delta[o];
                gb[o] += dlt;
                double* grow = gw + o * n_in;
                for (std::size_t i = 0; i < n_in; ++i) grow[i] += dlt * a_in[i];
            }
            if (l == 0) break;
            for (std::size_t i = 0; i < n_in; ++i) {
                double acc = 0.0;
                for (std::size_t o = 0; o < n_out; ++o) acc += w[o * n_in + i] * delta[o];
                prev[i] = acc * (1.0 - a_in[i] * a_in[i]);
            }
            std::swap(delta, prev);
        }
    }
    return out;
}

AdamState AdamState::for_model(const Mlp& model, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    s.m.assign(model.parameter_count(), 0.0);
    s.v.assign(model.parameter_count(), 0.0);
    return s;
}

void adam_step(Mlp& model, std::span<const double> grads, AdamState& state) {
    auto params = model.parameters();
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeMismatch("adam_step: gradient/moment shapes do not match the model");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

nlohmann::json to_json(const Mlp& model) {
    nlohmann::json w = nlohmann::json::array();
    nlohmann::json b = nlohmann::json::array();
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        auto wl = model.weights(l);
        auto bl = model.biases(l);
        w.push_back(std::vector<double>(wl.begin(), wl.end()));
        b.push_back(std::vector<double>(bl.begin(), bl.end()));
    }
    return {{"layer_sizes", model.layer_sizes()}, {"activation", "tanh"}, {"weights", w}, {"biases", b}};
}

Mlp mlp_from_json(const nlohmann::json& doc) {
    try {
        if (doc.contains("activation") && doc.at("activation") != "tanh")
            throw ParseError("checkpoint: only tanh activation is supported");
        Mlp model(doc.at("layer_sizes").get<std::vector<std::size_t>>());
        const auto& w = doc.at("weights");
        const auto& b = doc.at("biases");
        if (w.size() != model.num_layers() || b.size() != model.num_layers())
            throw ParseError("checkpoint: expected one weight and bias array per layer");
        for (std::size_t l = 0; l < model.num_layers(); ++l) {
            const auto wl = w[l].get<std::vector<double>>();
            const auto bl = b[l].get<std::vector<double>>();
            auto dw = model.weights(l);
            auto db = model.biases(l);
            if (wl.size() != dw.size() || bl.size() != db.size())
                throw ParseError("checkpoint: layer " + std::to_string(l) + " has the wrong parameter count");
            std::copy(wl.begin(), wl.end(), dw.begin());
            std::copy(bl.begin(), bl.end(), db.begin());
        }
        if (!all_finite(model.parameters())) throw ParseError("checkpoint: non-finite parameter");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

}  // namespace difflab
