#pragma once

#include <random>
#include <string>
#include <utility>

#include "uld/autodiff.hpp"

namespace uld::nn {

using RngEngine = std::mt19937_64;

/// Owns named parameters in registration order. Registration order is the
/// checkpoint and optimizer iteration order, so it must be deterministic.
template <typename T>
class ParamStore {
  public:
    ag::Var<T> create(const std::string& name, Tensor<T> init, bool trainable = true) {
        auto v = ag::leaf(std::move(init), trainable);
        params_.emplace_back(name, v);
        return v;
    }
    std::vector<std::pair<std::string, ag::Var<T>>>& entries() { return params_; }
    const std::vector<std::pair<std::string, ag::Var<T>>>& entries() const { return params_; }

    std::vector<ag::Var<T>> trainable() const {
        std::vector<ag::Var<T>> out;
        for (const auto& [name, v] : params_)
            if (v->requires_grad) out.push_back(v);
        return out;
    }

    void zero_grad() {
        for (auto& [name, v] : params_) v->zero_grad();
    }

  private:
    std::vector<std::pair<std::string, ag::Var<T>>> params_;
};

/// Fan-in-scaled normal init (He) for conv weights [F,C,KH,KW].
template <typename T>
Tensor<T> he_init(const std::vector<int>& shape, RngEngine& rng) {
    Tensor<T> t(shape);
    const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
struct Conv2d {
    ag::Var<T> w, b;
    int stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int ksize,
           int stride_, RngEngine& rng, bool trainable = true)
        : stride(stride_), pad(ksize / 2) {
        w = ps.create(name + ".w", he_init<T>({out_ch, in_ch, ksize, ksize}, rng), trainable);
        b = ps.create(name + ".b", Tensor<T>({out_ch}), trainable);
    }
    ag::Var<T> forward(ag::Tape<T>& tape, const ag::Var<T>& x) const {
        return ag::conv2d(tape, x, w, b, stride, pad);
    }
};

template <typename T>
struct InstanceNorm {
    ag::Var<T> gamma, beta;

    InstanceNorm() = default;
    InstanceNorm(ParamStore<T>& ps, const std::string& name, int ch, bool trainable = true) {
        Tensor<T> g({ch});
        g.fill(T(1));
        gamma = ps.create(name + ".gamma", std::move(g), trainable);
        beta = ps.create(name + ".beta", Tensor<T>({ch}), trainable);
    }
    ag::Var<T> forward(ag::Tape<T>& tape, const ag::Var<T>& x) const {
        return ag::instance_norm(tape, x, gamma, beta);
    }
};

/// conv -> instance norm -> relu
template <typename T>
struct ConvBlock {
    Conv2d<T> conv;
    InstanceNorm<T> norm;

    ConvBlock() = default;
    ConvBlock(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int stride,
              RngEngine& rng)
        : conv(ps, name + ".conv", in_ch, out_ch, 3, stride, rng),
          norm(ps, name + ".norm", out_ch) {}
    ag::Var<T> forward(ag::Tape<T>& tape, const ag::Var<T>& x) const {
        return ag::relu(tape, norm.forward(tape, conv.forward(tape, x)));
    }
};

/// Pre-activation residual block at constant width:
/// x + conv(relu(norm(conv(relu(norm(x)))))).
template <typename T>
struct ResidualBlock {
    InstanceNorm<T> norm1, norm2;
    Conv2d<T> conv1, conv2;

    ResidualBlock() = default;
    ResidualBlock(ParamStore<T>& ps, const std::string& name, int ch, RngEngine& rng)
        : norm1(ps, name + ".norm1", ch),
          norm2(ps, name + ".norm2", ch),
          conv1(ps, name + ".conv1", ch, ch, 3, 1, rng),
          conv2(ps, name + ".conv2", ch, ch, 3, 1, rng) {}
    ag::Var<T> forward(ag::Tape<T>& tape, const ag::Var<T>& x) const {
        auto h = conv1.forward(tape, ag::relu(tape, norm1.forward(tape, x)));
        h = conv2.forward(tape, ag::relu(tape, norm2.forward(tape, h)));
        return ag::add(tape, x, h);
    }
};

}  // namespace uld::nn
