#pragma once

// Eager reverse-mode autodiff. Ops execute immediately and append a node to a
// Tape; Tape::backward walks the nodes in reverse creation order (creation
// order is topological under eager evaluation). Parameters are leaf nodes that
// live outside any tape; their gradients accumulate across every use, which is
// what gives the shared-weight generator stages correct gradients for free.

#include <functional>
#include <memory>
#include <vector>

#include "uld/kernels.hpp"
#include "uld/tensor.hpp"

namespace uld::ag {

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void()> backward;

    void ensure_grad() {
        if (!has_grad) {
            grad = Tensor<T>(val.shape());
            has_grad = true;
        }
    }
    void zero_grad() {
        if (has_grad) grad.fill(T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
class Tape {
  public:
    Var<T> record(Var<T> n) {
        nodes_.push_back(n);
        return n;
    }

    /// Seed d(loss)/d(loss) = 1 and run every backward closure in reverse.
    void backward(const Var<T>& loss) {
        if (loss->val.size() != 1) throw InputError("backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.backward && n.has_grad) n.backward();
        }
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    std::vector<Var<T>> nodes_;
};

namespace detail {
template <typename T>
bool wants_grad(const Var<T>& v) {
    return v->requires_grad;
}
}  // namespace detail

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
              int pad = 1) {
    auto out = std::make_shared<Node<T>>();
    kernels::conv2d_forward(x->val, w->val, b->val, stride, pad, out->val);
    out->requires_grad = x->requires_grad || w->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, w, b, out, stride, pad]() {
            Tensor<T>* dX = nullptr;
            Tensor<T>* dW = nullptr;
            Tensor<T>* db = nullptr;
            if (x->requires_grad) {
                x->ensure_grad();
                dX = &x->grad;
            }
            if (w->requires_grad) {
                w->ensure_grad();
                b->ensure_grad();
                dW = &w->grad;
                db = &b->grad;
            }
            kernels::conv2d_backward(x->val, w->val, out->grad, stride, pad, dX, dW, db);
        };
    }
    return tape.record(out);
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
    auto out = std::make_shared<Node<T>>();
    kernels::relu_forward(x->val, out->val);
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, out]() {
            x->ensure_grad();
            kernels::relu_backward(x->val, out->grad, x->grad);
        };
    }
    return tape.record(out);
}

template <typename T>
Var<T> instance_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                     T eps = T(1e-5)) {
    auto out = std::make_shared<Node<T>>();
    auto mean = std::make_shared<Tensor<T>>();
    auto inv_std = std::make_shared<Tensor<T>>();
    kernels::instance_norm_forward(x->val, gamma->val, beta->val, eps, out->val, *mean, *inv_std);
    out->requires_grad = x->requires_grad || gamma->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, gamma, beta, out, mean, inv_std]() {
            x->ensure_grad();
            gamma->ensure_grad();
            beta->ensure_grad();
            kernels::instance_norm_backward(x->val, gamma->val, *mean, *inv_std, out->grad,
                                            x->grad, gamma->grad, beta->grad);
        };
    }
    return tape.record(out);
}

template <typename T>
Var<T> maxpool2x2(Tape<T>& tape, const Var<T>& x) {
    auto out = std::make_shared<Node<T>>();
    auto argmax = std::make_shared<std::vector<int32_t>>();
    kernels::maxpool2x2_forward(x->val, out->val, *argmax);
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        const int H = x->val.dim(2), W = x->val.dim(3);
        out->backward = [x, out, argmax, H, W]() {
            x->ensure_grad();
            kernels::maxpool2x2_backward(*argmax, out->grad, H, W, x->grad);
        };
    }
    return tape.record(out);
}

template <typename T>
Var<T> upsample2x(Tape<T>& tape, const Var<T>& x) {
    auto out = std::make_shared<Node<T>>();
    kernels::upsample2x_forward(x->val, out->val);
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, out]() {
            x->ensure_grad();
            kernels::upsample2x_backward(out->grad, x->grad);
        };
    }
    return tape.record(out);
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    if (!a->val.same_shape(b->val)) throw InputError("add: shape mismatch");
    auto out = std::make_shared<Node<T>>();
    out->val = Tensor<T>(a->val.shape());
    const int64_t n = out->val.size();
    const bool par = kernels::parallel_enabled() && n > kernels::kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < n; ++i) out->val[i] = a->val[i] + b->val[i];
    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        out->backward = [a, b, out]() {
            for (const Var<T>& p : {a, b}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                const int64_t m = out->grad.size();
                for (int64_t i = 0; i < m; ++i) p->grad[i] += out->grad[i];
            }
        };
    }
    return tape.record(out);
}

template <typename T>
Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->val.shape();
    const auto& sb = b->val.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw InputError("concat_channels: spatial/batch mismatch " + shape_str(a->val) + " vs " +
                         shape_str(b->val));
    const int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    auto out = std::make_shared<Node<T>>();
    out->val = Tensor<T>({N, Ca + Cb, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::memcpy(&out->val.at(n, 0, 0, 0), &a->val.at(n, 0, 0, 0), sizeof(T) * plane * Ca);
        std::memcpy(&out->val.at(n, Ca, 0, 0), &b->val.at(n, 0, 0, 0), sizeof(T) * plane * Cb);
    }
    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        out->backward = [a, b, out, N, Ca, Cb, plane]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int n = 0; n < N; ++n) {
                    const T* src = &out->grad.at(n, 0, 0, 0);
                    T* dst = &a->grad.at(n, 0, 0, 0);
                    for (size_t i = 0; i < plane * Ca; ++i) dst[i] += src[i];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int n = 0; n < N; ++n) {
                    const T* src = &out->grad.at(n, Ca, 0, 0);
                    T* dst = &b->grad.at(n, 0, 0, 0);
                    for (size_t i = 0; i < plane * Cb; ++i) dst[i] += src[i];
                }
            }
        };
    }
    return tape.record(out);
}

/// Eq. 1 relaxation: score maps -> (row, col) coordinates, overflow-safe.
template <typename T>
Var<T> softargmax(Tape<T>& tape, const Var<T>& s, T beta) {
    if (!s->val.all_finite()) throw NumericError("softargmax: non-finite scores");
    auto out = std::make_shared<Node<T>>();
    auto weights = std::make_shared<Tensor<T>>();
    kernels::softargmax_forward(s->val, beta, out->val, *weights);
    out->requires_grad = s->requires_grad;
    if (out->requires_grad) {
        out->backward = [s, out, weights, beta]() {
            s->ensure_grad();
            kernels::softargmax_backward(*weights, out->val, beta, out->grad, s->grad);
        };
    }
    return tape.record(out);
}

/// Eq. 2: coordinates -> Gaussian heatmaps on an H x W grid.
template <typename T>
Var<T> gaussian_render(Tape<T>& tape, const Var<T>& u, int H, int W, T sigma) {
    auto out = std::make_shared<Node<T>>();
    kernels::gaussian_render_forward(u->val, H, W, sigma, out->val);
    out->requires_grad = u->requires_grad;
    if (out->requires_grad) {
        out->backward = [u, out, sigma]() {
            u->ensure_grad();
            kernels::gaussian_render_backward(u->val, out->val, sigma, out->grad, u->grad);
        };
    }
    return tape.record(out);
}

/// Mean over all elements of the squared difference. Scalar output.
template <typename T>
Var<T> mse(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    if (!a->val.same_shape(b->val))
        throw InputError("mse: shape mismatch " + shape_str(a->val) + " vs " + shape_str(b->val));
    auto out = std::make_shared<Node<T>>();
    out->val = Tensor<T>({1});
    const int64_t n = a->val.size();
    T s = 0;  // serial reduction: deterministic
    for (int64_t i = 0; i < n; ++i) {
        const T d = a->val[i] - b->val[i];
        s += d * d;
    }
    out->val[0] = s / static_cast<T>(n);
    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        out->backward = [a, b, out, n]() {
            const T g = out->grad[0] * T(2) / static_cast<T>(n);
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) a->grad[i] += g * (a->val[i] - b->val[i]);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) b->grad[i] -= g * (a->val[i] - b->val[i]);
            }
        };
    }
    return tape.record(out);
}

/// Sum of scalar variables (used to combine loss terms).
template <typename T>
Var<T> add_scalars(Tape<T>& tape, const std::vector<Var<T>>& terms) {
    if (terms.empty()) throw InputError("add_scalars: no terms");
    auto out = std::make_shared<Node<T>>();
    out->val = Tensor<T>({1});
    for (const auto& t : terms) {
        if (t->val.size() != 1) throw InputError("add_scalars: non-scalar term");
        out->val[0] += t->val[0];
        out->requires_grad = out->requires_grad || t->requires_grad;
    }
    if (out->requires_grad) {
        auto terms_copy = terms;
        out->backward = [terms_copy, out]() {
            for (const auto& t : terms_copy) {
                if (!t->requires_grad) continue;
                t->ensure_grad();
                t->grad[0] += out->grad[0];
            }
        };
    }
    return tape.record(out);
}

/// Channel-wise (x - mean) / std, for pretrained-backbone input statistics.
template <typename T>
Var<T> channel_normalize(Tape<T>& tape, const Var<T>& x, const std::vector<T>& mean,
                         const std::vector<T>& stdev) {
    const int N = x->val.dim(0), C = x->val.dim(1);
    const int64_t S = static_cast<int64_t>(x->val.dim(2)) * x->val.dim(3);
    if (static_cast<int>(mean.size()) != C || static_cast<int>(stdev.size()) != C)
        throw InputError("channel_normalize: statistics do not match channel count");
    auto out = std::make_shared<Node<T>>();
    out->val = Tensor<T>(x->val.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = &x->val.at(n, c, 0, 0);
            T* dst = &out->val.at(n, c, 0, 0);
            const T m = mean[c], inv = T(1) / stdev[c];
            for (int64_t i = 0; i < S; ++i) dst[i] = (src[i] - m) * inv;
        }
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        auto stdev_copy = stdev;
        out->backward = [x, out, stdev_copy, N, C, S]() {
            x->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* src = &out->grad.at(n, c, 0, 0);
                    T* dst = &x->grad.at(n, c, 0, 0);
                    const T inv = T(1) / stdev_copy[c];
                    for (int64_t i = 0; i < S; ++i) dst[i] += src[i] * inv;
                }
        };
    }
    return tape.record(out);
}

}  // namespace uld::ag
