#pragma once

// Reconstruction, perceptual and total cycle losses. Mean reduction
// throughout; the four total-loss terms are summed unweighted.

#include "uld/generator.hpp"
#include "uld/perceptual.hpp"

namespace uld {

enum class LossMode { both, recon_only, perceptual_only };

inline LossMode parse_loss_mode(const std::string& s) {
    if (s == "both") return LossMode::both;
    if (s == "recon_only") return LossMode::recon_only;
    if (s == "perceptual_only") return LossMode::perceptual_only;
    throw ConfigError("loss.mode: '" + s + "' is not one of {both, recon_only, perceptual_only}");
}

struct LossReport {
    double recon_fwd = 0, recon_bwd = 0, percep_fwd = 0, percep_bwd = 0;
    double total = 0;

    bool finite() const {
        return std::isfinite(recon_fwd) && std::isfinite(recon_bwd) && std::isfinite(percep_fwd) &&
               std::isfinite(percep_bwd) && std::isfinite(total);
    }
};

template <typename T>
ag::Var<T> reconstruction_loss(ag::Tape<T>& tape, const ag::Var<T>& generated,
                               const ag::Var<T>& target) {
    return ag::mse(tape, generated, target);
}

template <typename T>
ag::Var<T> perceptual_loss(ag::Tape<T>& tape, const PerceptualNet<T>& net,
                           const ag::Var<T>& generated, const ag::Var<T>& target) {
    auto fg = net.forward(tape, generated);
    auto ft = net.forward(tape, target);
    std::vector<ag::Var<T>> terms;
    for (size_t i = 0; i < fg.size(); ++i) terms.push_back(ag::mse(tape, fg[i], ft[i]));
    return ag::add_scalars(tape, terms);
}

template <typename T>
struct TotalLoss {
    ag::Var<T> value;  // scalar node driving the backward pass
    LossReport report;
};

/// L = L_R(I_x', x') + L_R(I_x, x) + L_P(I_x', x') + L_P(I_x, x).
/// Components excluded by the mode (or a disabled cycle) are reported as 0
/// and never enter the graph.
template <typename T>
TotalLoss<T> total_loss(ag::Tape<T>& tape, const CycleOutputs<T>& outputs, const ag::Var<T>& x,
                        const ag::Var<T>& x_prime, const PerceptualNet<T>& net, LossMode mode) {
    std::vector<ag::Var<T>> terms;
    TotalLoss<T> out;
    const bool want_recon = mode != LossMode::perceptual_only;
    const bool want_percep = mode != LossMode::recon_only;
    if (want_recon) {
        auto r = reconstruction_loss(tape, outputs.forward.image_target, x_prime);
        out.report.recon_fwd = static_cast<double>(r->val[0]);
        terms.push_back(r);
        if (outputs.backward) {
            auto rb = reconstruction_loss(tape, outputs.backward->image_target, x);
            out.report.recon_bwd = static_cast<double>(rb->val[0]);
            terms.push_back(rb);
        }
    }
    if (want_percep) {
        auto p = perceptual_loss(tape, net, outputs.forward.image_target, x_prime);
        out.report.percep_fwd = static_cast<double>(p->val[0]);
        terms.push_back(p);
        if (outputs.backward) {
            auto pb = perceptual_loss(tape, net, outputs.backward->image_target, x);
            out.report.percep_bwd = static_cast<double>(pb->val[0]);
            terms.push_back(pb);
        }
    }
    out.value = ag::add_scalars(tape, terms);
    out.report.total = out.report.recon_fwd + out.report.recon_bwd + out.report.percep_fwd +
                       out.report.percep_bwd;
    return out;
}

}  // namespace uld
