#pragma once

// Batch construction (intra-subject pairing + in-batch auxiliary assignment),
// the Adam loop with step decay, metrics logging and resumable checkpoints.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "uld/data.hpp"
#include "uld/model.hpp"
#include "uld/objectives.hpp"

namespace uld {

struct TrainConfig {
    int batch_size = 32;
    double lr = 0.001;
    double lr_decay = 0.1;
    int lr_decay_every = 30;  // epochs
    int epochs = 90;
    uint64_t seed = 0;
    bool aux = true;    // inter-subject stage on/off (off = baseline)
    bool cycle = true;  // backward path on/off
    bool fresh_aux = false;  // backward path draws its own auxiliary assignment
    LossMode loss_mode = LossMode::both;
    DeformRanges deform;
    int checkpoint_every = 10;  // epochs; <= 0 disables periodic checkpoints
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

    void validate() const {
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        if (lr <= 0) throw ConfigError("train.lr must be > 0");
        if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("train.lr_decay must be in (0,1]");
        if (lr_decay_every < 1) throw ConfigError("train.lr_decay_every must be >= 1");
        if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
        deform.validate();
    }
};

template <typename T>
struct TrainBatch {
    Tensor<T> x;        // [B,3,H,W]
    Tensor<T> x_prime;  // deformed counterparts
    std::vector<int> aux_index;   // fixed-point-free permutation for B >= 2
    std::vector<int> aux_index2;  // second assignment when fresh_aux is on
    std::vector<DeformParams> deform;

    int batch() const { return x.dim(0); }
};

/// Uniform fixed-point-free permutation by rejection; B=1 degenerates to self.
inline std::vector<int> sample_derangement(int n, std::mt19937_64& rng) {
    std::vector<int> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    if (n == 1) {
        log::warn("batch of size 1: auxiliary image falls back to the sample itself");
        return p;
    }
    while (true) {
        std::shuffle(p.begin(), p.end(), rng);
        bool fixed = false;
        for (int i = 0; i < n; ++i)
            if (p[static_cast<size_t>(i)] == i) {
                fixed = true;
                break;
            }
        if (!fixed) return p;
    }
}

/// Assemble (x, x', aux assignment) for the given dataset rows. Each sample
/// gets an independent deformation; x' is the warped copy of x.
template <typename T>
TrainBatch<T> build_training_batch(const Dataset& ds, const std::vector<int>& indices,
                                   const DeformRanges& ranges, std::mt19937_64& rng,
                                   bool fresh_aux = false) {
    if (indices.empty()) throw InputError("build_training_batch: empty index list");
    const int b = static_cast<int>(indices.size());
    const auto& first = ds.items.at(static_cast<size_t>(indices[0])).image;
    const int h = first.dim(1), w = first.dim(2);
    TrainBatch<T> batch;
    batch.x = Tensor<T>({b, 3, h, w});
    batch.x_prime = Tensor<T>({b, 3, h, w});
    batch.deform.reserve(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        const auto& img = ds.items.at(static_cast<size_t>(indices[static_cast<size_t>(i)])).image;
        if (img.dim(1) != h || img.dim(2) != w)
            throw InputError("build_training_batch: inconsistent image sizes in dataset");
        const DeformParams params = sample_deform(ranges, rng);
        const Tensor<double> warped = apply_warp_image(img, params);
        batch.deform.push_back(params);
        T* xd = &batch.x.at(i, 0, 0, 0);
        T* xpd = &batch.x_prime.at(i, 0, 0, 0);
        for (int64_t j = 0; j < img.size(); ++j) {
            xd[j] = static_cast<T>(img[j]);
            xpd[j] = static_cast<T>(warped[j]);
        }
    }
    batch.aux_index = sample_derangement(b, rng);
    if (fresh_aux) batch.aux_index2 = sample_derangement(b, rng);
    return batch;
}

/// Adam with bias correction. State rides along in checkpoints.
template <typename T>
class Adam {
  public:
    Adam() = default;
    Adam(const std::vector<std::pair<std::string, ag::Var<T>>>& entries, double b1, double b2,
         double eps)
        : beta1_(b1), beta2_(b2), eps_(eps) {
        for (const auto& [name, v] : entries) {
            if (!v->requires_grad) continue;
            names_.push_back(name);
            params_.push_back(v);
            m_.emplace_back(v->val.shape());
            v_.emplace_back(v->val.shape());
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (size_t p = 0; p < params_.size(); ++p) {
            auto& node = *params_[p];
            if (!node.has_grad) continue;
            const int64_t n = node.val.size();
            T* w = node.val.data();
            const T* g = node.grad.data();
            T* m = m_[p].data();
            T* v = v_[p].data();
            for (int64_t i = 0; i < n; ++i) {
                m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
                v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    int64_t steps() const { return t_; }

    void save(TensorFile& tf) const {
        for (size_t p = 0; p < params_.size(); ++p) {
            tf.set("adam.m." + names_[p], m_[p]);
            tf.set("adam.v." + names_[p], v_[p]);
        }
        tf.set_blob("adam.t", std::to_string(t_));
    }

    void load(const TensorFile& tf) {
        for (size_t p = 0; p < params_.size(); ++p) {
            m_[p] = tf.get<T>("adam.m." + names_[p]);
            v_[p] = tf.get<T>("adam.v." + names_[p]);
        }
        t_ = std::stoll(tf.get_blob("adam.t"));
    }

  private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<std::string> names_;
    std::vector<ag::Var<T>> params_;
    std::vector<Tensor<T>> m_, v_;
};

struct RunResult {
    std::string checkpoint_path;  // prefix of the final checkpoint
    std::string metrics_path;
    LossReport first, last;
    int steps = 0;
};

template <typename T>
class Trainer {
  public:
    Trainer(Model<T>& model, const PerceptualNet<T>& percep, const TrainConfig& cfg)
        : model_(model),
          percep_(percep),
          cfg_(cfg),
          pipeline_(model.detector, model.encoder, model.generator, cfg.aux),
          adam_(model.params.entries(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
          rng_(cfg.seed) {
        cfg.validate();
    }

    std::mt19937_64& rng() { return rng_; }
    double lr_at(int epoch) const {
        return cfg_.lr * std::pow(cfg_.lr_decay, epoch / cfg_.lr_decay_every);
    }

    TrainBatch<T> make_batch(const Dataset& ds, const std::vector<int>& indices) {
        return build_training_batch<T>(ds, indices, cfg_.deform, rng_, cfg_.fresh_aux);
    }

    /// Forward cycle + loss, no parameter update.
    LossReport evaluate_loss(const TrainBatch<T>& batch) {
        ag::Tape<T> tape;
        return forward(tape, batch).report;
    }

    /// One optimization step on all trainable parameters.
    LossReport train_step(const TrainBatch<T>& batch, double lr) {
        ag::Tape<T> tape;
        TotalLoss<T> loss = forward(tape, batch);
        if (!loss.report.finite())
            throw NumericError(strcat_("non-finite loss at global step ", global_step_,
                                       ": recon_fwd=", loss.report.recon_fwd,
                                       " recon_bwd=", loss.report.recon_bwd,
                                       " percep_fwd=", loss.report.percep_fwd,
                                       " percep_bwd=", loss.report.percep_bwd));
        model_.params.zero_grad();
        tape.backward(loss.value);
        adam_.step(lr);
        ++global_step_;
        return loss.report;
    }

    RunResult run_training(const Dataset& ds, const std::string& out_dir,
                           const std::string& resume_from = "") {
        namespace fs = std::filesystem;
        if (ds.items.empty()) throw InputError("run_training: empty dataset");
        fs::create_directories(out_dir);
        int start_epoch = 0;
        if (!resume_from.empty()) start_epoch = load_state(resume_from);

        const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
        std::ofstream metrics(metrics_path);
        if (!metrics) throw IoError("cannot write " + metrics_path);
        metrics << "epoch,step,recon_fwd,recon_bwd,percep_fwd,percep_bwd,total,lr\n";

        RunResult result;
        result.metrics_path = metrics_path;
        std::vector<int> order(ds.items.size());
        std::iota(order.begin(), order.end(), 0);
        bool first_report = start_epoch == 0;
        for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
            const double lr = lr_at(epoch);
            std::shuffle(order.begin(), order.end(), rng_);
            for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg_.batch_size)) {
                const size_t end = std::min(order.size(), off + static_cast<size_t>(cfg_.batch_size));
                const std::vector<int> indices(order.begin() + static_cast<long>(off),
                                               order.begin() + static_cast<long>(end));
                const TrainBatch<T> batch = make_batch(ds, indices);
                const LossReport rep = train_step(batch, lr);
                if (first_report) {
                    result.first = rep;
                    first_report = false;
                }
                result.last = rep;
                ++result.steps;
                char row[256];
                std::snprintf(row, sizeof(row), "%d,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", epoch,
                              static_cast<long long>(global_step_), rep.recon_fwd, rep.recon_bwd,
                              rep.percep_fwd, rep.percep_bwd, rep.total, lr);
                metrics << row;
            }
            metrics.flush();
            if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0 &&
                epoch + 1 < cfg_.epochs) {
                char name[32];
                std::snprintf(name, sizeof(name), "ckpt_epoch%04d", epoch + 1);
                save_state((fs::path(out_dir) / name).string(), epoch + 1);
            }
        }
        result.checkpoint_path = (fs::path(out_dir) / "ckpt_final").string();
        save_state(result.checkpoint_path, cfg_.epochs);
        return result;
    }

    /// Checkpoint = model weights + Adam state + RNG stream + epoch counter.
    void save_state(const std::string& prefix, int next_epoch) const {
        TensorFile extra;
        adam_.save(extra);
        std::ostringstream os;
        os << rng_;
        extra.set_blob("train.rng", os.str());
        extra.set_blob("train.next_epoch", std::to_string(next_epoch));
        extra.set_blob("train.global_step", std::to_string(global_step_));
        ckpt::save(model_, prefix, std::move(extra));
    }

    /// Restores weights + state; returns the epoch to resume from.
    int load_state(const std::string& path_any) {
        TensorFile tf = TensorFile::read(ckpt::strip_ckpt_ext(path_any) + ".bin");
        for (auto& [name, v] : model_.params.entries()) v->val = tf.get<T>(name);
        adam_.load(tf);
        std::istringstream is(tf.get_blob("train.rng"));
        is >> rng_;
        global_step_ = std::stoll(tf.get_blob("train.global_step"));
        return std::stoi(tf.get_blob("train.next_epoch"));
    }

    int64_t global_step() const { return global_step_; }
    const GenerationPipeline<T>& pipeline() const { return pipeline_; }

  private:
    TotalLoss<T> forward(ag::Tape<T>& tape, const TrainBatch<T>& batch) {
        auto x = ag::leaf(batch.x);
        auto xp = ag::leaf(batch.x_prime);
        auto xa = ag::leaf(gather_rows(batch.x, batch.aux_index));
        ag::Var<T> xa2 = nullptr;
        if (cfg_.fresh_aux && !batch.aux_index2.empty())
            xa2 = ag::leaf(gather_rows(batch.x, batch.aux_index2));
        CycleOutputs<T> out = pipeline_.cycle_forward(tape, x, xp, xa, cfg_.cycle, xa2);
        return total_loss(tape, out, x, xp, percep_, cfg_.loss_mode);
    }

    static Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx) {
        Tensor<T> out(x.shape());
        const int64_t stride = x.size() / x.dim(0);
        for (size_t i = 0; i < idx.size(); ++i)
            std::memcpy(out.data() + static_cast<int64_t>(i) * stride,
                        x.data() + static_cast<int64_t>(idx[i]) * stride,
                        sizeof(T) * static_cast<size_t>(stride));
        return out;
    }

    Model<T>& model_;
    const PerceptualNet<T>& percep_;
    TrainConfig cfg_;
    GenerationPipeline<T> pipeline_;
    Adam<T> adam_;
    std::mt19937_64 rng_;
    int64_t global_step_ = 0;
};

}  // namespace uld
