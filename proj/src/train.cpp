#include <cmath>
#include <fstream>

#include "cftlab/engine.hpp"
#include "cftlab/error.hpp"
#include "cftlab/rng.hpp"

namespace cftlab::engine {

void TrainConfig::validate() const {
    require(learning_rate > 0.0, "train config: learning_rate must be > 0");
    require(epochs >= 1, "train config: epochs must be >= 1");
    require(global_batch_size >= 1, "train config: batch size must be >= 1");
    require(warmup_steps >= 0, "train config: warmup_steps must be >= 0");
    require(weight_decay >= 0.0, "train config: weight_decay must be >= 0");
}

TrainConfig paper_train_config() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-6;
    cfg.epochs = 4;
    cfg.global_batch_size = 16;
    cfg.warmup_steps = 10;
    cfg.weight_decay = 0.0;
    return cfg;
}

double lr_at_step(const TrainConfig& cfg, int step, int total_steps) {
    if (step < cfg.warmup_steps)
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps;
    int decay_steps = total_steps - cfg.warmup_steps;
    if (decay_steps <= 0) return cfg.learning_rate;
    double t = static_cast<double>(step - cfg.warmup_steps) / decay_steps;
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * t));
}

namespace {

void round_to_f32(Tensor& t) {
    for (auto& x : t.v) x = static_cast<double>(static_cast<float>(x));
}

struct AdamState {
    std::map<std::string, Tensor> m, v;
};

void adam_step(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, const TrainConfig& cfg,
               double lr, int t) {
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (size_t i = 0; i < w.v.size(); ++i) {
        m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
        v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
        double mhat = m.v[i] / bc1;
        double vhat = v.v[i] / bc2;
        w.v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w.v[i]);
    }
}

}  // namespace

TrainResult train_phase(const Checkpoint& ckpt, const corpus::Dataset& dataset,
                        const TrainConfig& cfg, const FreezeMask* mask,
                        const LowRankAdapter* adapter) {
    cfg.validate();
    require(!dataset.examples.empty(), "train_phase: empty dataset");
    require(!(mask != nullptr && !mask->empty() && adapter != nullptr),
            "train_phase: freeze mask and adapter may not both be active");
    require(ckpt.vocab.size() > 0, "train_phase: checkpoint has no vocabulary");

    std::set<std::string> frozen;
    if (mask) frozen = frozen_tensor_names(*mask, ckpt.config);

    // pre-tokenize once
    std::vector<TokenizedExample> all;
    all.reserve(dataset.size());
    for (const auto& ex : dataset.examples)
        all.push_back(tokenize_example(ckpt.vocab, ex));

    TrainResult res;
    res.checkpoint = ckpt;
    if (adapter) res.adapter = *adapter;

    const int n = static_cast<int>(all.size());
    const int batches_per_epoch = (n + cfg.global_batch_size - 1) / cfg.global_batch_size;
    const int total_steps = cfg.epochs * batches_per_epoch;

    AdamState adam;
    if (adapter) {
        for (const auto& [name, fac] : res.adapter->factors) {
            adam.m.emplace(name + ".A", Tensor(fac.first.shape));
            adam.v.emplace(name + ".A", Tensor(fac.first.shape));
            adam.m.emplace(name + ".B", Tensor(fac.second.shape));
            adam.v.emplace(name + ".B", Tensor(fac.second.shape));
        }
    } else {
        for (const auto& [name, t] : res.checkpoint.tensors) {
            if (frozen.count(name)) continue;
            adam.m.emplace(name, Tensor(t.shape));
            adam.v.emplace(name, Tensor(t.shape));
        }
    }

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(static_cast<size_t>(n));
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch) + 1);
        shuffle_rng.shuffle(order);

        for (int b = 0; b < batches_per_epoch; ++b, ++step) {
            std::vector<TokenizedExample> batch;
            for (int i = b * cfg.global_batch_size;
                 i < std::min(n, (b + 1) * cfg.global_batch_size); ++i)
                batch.push_back(all[order[static_cast<size_t>(i)]]);

            const Checkpoint* fwd_ckpt = &res.checkpoint;
            Checkpoint merged;
            if (adapter) {
                merged = merge_adapter(res.checkpoint, *res.adapter);
                fwd_ckpt = &merged;
            }

            LossGrads lg;
            try {
                lg = loss_and_grads(*fwd_ckpt, batch);
            } catch (const CftError& e) {
                fail_input("train_phase aborted at step " + std::to_string(step) + ": " +
                           e.what());
            }
            if (!std::isfinite(lg.loss))
                fail_input("train_phase: nonfinite loss at step " + std::to_string(step));

            double lr = lr_at_step(cfg, step, total_steps);
            res.log.push_back({step, epoch, lr, lg.loss});

            if (adapter) {
                const double s = res.adapter->scale;
                for (auto& [name, fac] : res.adapter->factors) {
                    Tensor& A = fac.first;
                    Tensor& B = fac.second;
                    const Tensor& dW = lg.grads.at(name);
                    const int64_t out_dim = A.shape[0], r = A.shape[1], in_dim = B.shape[1];
                    Tensor dA(A.shape), dB(B.shape);
                    // dA = s * dW * B^T ; dB = s * A^T * dW
                    for (int64_t i = 0; i < out_dim; ++i)
                        for (int64_t t = 0; t < r; ++t) {
                            double acc = 0.0;
                            for (int64_t j = 0; j < in_dim; ++j)
                                acc += dW.v[static_cast<size_t>(i * in_dim + j)] *
                                       B.v[static_cast<size_t>(t * in_dim + j)];
                            dA.v[static_cast<size_t>(i * r + t)] = s * acc;
                        }
                    for (int64_t t = 0; t < r; ++t)
                        for (int64_t j = 0; j < in_dim; ++j) {
                            double acc = 0.0;
                            for (int64_t i = 0; i < out_dim; ++i)
                                acc += A.v[static_cast<size_t>(i * r + t)] *
                                       dW.v[static_cast<size_t>(i * in_dim + j)];
                            dB.v[static_cast<size_t>(t * in_dim + j)] = s * acc;
                        }
                    adam_step(A, dA, adam.m.at(name + ".A"), adam.v.at(name + ".A"), cfg, lr,
                              step + 1);
                    adam_step(B, dB, adam.m.at(name + ".B"), adam.v.at(name + ".B"), cfg, lr,
                              step + 1);
                    if (!cfg.f64_weights) {
                        round_to_f32(A);
                        round_to_f32(B);
                    }
                }
            } else {
                for (auto& [name, w] : res.checkpoint.tensors) {
                    if (frozen.count(name)) continue;
                    adam_step(w, lg.grads.at(name), adam.m.at(name), adam.v.at(name), cfg, lr,
                              step + 1);
                    if (!cfg.f64_weights) round_to_f32(w);
                }
            }
        }
    }

    res.checkpoint.prov.parent_checkpoint_id = ckpt.prov.phase_tag;
    res.checkpoint.prov.dataset_id = dataset.meta.id;
    res.checkpoint.prov.seed = cfg.seed;
    return res;
}

void write_train_log_csv(const std::vector<TrainLogEntry>& log, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write training log: " + path);
    out << "step,epoch,lr,loss\n";
    char buf[96];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g\n", e.step, e.epoch, e.lr, e.loss);
        out << buf;
    }
}

}  // namespace cftlab::engine
