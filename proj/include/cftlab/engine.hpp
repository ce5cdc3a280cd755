#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cftlab/corpus.hpp"

namespace cftlab::engine {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int vocab_size = 0;
    int max_seq_len = 64;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        v.assign(static_cast<size_t>(n), 0.0);
    }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
};

struct Provenance {
    std::string phase_tag;
    std::string parent_checkpoint_id;
    std::string dataset_id;
    uint64_t seed = 0;
};

// Full parameter set. Tensor values are held in double but are always
// f32-representable (rounded after init and after every optimizer step),
// so the f32 on-disk payload round-trips bit-exactly.
struct Checkpoint {
    ModelConfig config;
    corpus::Vocab vocab;
    std::map<std::string, Tensor> tensors;  // ordered: deterministic iteration
    Provenance prov;
};

// Canonical tensor names and shapes for a config, in a fixed order.
std::vector<std::pair<std::string, std::vector<int64_t>>> tensor_layout(const ModelConfig& cfg);

Checkpoint init_checkpoint(const ModelConfig& cfg, const corpus::Vocab& vocab, uint64_t seed);

// -------- freeze masks --------

struct Region {
    int layer = 0;
    char kind = 0;  // 0 = whole layer, else 'Q'/'K'/'V'
    int head = -1;

    auto operator<=>(const Region&) const = default;
};

struct FreezeMask {
    std::set<Region> regions;
    std::string heuristic;  // provenance tag: "lf_h1", "lf_h2", "manual", ...
    std::string provenance_note;

    bool empty() const { return regions.empty(); }
};

void validate_mask(const FreezeMask& mask, const ModelConfig& cfg);
std::set<std::string> frozen_tensor_names(const FreezeMask& mask, const ModelConfig& cfg);

// -------- low-rank adapters --------

struct LowRankAdapter {
    int rank = 4;
    double scale = 1.0;
    // target tensor name -> (A: out x r, B: r x in); effective W = base + scale*A*B
    std::map<std::string, std::pair<Tensor, Tensor>> factors;
};

// Adapter over all attention projections (per-head Q/K/V and per-layer O).
// A is gaussian, B is zero, so the adapted model starts at the base weights.
LowRankAdapter init_adapter(const Checkpoint& ckpt, int rank, double scale, uint64_t seed);

Checkpoint merge_adapter(const Checkpoint& ckpt, const LowRankAdapter& adapter);

// -------- forward / loss / generation --------

struct ForwardResult {
    // logits[p*vocab + t] for position p of the input sequence
    std::vector<double> logits;
    int seq_len = 0;
    // when captured: per layer, seq_len x d_model block outputs
    std::vector<std::vector<double>> activations;
};

ForwardResult forward(const Checkpoint& ckpt, const std::vector<int>& tokens,
                      bool capture = false);

struct TokenizedExample {
    std::vector<int> prompt;
    std::vector<int> response;
};

struct LossGrads {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
};

LossGrads loss_and_grads(const Checkpoint& ckpt, const std::vector<TokenizedExample>& batch);

struct DecodeConfig {
    enum class Kind { greedy, top_k } kind = Kind::greedy;
    int k = 1;
    uint64_t seed = 0;
};

std::vector<int> generate(const Checkpoint& ckpt, const std::vector<int>& prompt,
                          const DecodeConfig& decode, int max_new);

// -------- training --------

struct TrainConfig {
    double learning_rate = 3e-3;
    int epochs = 4;
    int global_batch_size = 16;
    int warmup_steps = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    bool f64_weights = false;  // default: round weights to f32 after each step

    void validate() const;
};

// Desk-scale defaults above; `paper` preset keeps Table-A1's 1e-6 rate.
TrainConfig paper_train_config();

double lr_at_step(const TrainConfig& cfg, int step, int total_steps);

struct TrainLogEntry {
    int step;
    int epoch;
    double lr;
    double loss;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TrainLogEntry> log;
    std::optional<LowRankAdapter> adapter;  // trained adapter when one was supplied
};

TrainResult train_phase(const Checkpoint& ckpt, const corpus::Dataset& dataset,
                        const TrainConfig& cfg, const FreezeMask* mask = nullptr,
                        const LowRankAdapter* adapter = nullptr);

void write_train_log_csv(const std::vector<TrainLogEntry>& log, const std::string& path);

// Tokenize a dataset example against a vocabulary; prompt = instruction + input.
TokenizedExample tokenize_example(const corpus::Vocab& vocab, const corpus::Example& ex);

// -------- checkpoint I/O --------
// Binary format: magic "CFTL", u32 version 1, length-prefixed config block
// (model config + provenance + vocabulary), tensor table, little-endian f32
// payloads, trailing CRC32 of everything before it.

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cftlab::engine
