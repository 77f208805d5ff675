#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "grasp/data.hpp"
#include "grasp/lowrank.hpp"
#include "grasp/numerics.hpp"

namespace grasp {

// How per-layer hidden-state similarity is aggregated over tokens:
// cosine per token position then averaged (default), or cosine of the
// token-averaged hidden states.
enum class SimilarityAggregation { kTokenMeanCosine, kCosineOfMeans };

const char* to_string(SimilarityAggregation a);
SimilarityAggregation similarity_aggregation_from_string(const std::string& s);

struct ModelConfig {
    int vocab_size = 256;
    int d_model = 64;
    int n_layers = 8;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq_len = 64;
    std::uint64_t seed = 0;
    SimilarityAggregation similarity = SimilarityAggregation::kTokenMeanCosine;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

// The seven weight matrices of one pre-norm block, plus its norm scales.
enum class Slot { kWq, kWk, kWv, kWo, kWUp, kWGate, kWDown };
inline constexpr std::array<Slot, 7> kAllSlots = {
    Slot::kWq, Slot::kWk, Slot::kWv, Slot::kWo,
    Slot::kWUp, Slot::kWGate, Slot::kWDown};

const char* slot_name(Slot s);
Slot slot_from_name(const std::string& name);
// (rows, cols) of a slot under a config
std::pair<Index, Index> slot_shape(Slot s, const ModelConfig& config);

struct LayerWeights {
    Matrix wq, wk, wv, wo;   // d_model x d_model
    Matrix w_up, w_gate;     // d_model x d_ff
    Matrix w_down;           // d_ff x d_model
    Vector attn_norm, mlp_norm;  // d_model

    Matrix& at(Slot s);
    const Matrix& at(Slot s) const;
};

struct LowRankLayer {
    std::array<LowRankFactor, 7> factors;  // indexed by Slot order
    Vector attn_norm, mlp_norm;

    LowRankFactor& at(Slot s) { return factors[static_cast<std::size_t>(s)]; }
    const LowRankFactor& at(Slot s) const {
        return factors[static_cast<std::size_t>(s)];
    }
};

using Layer = std::variant<LayerWeights, LowRankLayer>;

struct TransformerModel {
    ModelConfig config;
    Matrix embedding;      // vocab_size x d_model; unembedding is its transpose
    Matrix pos_embedding;  // max_seq_len x d_model
    std::vector<Layer> layers;
    Vector final_norm;

    bool is_compressed(int layer) const {
        return std::holds_alternative<LowRankLayer>(layers[layer]);
    }
    int compressed_layer_count() const;
};

// Deterministic init: weights and embeddings ~ N(0, 0.02^2) drawn in a fixed
// order from the config seed; norm scales start at 1.
TransformerModel init_model(const ModelConfig& config);

// Total parameter count: embedding + per-layer matrices and norm scales +
// final norm. A low-rank slot counts k*(m+n+1) in place of m*n (u_k, v_k and
// sigma_k per retained group); the position table is bookkeeping outside the
// compression arithmetic and is not counted.
long parameter_count(const TransformerModel& model);

// 1 - compressed/dense parameter count, rounded to 4 decimals.
double compression_ratio(long dense_count, long compressed_count);

// FNV-1a over every parameter payload in a fixed order.
std::uint64_t model_checksum(const TransformerModel& model);

struct ForwardOptions {
    bool want_loss = true;      // requires every sequence length >= 2
    bool capture_hidden = false;  // keep full per-token hidden states
};

struct LayerTrace {
    Vector mean_in;   // hidden state entering the block, averaged over tokens
    Vector mean_out;  // hidden state leaving the block
    double mean_cosine = 0.0;  // mean over tokens of per-token cosine
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    std::vector<Matrix> logits;  // one T x vocab matrix per sequence
    double loss = 0.0;
    long token_count = 0;  // number of next-token predictions scored
    // hidden[l][s] = residual stream entering layer l for sequence s
    // (T x d_model); hidden[n_layers][s] is the final output. Populated only
    // when ForwardOptions::capture_hidden is set.
    std::vector<std::vector<Matrix>> hidden;
};

ForwardTrace forward(const TransformerModel& model,
                     const std::vector<TokenSequence>& batch,
                     const ForwardOptions& options = {});

// Mean over tokens of -log softmax(logits_row)[target]. One logits row per
// target.
double lm_loss(const Matrix& logits, const std::vector<int>& targets);

struct GradientSet {
    std::map<std::pair<int, Slot>, Matrix> weights;  // dense slots
    std::map<std::pair<int, Slot>, std::pair<Matrix, Matrix>> factors;  // (da, db)
    Matrix embedding;
    Matrix pos_embedding;
    std::vector<Vector> attn_norm;  // per layer
    std::vector<Vector> mlp_norm;
    Vector final_norm;
    double loss = 0.0;
    long token_count = 0;
};

// Reverse-mode gradients of the mean next-token NLL with respect to every
// parameter. Dense slots land in `weights`, compressed slots in `factors`.
GradientSet backward(const TransformerModel& model,
                     const std::vector<TokenSequence>& batch);

// Incremental decode state for the throughput benchmark: all sequences in
// the batch advance in lockstep and attention reads cached K/V.
class InferenceSession {
  public:
    InferenceSession(const TransformerModel& model, int batch, int max_len);

    // Feeds one token per sequence, returns logits (batch x vocab).
    const Matrix& step(const std::vector<int>& tokens);
    void reset();

  private:
    const TransformerModel& model_;
    int batch_;
    int max_len_;
    int pos_ = 0;
    std::vector<Matrix> k_cache_;  // per layer: (batch*max_len) x d_model
    std::vector<Matrix> v_cache_;
    Matrix x_, logits_;
};

}  // namespace grasp
