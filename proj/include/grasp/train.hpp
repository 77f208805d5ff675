#pragma once

#include <cstdint>
#include <set>
#include <utility>

#include "grasp/data.hpp"
#include "grasp/model.hpp"

namespace grasp {

struct TrainOptions {
    int steps = 2000;
    double lr = 0.1;
    int batch_size = 8;
    int seq_len = 64;
    std::uint64_t seed = 1;
    double clip_norm = 1.0;  // global gradient-norm clip, 0 disables
    // Slots excluded from updates (weights stay exactly as initialized).
    std::set<std::pair<int, Slot>> freeze;
    int log_every = 0;  // 0 = silent
};

struct TrainResult {
    double final_loss = 0.0;
    int steps = 0;
};

// Plain SGD on the mean next-token NLL. Updates every parameter (matrices,
// embeddings, norm scales) except frozen slots; deterministic per seed.
TrainResult train(TransformerModel& model, const Corpus& corpus,
                  const TrainOptions& options);

}  // namespace grasp
