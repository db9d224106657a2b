#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "assd/config.hpp"
#include "assd/dataset.hpp"
#include "assd/detector.hpp"
#include "assd/optim.hpp"

namespace assd {

struct TrainOptions {
    int batchSize = 8;
    double learningRate = 1e-3;
    double momentum = 0.9;
    double weightDecay = 5e-4;
    bool augment = true; // random horizontal flip + min-IoU random crop
};

struct TrainResult {
    ModelParams params;
    std::vector<double> epochLoss; // mean per-image multibox loss
};

// One augmented view of a training sample: random horizontal flip plus an
// SSD-style random crop whose patch must reach a sampled minimum IoU with
// some ground-truth box. Deterministic in the rng it is given.
struct TensorSample {
    Tensor image;
    std::vector<Box> boxes;
};
TensorSample augmentSample(const TensorSample& sample, Rng& rng);

// Deterministic given (seed, config, data): per-purpose rng streams fix
// initialization, shuffling and augmentation. Schedule entries are
// (epoch, multiplier) applied at the start of that epoch. Throws if the loss
// diverges to a non-finite value.
TrainResult trainLoop(const PyramidConfig& config, const std::vector<Sample>& data, int epochs,
                      const std::vector<std::pair<int, double>>& schedule, std::uint64_t seed,
                      const TrainOptions& options = {},
                      const std::function<void(int, double)>& epochCallback = {});

} // namespace assd
