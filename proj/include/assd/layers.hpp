#pragma once

#include "assd/tensor.hpp"

namespace assd {

// 2-D convolution parameters. Feature maps are rank-3 tensors [C,H,W].
struct ConvParams {
    Tensor weight; // [outC, inC, kh, kw]
    Tensor bias;   // [outC]
    int stride = 1;
    int padding = 0;

    std::size_t outChannels() const { return weight.dim(0); }
    std::size_t inChannels() const { return weight.dim(1); }
    std::size_t kernelH() const { return weight.dim(2); }
    std::size_t kernelW() const { return weight.dim(3); }
};

Tensor conv2d(const Tensor& x, const ConvParams& p);

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};
ConvGrads conv2dBackward(const Tensor& x, const ConvParams& p, const Tensor& gradOut);

struct BatchNormParams {
    Tensor gamma;       // [C]
    Tensor beta;        // [C]
    Tensor runningMean; // [C]
    Tensor runningVar;  // [C]
    double epsilon = 1e-5;
    double momentum = 0.1;
};

// Training-mode cache; mean/var are the batch statistics the caller folds
// into the running estimates.
struct BatchNormCache {
    Tensor mean;   // [C]
    Tensor var;    // [C] biased
    Tensor invStd; // [C]
    Tensor xhat;   // same shape as input
};

// Training mode normalizes by the per-channel statistics of the given map
// (the batch at this desk scale is the map's spatial extent); inference mode
// uses the running estimates. Does not mutate p: batch statistics are
// reported through the cache and folded in by the training loop.
Tensor batchNorm(const Tensor& x, const BatchNormParams& p, bool training,
                 BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};
BatchNormGrads batchNormBackward(const BatchNormParams& p, const BatchNormCache& cache,
                                 const Tensor& gradOut);

void updateRunningStats(BatchNormParams& p, const BatchNormCache& cache);

// Mini-batch variant: statistics pooled over a set of same-shaped maps, the
// way the training loop batches images. With a single map this is exactly
// training-mode batchNorm.
struct BatchNormPooledCache {
    Tensor mean;   // [C]
    Tensor var;    // [C] biased, pooled over batch * area
    Tensor invStd; // [C]
    std::vector<Tensor> xhat;
};
std::vector<Tensor> batchNormPooled(const std::vector<Tensor>& xs, const BatchNormParams& p,
                                    BatchNormPooledCache* cache = nullptr);
struct BatchNormPooledGrads {
    std::vector<Tensor> inputs;
    Tensor gamma;
    Tensor beta;
};
BatchNormPooledGrads batchNormPooledBackward(const BatchNormParams& p,
                                             const BatchNormPooledCache& cache,
                                             const std::vector<Tensor>& gradOuts);
void updateRunningStats(BatchNormParams& p, const BatchNormPooledCache& cache);

// Half-pixel-center bilinear interpolation with edge clamping:
// src = (dst + 0.5) * inSize/outSize - 0.5, clamped to [0, inSize-1].
Tensor bilinearUpsample(const Tensor& x, std::size_t outH, std::size_t outW);

// Scatters gradOut back with the same interpolation weights.
Tensor bilinearUpsampleBackward(const std::vector<std::size_t>& inputShape, const Tensor& gradOut);

Tensor reluBackward(const Tensor& x, const Tensor& gradOut);

} // namespace assd
