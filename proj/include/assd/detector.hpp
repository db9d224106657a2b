#pragma once

#include <string>
#include <utility>
#include <vector>

#include "assd/attention.hpp"
#include "assd/boxes.hpp"
#include "assd/config.hpp"
#include "assd/fusion.hpp"
#include "assd/layers.hpp"
#include "assd/tensor.hpp"

namespace assd {

struct ConvBlock {
    ConvParams conv;
    BatchNormParams bn;
};

struct HeadParams {
    ConvParams loc;  // 4 * boxesPerCell outputs
    ConvParams conf; // (K+1) * boxesPerCell outputs
};

// Every learnable tensor of the model. Fusion/attention members are empty
// when the config disables them; grads and velocities reuse this structure.
struct ModelParams {
    std::vector<ConvBlock> backbone;
    FusionParams fusion;
    std::vector<AttentionParams> attention; // one unit per scale
    std::vector<HeadParams> heads;
};

ModelParams initParams(const PyramidConfig& config, std::uint64_t seed);
ModelParams makeZeroGrads(const ModelParams& params);

// Stable name -> tensor enumeration; order is the checkpoint and SGD pairing
// contract.
std::vector<std::pair<std::string, Tensor*>> learnableTensors(ModelParams& params);
std::vector<std::pair<std::string, const Tensor*>> learnableTensors(const ModelParams& params);
// Batch-norm running statistics (saved in checkpoints, not trained).
std::vector<std::pair<std::string, Tensor*>> stateTensors(ModelParams& params);
std::vector<std::pair<std::string, const Tensor*>> stateTensors(const ModelParams& params);

struct ScaleOutput {
    Tensor loc;            // [A_s, 4]
    Tensor conf;           // [A_s, K+1]
    AttentionMap attention; // empty scores when attention is disabled
};

struct ForwardResult {
    std::vector<ScaleOutput> scales;
    Tensor locRows() const;  // [sum A_s, 4]
    Tensor confRows() const; // [sum A_s, K+1]
};

struct BlockCache {
    Tensor input;
    Tensor bnOut;
    BatchNormCache bn;
};

// Everything the hand-written backward pass needs from the forward pass.
struct ForwardCache {
    std::vector<BlockCache> blocks;
    std::vector<Tensor> rawScale;  // backbone taps, one per scale
    FusionCache fusion;
    std::vector<AttentionCache> attention;
    std::vector<Tensor> headInput; // per scale, what the heads consumed
};

// training=true runs batch norm on batch statistics and fills the cache for
// detectorBackward; inference uses running statistics. Pure in both modes:
// observed batch stats live in the cache until applyBatchStats folds them in.
ForwardResult detectorForward(const Tensor& image, const ModelParams& params,
                              const PyramidConfig& config, bool training = false,
                              ForwardCache* cache = nullptr);

// Gradients w.r.t. every learnable tensor, from row-layout head gradients.
ModelParams detectorBackward(const ModelParams& params, const PyramidConfig& config,
                             const ForwardCache& cache, const Tensor& gradLocRows,
                             const Tensor& gradConfRows);

void applyBatchStats(ModelParams& params, const ForwardCache& cache);

// Mini-batch training pass: batch-norm statistics are pooled across the
// images of the batch (a batch of one reduces exactly to the single-image
// training forward). The branch beyond the backbone stays per image.
struct BatchCache {
    struct BlockBatch {
        std::vector<Tensor> inputs;
        std::vector<Tensor> bnOut;
        BatchNormPooledCache bn;
    };
    std::vector<BlockBatch> blocks;
    std::vector<ForwardCache> perImage; // rawScale and branch caches only
};

std::vector<ForwardResult> detectorForwardBatch(const std::vector<Tensor>& images,
                                                const ModelParams& params,
                                                const PyramidConfig& config, BatchCache& cache);

// Summed gradients over the batch; pass per-image loss gradients already
// scaled the way the loss averages them.
ModelParams detectorBackwardBatch(const ModelParams& params, const PyramidConfig& config,
                                  const BatchCache& cache,
                                  const std::vector<Tensor>& gradLocRows,
                                  const std::vector<Tensor>& gradConfRows);

void applyBatchStats(ModelParams& params, const BatchCache& cache);

struct MultiboxLossResult {
    double loss = 0.0;
    Tensor gradLoc;  // [A, 4]
    Tensor gradConf; // [A, K+1]
};

// SSD loss: smooth-L1 on positive locations plus cross-entropy on positives
// and hard-mined negatives, normalized by the positive count. Zero when no
// anchor is positive.
MultiboxLossResult multiboxLoss(const Tensor& locRows, const Tensor& confRows,
                                const MatchResult& matches, double negPosRatio = 3.0);

double smoothL1(double x);
double smoothL1Grad(double x);

std::vector<Detection> detect(const Tensor& image, const ModelParams& params,
                              const PyramidConfig& config, double scoreThreshold = 0.01,
                              double nmsThreshold = 0.45, std::size_t maxDetections = 200);

} // namespace assd
