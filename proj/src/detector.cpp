#include "assd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "assd/rng.hpp"

namespace assd {

namespace {

// The backbone is a chain of 3x3/stride-2 conv-BN-ReLU blocks; each scale
// taps the chain once its grid size is reached.
struct BackbonePlan {
    struct Block {
        std::size_t inC, outC;
    };
    std::vector<Block> blocks;
    std::vector<std::size_t> tap; // per scale: block index whose output is the scale map
};

BackbonePlan planBackbone(const PyramidConfig& config) {
    BackbonePlan plan;
    std::size_t inC = 3;
    int res = config.imageSize;
    for (const ScaleSpec& s : config.scales) {
        while (res > s.grid) {
            plan.blocks.push_back({inC, static_cast<std::size_t>(s.channels)});
            inC = static_cast<std::size_t>(s.channels);
            res /= 2;
        }
        plan.tap.push_back(plan.blocks.size() - 1);
    }
    return plan;
}

Tensor xavierConvWeight(std::size_t outC, std::size_t inC, std::size_t kh, std::size_t kw, Rng& rng) {
    const double fanIn = static_cast<double>(inC * kh * kw);
    const double fanOut = static_cast<double>(outC * kh * kw);
    const double bound = std::sqrt(6.0 / (fanIn + fanOut));
    Tensor w({outC, inC, kh, kw});
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    return w;
}

ConvParams makeConv(std::size_t outC, std::size_t inC, std::size_t k, int stride, int pad, Rng& rng) {
    ConvParams p;
    p.weight = xavierConvWeight(outC, inC, k, k, rng);
    p.bias = Tensor({outC});
    p.stride = stride;
    p.padding = pad;
    return p;
}

BatchNormParams makeBatchNorm(std::size_t channels) {
    BatchNormParams p;
    p.gamma = Tensor::full({channels}, 1.0);
    p.beta = Tensor({channels});
    p.runningMean = Tensor({channels});
    p.runningVar = Tensor::full({channels}, 1.0);
    return p;
}

std::size_t fusionTotalChannels(const PyramidConfig& config) {
    std::size_t total = 0;
    for (std::size_t s = 0; s < config.fusionInputCount(); ++s)
        total += static_cast<std::size_t>(config.scales[s].channels);
    return total;
}

// head map [B*D, g, g] -> rows [g*g*B, D]; row ((j*g+i)*B+b) matches the
// anchor emission order of generateLayerAnchors.
Tensor mapToRows(const Tensor& map, std::size_t boxes, std::size_t depth) {
    const std::size_t g = map.dim(1);
    Tensor rows({g * g * boxes, depth});
    for (std::size_t j = 0; j < g; ++j)
        for (std::size_t i = 0; i < g; ++i)
            for (std::size_t b = 0; b < boxes; ++b) {
                double* row = rows.data() + ((j * g + i) * boxes + b) * depth;
                for (std::size_t k = 0; k < depth; ++k) row[k] = map.at(b * depth + k, j, i);
            }
    return rows;
}

Tensor rowsToMap(const Tensor& rows, std::size_t boxes, std::size_t depth, std::size_t g) {
    Tensor map({boxes * depth, g, g});
    for (std::size_t j = 0; j < g; ++j)
        for (std::size_t i = 0; i < g; ++i)
            for (std::size_t b = 0; b < boxes; ++b) {
                const double* row = rows.data() + ((j * g + i) * boxes + b) * depth;
                for (std::size_t k = 0; k < depth; ++k) map.at(b * depth + k, j, i) = row[k];
            }
    return map;
}

Tensor concatRows(const std::vector<ScaleOutput>& scales, bool loc) {
    std::size_t total = 0;
    const std::size_t depth = loc ? scales[0].loc.dim(1) : scales[0].conf.dim(1);
    for (const ScaleOutput& s : scales) total += loc ? s.loc.dim(0) : s.conf.dim(0);
    Tensor rows({total, depth});
    double* dst = rows.data();
    for (const ScaleOutput& s : scales) {
        const Tensor& src = loc ? s.loc : s.conf;
        std::copy(src.data(), src.data() + src.size(), dst);
        dst += src.size();
    }
    return rows;
}

} // namespace

ModelParams initParams(const PyramidConfig& config, std::uint64_t seed) {
    validateConfig(config);
    Rng rng(deriveSeed(seed, stream::kInit));
    const BackbonePlan plan = planBackbone(config);

    ModelParams m;
    for (const BackbonePlan::Block& b : plan.blocks) {
        ConvBlock block;
        block.conv = makeConv(b.outC, b.inC, 3, 2, 1, rng);
        block.bn = makeBatchNorm(b.outC);
        m.backbone.push_back(std::move(block));
    }
    if (config.useFusion) {
        const std::size_t total = fusionTotalChannels(config);
        const std::size_t outC = static_cast<std::size_t>(config.scales[0].channels);
        const double bound = std::sqrt(6.0 / static_cast<double>(total + outC));
        m.fusion.weight = Tensor({outC, total});
        for (double& v : m.fusion.weight.values()) v = rng.uniform(-bound, bound);
        m.fusion.bias = Tensor({outC});
    }
    if (config.useAttention) {
        for (const ScaleSpec& s : config.scales) {
            AttentionParams a = initAttentionParams(static_cast<std::size_t>(s.channels), rng);
            // the unit starts as the exact identity (residual form of the
            // update); the value path phases in as wv trains away from zero
            a.wv = Tensor::zerosLike(a.wv);
            m.attention.push_back(std::move(a));
        }
    }
    for (std::size_t s = 0; s < config.scaleCount(); ++s) {
        const std::size_t c = static_cast<std::size_t>(config.scales[s].channels);
        const std::size_t boxes = config.boxesPerCell(s);
        HeadParams head;
        head.loc = makeConv(boxes * 4, c, 3, 1, 1, rng);
        head.conf = makeConv(boxes * static_cast<std::size_t>(config.numClasses + 1), c, 3, 1, 1, rng);
        m.heads.push_back(std::move(head));
    }
    return m;
}

ModelParams makeZeroGrads(const ModelParams& params) {
    ModelParams g;
    for (const ConvBlock& b : params.backbone) {
        ConvBlock zb;
        zb.conv.weight = Tensor::zerosLike(b.conv.weight);
        zb.conv.bias = Tensor::zerosLike(b.conv.bias);
        zb.conv.stride = b.conv.stride;
        zb.conv.padding = b.conv.padding;
        zb.bn.gamma = Tensor::zerosLike(b.bn.gamma);
        zb.bn.beta = Tensor::zerosLike(b.bn.beta);
        zb.bn.runningMean = Tensor::zerosLike(b.bn.runningMean);
        zb.bn.runningVar = Tensor::zerosLike(b.bn.runningVar);
        g.backbone.push_back(std::move(zb));
    }
    if (!params.fusion.weight.empty()) {
        g.fusion.weight = Tensor::zerosLike(params.fusion.weight);
        g.fusion.bias = Tensor::zerosLike(params.fusion.bias);
    }
    for (const AttentionParams& a : params.attention) {
        AttentionParams za;
        za.wq = Tensor::zerosLike(a.wq);
        za.wk = Tensor::zerosLike(a.wk);
        za.wv = Tensor::zerosLike(a.wv);
        g.attention.push_back(std::move(za));
    }
    for (const HeadParams& h : params.heads) {
        HeadParams zh;
        zh.loc.weight = Tensor::zerosLike(h.loc.weight);
        zh.loc.bias = Tensor::zerosLike(h.loc.bias);
        zh.loc.stride = h.loc.stride;
        zh.loc.padding = h.loc.padding;
        zh.conf.weight = Tensor::zerosLike(h.conf.weight);
        zh.conf.bias = Tensor::zerosLike(h.conf.bias);
        zh.conf.stride = h.conf.stride;
        zh.conf.padding = h.conf.padding;
        g.heads.push_back(std::move(zh));
    }
    return g;
}

namespace {

template <typename Params, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> enumerateLearnable(Params& params) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (std::size_t i = 0; i < params.backbone.size(); ++i) {
        const std::string base = "backbone." + std::to_string(i);
        out.emplace_back(base + ".conv.weight", &params.backbone[i].conv.weight);
        out.emplace_back(base + ".conv.bias", &params.backbone[i].conv.bias);
        out.emplace_back(base + ".bn.gamma", &params.backbone[i].bn.gamma);
        out.emplace_back(base + ".bn.beta", &params.backbone[i].bn.beta);
    }
    if (!params.fusion.weight.empty()) {
        out.emplace_back("fusion.weight", &params.fusion.weight);
        out.emplace_back("fusion.bias", &params.fusion.bias);
    }
    for (std::size_t s = 0; s < params.attention.size(); ++s) {
        const std::string base = "attention." + std::to_string(s);
        out.emplace_back(base + ".wq", &params.attention[s].wq);
        out.emplace_back(base + ".wk", &params.attention[s].wk);
        out.emplace_back(base + ".wv", &params.attention[s].wv);
    }
    for (std::size_t s = 0; s < params.heads.size(); ++s) {
        const std::string base = "head." + std::to_string(s);
        out.emplace_back(base + ".loc.weight", &params.heads[s].loc.weight);
        out.emplace_back(base + ".loc.bias", &params.heads[s].loc.bias);
        out.emplace_back(base + ".conf.weight", &params.heads[s].conf.weight);
        out.emplace_back(base + ".conf.bias", &params.heads[s].conf.bias);
    }
    return out;
}

template <typename Params, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> enumerateState(Params& params) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (std::size_t i = 0; i < params.backbone.size(); ++i) {
        const std::string base = "backbone." + std::to_string(i) + ".bn";
        out.emplace_back(base + ".running_mean", &params.backbone[i].bn.runningMean);
        out.emplace_back(base + ".running_var", &params.backbone[i].bn.runningVar);
    }
    return out;
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> learnableTensors(ModelParams& params) {
    return enumerateLearnable<ModelParams, Tensor*>(params);
}
std::vector<std::pair<std::string, const Tensor*>> learnableTensors(const ModelParams& params) {
    return enumerateLearnable<const ModelParams, const Tensor*>(params);
}
std::vector<std::pair<std::string, Tensor*>> stateTensors(ModelParams& params) {
    return enumerateState<ModelParams, Tensor*>(params);
}
std::vector<std::pair<std::string, const Tensor*>> stateTensors(const ModelParams& params) {
    return enumerateState<const ModelParams, const Tensor*>(params);
}

Tensor ForwardResult::locRows() const { return concatRows(scales, true); }
Tensor ForwardResult::confRows() const { return concatRows(scales, false); }

namespace {

void checkImageShape(const Tensor& image, const PyramidConfig& config) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != static_cast<std::size_t>(config.imageSize) ||
        image.dim(2) != static_cast<std::size_t>(config.imageSize))
        throw std::invalid_argument("forward: image shape " + image.shapeStr() + " does not match config input 3x" +
                                    std::to_string(config.imageSize) + "x" + std::to_string(config.imageSize));
}

// everything past the backbone for one image: fusion on the shallowest
// scale, attention on every scale, prediction heads. Expects c.rawScale.
ForwardResult branchForward(const ModelParams& params, const PyramidConfig& config, ForwardCache& c) {
    c.headInput.resize(config.scaleCount());
    Tensor scale0 = c.rawScale[0];
    if (config.useFusion) {
        std::vector<Tensor> inputs(c.rawScale.begin(),
                                   c.rawScale.begin() + static_cast<long>(config.fusionInputCount()));
        scale0 = fuse(inputs, params.fusion, &c.fusion);
    }

    ForwardResult result;
    c.attention.resize(config.scaleCount());
    for (std::size_t s = 0; s < config.scaleCount(); ++s) {
        Tensor in = s == 0 ? std::move(scale0) : c.rawScale[s];
        ScaleOutput out;
        if (config.useAttention) {
            c.headInput[s] = attentionForward(in, params.attention[s], &c.attention[s]);
            out.attention.scores = c.attention[s].weights;
            out.attention.scaleIndex = s;
        } else {
            c.headInput[s] = std::move(in);
        }
        const std::size_t boxes = config.boxesPerCell(s);
        const std::size_t g = static_cast<std::size_t>(config.scales[s].grid);
        out.loc = mapToRows(conv2d(c.headInput[s], params.heads[s].loc), boxes, 4);
        out.conf = mapToRows(conv2d(c.headInput[s], params.heads[s].conf), boxes,
                             static_cast<std::size_t>(config.numClasses + 1));
        if (out.loc.dim(0) != g * g * boxes)
            throw std::runtime_error("forward: head row count mismatch at scale " + std::to_string(s));
        result.scales.push_back(std::move(out));
    }
    return result;
}

// per-image branch backward; accumulates parameter gradients and returns the
// gradients w.r.t. the raw backbone taps
std::vector<Tensor> branchBackward(const ModelParams& params, const PyramidConfig& config,
                                   const ForwardCache& cache, const Tensor& gradLocRows,
                                   const Tensor& gradConfRows, ModelParams& grads) {
    std::vector<Tensor> dRaw(config.scaleCount());
    for (std::size_t s = 0; s < config.scaleCount(); ++s) dRaw[s] = Tensor::zerosLike(cache.rawScale[s]);

    std::size_t rowOffset = 0;
    Tensor dFused; // gradient w.r.t. the fused scale-0 map
    for (std::size_t s = 0; s < config.scaleCount(); ++s) {
        const std::size_t boxes = config.boxesPerCell(s);
        const std::size_t g = static_cast<std::size_t>(config.scales[s].grid);
        const std::size_t rows = g * g * boxes;
        const std::size_t confDepth = static_cast<std::size_t>(config.numClasses + 1);

        Tensor gLoc({rows, 4});
        std::copy(gradLocRows.data() + rowOffset * 4, gradLocRows.data() + (rowOffset + rows) * 4, gLoc.data());
        Tensor gConf({rows, confDepth});
        std::copy(gradConfRows.data() + rowOffset * confDepth,
                  gradConfRows.data() + (rowOffset + rows) * confDepth, gConf.data());
        rowOffset += rows;

        const ConvGrads locG =
            conv2dBackward(cache.headInput[s], params.heads[s].loc, rowsToMap(gLoc, boxes, 4, g));
        const ConvGrads confG =
            conv2dBackward(cache.headInput[s], params.heads[s].conf, rowsToMap(gConf, boxes, confDepth, g));
        accumulate(grads.heads[s].loc.weight, locG.weight);
        accumulate(grads.heads[s].loc.bias, locG.bias);
        accumulate(grads.heads[s].conf.weight, confG.weight);
        accumulate(grads.heads[s].conf.bias, confG.bias);

        Tensor dHeadIn = locG.input;
        accumulate(dHeadIn, confG.input);

        Tensor dScaleIn;
        if (config.useAttention) {
            AttentionGrads ag = attentionBackward(params.attention[s], cache.attention[s], dHeadIn);
            accumulate(grads.attention[s].wq, ag.wq);
            accumulate(grads.attention[s].wk, ag.wk);
            accumulate(grads.attention[s].wv, ag.wv);
            dScaleIn = std::move(ag.input);
        } else {
            dScaleIn = std::move(dHeadIn);
        }

        if (s == 0)
            dFused = std::move(dScaleIn);
        else
            accumulate(dRaw[s], dScaleIn);
    }

    if (config.useFusion) {
        std::vector<Tensor> inputs(cache.rawScale.begin(),
                                   cache.rawScale.begin() + static_cast<long>(config.fusionInputCount()));
        FusionGrads fg = fuseBackward(inputs, params.fusion, cache.fusion, dFused);
        accumulate(grads.fusion.weight, fg.weight);
        accumulate(grads.fusion.bias, fg.bias);
        for (std::size_t i = 0; i < fg.inputs.size(); ++i) accumulate(dRaw[i], fg.inputs[i]);
    } else {
        accumulate(dRaw[0], dFused);
    }
    return dRaw;
}

} // namespace

ForwardResult detectorForward(const Tensor& image, const ModelParams& params,
                              const PyramidConfig& config, bool training, ForwardCache* cache) {
    validateConfig(config);
    checkImageShape(image, config);

    const BackbonePlan plan = planBackbone(config);
    if (plan.blocks.size() != params.backbone.size())
        throw std::invalid_argument("forward: params have " + std::to_string(params.backbone.size()) +
                                    " backbone blocks, config needs " + std::to_string(plan.blocks.size()));

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c = ForwardCache{};

    Tensor x = image;
    c.rawScale.resize(config.scaleCount());
    std::size_t nextScale = 0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        BlockCache bc;
        bc.input = x;
        Tensor convOut = conv2d(x, params.backbone[i].conv);
        bc.bnOut = batchNorm(convOut, params.backbone[i].bn, training, &bc.bn);
        x = relu(bc.bnOut);
        c.blocks.push_back(std::move(bc));
        while (nextScale < plan.tap.size() && plan.tap[nextScale] == i) {
            c.rawScale[nextScale] = x;
            ++nextScale;
        }
    }
    return branchForward(params, config, c);
}

namespace {

// shared chain-reversal step: fold per-scale tap gradients into per-block
// output gradients
std::vector<Tensor> tapGradients(const BackbonePlan& plan, const PyramidConfig& config,
                                 std::vector<Tensor>&& dRaw) {
    std::vector<Tensor> blockOutGrad(plan.blocks.size());
    for (std::size_t s = 0; s < config.scaleCount(); ++s) {
        Tensor& slot = blockOutGrad[plan.tap[s]];
        if (slot.empty())
            slot = std::move(dRaw[s]);
        else
            accumulate(slot, dRaw[s]);
    }
    return blockOutGrad;
}

} // namespace

ModelParams detectorBackward(const ModelParams& params, const PyramidConfig& config,
                             const ForwardCache& cache, const Tensor& gradLocRows,
                             const Tensor& gradConfRows) {
    ModelParams grads = makeZeroGrads(params);
    std::vector<Tensor> dRaw = branchBackward(params, config, cache, gradLocRows, gradConfRows, grads);

    const BackbonePlan plan = planBackbone(config);
    std::vector<Tensor> blockOutGrad = tapGradients(plan, config, std::move(dRaw));
    for (std::size_t i = plan.blocks.size(); i-- > 0;) {
        Tensor g = std::move(blockOutGrad[i]);
        if (g.empty()) throw std::runtime_error("backward: missing gradient for backbone block");
        g = reluBackward(cache.blocks[i].bnOut, g);
        const BatchNormGrads bg = batchNormBackward(params.backbone[i].bn, cache.blocks[i].bn, g);
        grads.backbone[i].bn.gamma = bg.gamma;
        grads.backbone[i].bn.beta = bg.beta;
        const ConvGrads cg = conv2dBackward(cache.blocks[i].input, params.backbone[i].conv, bg.input);
        grads.backbone[i].conv.weight = cg.weight;
        grads.backbone[i].conv.bias = cg.bias;
        if (i > 0) {
            if (blockOutGrad[i - 1].empty())
                blockOutGrad[i - 1] = cg.input;
            else
                accumulate(blockOutGrad[i - 1], cg.input);
        }
    }
    return grads;
}

void applyBatchStats(ModelParams& params, const ForwardCache& cache) {
    for (std::size_t i = 0; i < params.backbone.size(); ++i)
        updateRunningStats(params.backbone[i].bn, cache.blocks[i].bn);
}

std::vector<ForwardResult> detectorForwardBatch(const std::vector<Tensor>& images,
                                                const ModelParams& params,
                                                const PyramidConfig& config, BatchCache& cache) {
    validateConfig(config);
    if (images.empty()) throw std::invalid_argument("forward: empty batch");
    for (const Tensor& image : images) checkImageShape(image, config);

    const BackbonePlan plan = planBackbone(config);
    if (plan.blocks.size() != params.backbone.size())
        throw std::invalid_argument("forward: params have " + std::to_string(params.backbone.size()) +
                                    " backbone blocks, config needs " + std::to_string(plan.blocks.size()));

    cache = BatchCache{};
    cache.perImage.resize(images.size());
    for (ForwardCache& c : cache.perImage) c.rawScale.resize(config.scaleCount());

    std::vector<Tensor> xs = images;
    std::size_t nextScale = 0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        BatchCache::BlockBatch bb;
        bb.inputs = xs;
        std::vector<Tensor> convOuts;
        convOuts.reserve(xs.size());
        for (const Tensor& x : xs) convOuts.push_back(conv2d(x, params.backbone[i].conv));
        bb.bnOut = batchNormPooled(convOuts, params.backbone[i].bn, &bb.bn);
        for (std::size_t e = 0; e < xs.size(); ++e) xs[e] = relu(bb.bnOut[e]);
        cache.blocks.push_back(std::move(bb));
        while (nextScale < plan.tap.size() && plan.tap[nextScale] == i) {
            for (std::size_t e = 0; e < xs.size(); ++e) cache.perImage[e].rawScale[nextScale] = xs[e];
            ++nextScale;
        }
    }

    std::vector<ForwardResult> results;
    results.reserve(images.size());
    for (std::size_t e = 0; e < images.size(); ++e)
        results.push_back(branchForward(params, config, cache.perImage[e]));
    return results;
}

ModelParams detectorBackwardBatch(const ModelParams& params, const PyramidConfig& config,
                                  const BatchCache& cache,
                                  const std::vector<Tensor>& gradLocRows,
                                  const std::vector<Tensor>& gradConfRows) {
    const std::size_t batch = cache.perImage.size();
    if (gradLocRows.size() != batch || gradConfRows.size() != batch)
        throw std::invalid_argument("backward: gradient batch does not match the cache");

    ModelParams grads = makeZeroGrads(params);
    const BackbonePlan plan = planBackbone(config);

    // per-image branch backward, then the batch-coupled backbone chain
    std::vector<std::vector<Tensor>> blockOutGrad(batch);
    for (std::size_t e = 0; e < batch; ++e) {
        std::vector<Tensor> dRaw =
            branchBackward(params, config, cache.perImage[e], gradLocRows[e], gradConfRows[e], grads);
        blockOutGrad[e] = tapGradients(plan, config, std::move(dRaw));
    }

    for (std::size_t i = plan.blocks.size(); i-- > 0;) {
        const BatchCache::BlockBatch& bb = cache.blocks[i];
        std::vector<Tensor> bnOutGrads(batch);
        for (std::size_t e = 0; e < batch; ++e) {
            Tensor g = std::move(blockOutGrad[e][i]);
            if (g.empty()) throw std::runtime_error("backward: missing gradient for backbone block");
            bnOutGrads[e] = reluBackward(bb.bnOut[e], g);
        }
        const BatchNormPooledGrads bg = batchNormPooledBackward(params.backbone[i].bn, bb.bn, bnOutGrads);
        accumulate(grads.backbone[i].bn.gamma, bg.gamma);
        accumulate(grads.backbone[i].bn.beta, bg.beta);
        for (std::size_t e = 0; e < batch; ++e) {
            const ConvGrads cg = conv2dBackward(bb.inputs[e], params.backbone[i].conv, bg.inputs[e]);
            accumulate(grads.backbone[i].conv.weight, cg.weight);
            accumulate(grads.backbone[i].conv.bias, cg.bias);
            if (i > 0) {
                if (blockOutGrad[e][i - 1].empty())
                    blockOutGrad[e][i - 1] = cg.input;
                else
                    accumulate(blockOutGrad[e][i - 1], cg.input);
            }
        }
    }
    return grads;
}

void applyBatchStats(ModelParams& params, const BatchCache& cache) {
    for (std::size_t i = 0; i < params.backbone.size(); ++i)
        updateRunningStats(params.backbone[i].bn, cache.blocks[i].bn);
}

double smoothL1(double x) {
    const double ax = std::fabs(x);
    return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smoothL1Grad(double x) {
    if (x > 1.0) return 1.0;
    if (x < -1.0) return -1.0;
    return x;
}

namespace {

// stable cross-entropy pieces for one logit row
struct RowSoftmax {
    std::vector<double> prob;
    double logSumExp;
};

RowSoftmax rowSoftmax(const double* logits, std::size_t n) {
    RowSoftmax r;
    r.prob.resize(n);
    const double mx = *std::max_element(logits, logits + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r.prob[i] = std::exp(logits[i] - mx);
        total += r.prob[i];
    }
    for (std::size_t i = 0; i < n; ++i) r.prob[i] /= total;
    r.logSumExp = mx + std::log(total);
    return r;
}

} // namespace

MultiboxLossResult multiboxLoss(const Tensor& locRows, const Tensor& confRows,
                                const MatchResult& matches, double negPosRatio) {
    const std::size_t anchors = matches.matchedTruth.size();
    if (locRows.rank() != 2 || locRows.dim(0) != anchors || locRows.dim(1) != 4)
        throw std::invalid_argument("multiboxLoss: loc rows " + locRows.shapeStr() + " do not match " +
                                    std::to_string(anchors) + " anchors");
    if (confRows.rank() != 2 || confRows.dim(0) != anchors)
        throw std::invalid_argument("multiboxLoss: conf rows " + confRows.shapeStr() + " do not match " +
                                    std::to_string(anchors) + " anchors");
    const std::size_t classes = confRows.dim(1);

    MultiboxLossResult result;
    result.gradLoc = Tensor::zerosLike(locRows);
    result.gradConf = Tensor::zerosLike(confRows);

    const std::size_t npos = matches.positiveCount();
    if (npos == 0) return result;
    const double invN = 1.0 / static_cast<double>(npos);

    // background cross-entropy per anchor drives the negative mining
    std::vector<double> backgroundLoss(anchors, 0.0);
    std::vector<RowSoftmax> softmaxes(anchors);
    for (std::size_t a = 0; a < anchors; ++a) {
        softmaxes[a] = rowSoftmax(confRows.data() + a * classes, classes);
        backgroundLoss[a] = softmaxes[a].logSumExp - confRows[a * classes + 0];
    }
    const std::vector<std::size_t> mined = hardNegativeMine(backgroundLoss, matches, negPosRatio);

    double locLoss = 0.0, confLoss = 0.0;
    for (std::size_t a = 0; a < anchors; ++a) {
        if (matches.matchedTruth[a] == kNegative) continue;
        const std::size_t target = static_cast<std::size_t>(matches.classTargets[a]);
        confLoss += softmaxes[a].logSumExp - confRows[a * classes + target];
        for (std::size_t k = 0; k < 4; ++k) {
            const double diff = locRows[a * 4 + k] - matches.locTargets[a][k];
            locLoss += smoothL1(diff);
            result.gradLoc[a * 4 + k] = smoothL1Grad(diff) * invN;
        }
        for (std::size_t j = 0; j < classes; ++j)
            result.gradConf[a * classes + j] = (softmaxes[a].prob[j] - (j == target ? 1.0 : 0.0)) * invN;
    }
    for (std::size_t a : mined) {
        confLoss += backgroundLoss[a];
        for (std::size_t j = 0; j < classes; ++j)
            result.gradConf[a * classes + j] = (softmaxes[a].prob[j] - (j == 0 ? 1.0 : 0.0)) * invN;
    }
    result.loss = (locLoss + confLoss) * invN;
    return result;
}

std::vector<Detection> detect(const Tensor& image, const ModelParams& params,
                              const PyramidConfig& config, double scoreThreshold,
                              double nmsThreshold, std::size_t maxDetections) {
    if (!(scoreThreshold > 0.0 && scoreThreshold < 1.0))
        throw std::invalid_argument("detect: score threshold must lie in (0,1)");
    if (!(nmsThreshold > 0.0 && nmsThreshold < 1.0))
        throw std::invalid_argument("detect: NMS threshold must lie in (0,1)");

    const ForwardResult fr = detectorForward(image, params, config, false);
    const Tensor loc = fr.locRows();
    const Tensor probs = softmaxRows(fr.confRows());
    const std::vector<Box> anchors = generateAnchors(config.anchorSpec());

    std::vector<Detection> merged;
    for (int cls = 1; cls <= config.numClasses; ++cls) {
        std::vector<Box> candidates;
        for (std::size_t a = 0; a < anchors.size(); ++a) {
            const double score = probs[a * probs.dim(1) + static_cast<std::size_t>(cls)];
            if (score <= scoreThreshold) continue;
            Box b = decodeBox({loc[a * 4 + 0], loc[a * 4 + 1], loc[a * 4 + 2], loc[a * 4 + 3]}, anchors[a]);
            b.xmin = std::clamp(b.xmin, 0.0, 1.0);
            b.ymin = std::clamp(b.ymin, 0.0, 1.0);
            b.xmax = std::clamp(b.xmax, 0.0, 1.0);
            b.ymax = std::clamp(b.ymax, 0.0, 1.0);
            if (!b.valid()) continue;
            b.classId = cls;
            b.score = score;
            candidates.push_back(b);
        }
        std::vector<Box> kept = nms(candidates, nmsThreshold);
        merged.insert(merged.end(), kept.begin(), kept.end());
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const Box& a, const Box& b) { return a.score > b.score; });
    if (merged.size() > maxDetections) merged.resize(maxDetections);
    return merged;
}

} // namespace assd
