#include "assd/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "assd/layers.hpp"

namespace assd {

namespace {

TensorSample flipHorizontal(const TensorSample& s) {
    TensorSample out;
    const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    out.image = Tensor({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.image.at(ch, y, x) = s.image.at(ch, y, w - 1 - x);
    for (Box b : s.boxes) {
        const double xmin = 1.0 - b.xmax;
        b.xmax = 1.0 - b.xmin;
        b.xmin = xmin;
        out.boxes.push_back(b);
    }
    return out;
}

// integer-rect crop resized back to the input size; boxes are kept when
// their center falls inside the patch, then clipped and renormalized
bool cropSample(const TensorSample& s, double minIou, Rng& rng, TensorSample& out) {
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    for (int attempt = 0; attempt < 50; ++attempt) {
        const double scaleW = rng.uniform(0.3, 1.0);
        const double scaleH = rng.uniform(0.3, 1.0);
        const double aspect = scaleW / scaleH;
        if (aspect < 0.5 || aspect > 2.0) continue;
        const std::size_t cw = std::max<std::size_t>(1, static_cast<std::size_t>(scaleW * static_cast<double>(w)));
        const std::size_t ch = std::max<std::size_t>(1, static_cast<std::size_t>(scaleH * static_cast<double>(h)));
        const std::size_t cx = static_cast<std::size_t>(rng.uniformInt(0, static_cast<int>(w - cw)));
        const std::size_t cy = static_cast<std::size_t>(rng.uniformInt(0, static_cast<int>(h - ch)));

        const Box patch{static_cast<double>(cx) / static_cast<double>(w),
                        static_cast<double>(cy) / static_cast<double>(h),
                        static_cast<double>(cx + cw) / static_cast<double>(w),
                        static_cast<double>(cy + ch) / static_cast<double>(h)};
        bool satisfied = false;
        for (const Box& gt : s.boxes)
            if (iou(patch, gt) >= minIou) { satisfied = true; break; }
        if (!satisfied) continue;

        std::vector<Box> kept;
        for (const Box& gt : s.boxes) {
            if (gt.cx() < patch.xmin || gt.cx() > patch.xmax || gt.cy() < patch.ymin || gt.cy() > patch.ymax)
                continue;
            Box b = gt;
            b.xmin = std::clamp((gt.xmin - patch.xmin) / patch.width(), 0.0, 1.0);
            b.xmax = std::clamp((gt.xmax - patch.xmin) / patch.width(), 0.0, 1.0);
            b.ymin = std::clamp((gt.ymin - patch.ymin) / patch.height(), 0.0, 1.0);
            b.ymax = std::clamp((gt.ymax - patch.ymin) / patch.height(), 0.0, 1.0);
            if (b.valid()) kept.push_back(b);
        }
        if (kept.empty()) continue;

        Tensor cropped({s.image.dim(0), ch, cw});
        for (std::size_t c = 0; c < s.image.dim(0); ++c)
            for (std::size_t y = 0; y < ch; ++y)
                for (std::size_t x = 0; x < cw; ++x) cropped.at(c, y, x) = s.image.at(c, cy + y, cx + x);
        out.image = bilinearUpsample(cropped, h, w);
        out.boxes = std::move(kept);
        return true;
    }
    return false;
}

} // namespace

TensorSample augmentSample(const TensorSample& sample, Rng& rng) {
    // one sampler option per step, as in SSD: keep the original or crop at a
    // sampled minimum-IoU constraint
    static constexpr double kMinIous[] = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
    TensorSample current = sample;
    const int option = rng.uniformInt(0, 6);
    if (option > 0 && !sample.boxes.empty()) {
        TensorSample cropped;
        if (cropSample(sample, kMinIous[option - 1], rng, cropped)) current = std::move(cropped);
    }
    if (rng.bernoulli(0.5)) current = flipHorizontal(current);
    return current;
}

TrainResult trainLoop(const PyramidConfig& config, const std::vector<Sample>& data, int epochs,
                      const std::vector<std::pair<int, double>>& schedule, std::uint64_t seed,
                      const TrainOptions& options, const std::function<void(int, double)>& epochCallback) {
    validateConfig(config);
    if (data.empty()) throw std::invalid_argument("trainLoop: empty dataset");
    if (epochs < 0) throw std::invalid_argument("trainLoop: negative epoch count");
    if (options.batchSize < 1) throw std::invalid_argument("trainLoop: batch size must be >= 1");

    TrainResult result;
    result.params = initParams(config, seed);
    OptimizerState opt = makeOptimizer(result.params, options.learningRate, options.momentum,
                                       options.weightDecay, schedule);

    std::vector<TensorSample> samples;
    samples.reserve(data.size());
    for (const Sample& s : data) samples.push_back({imageToTensor(s.image), s.boxes});

    const std::vector<Box> anchors = generateAnchors(config.anchorSpec());

    for (int epoch = 0; epoch < epochs; ++epoch) {
        applySchedule(opt, epoch);

        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffleRng(deriveSeed(seed, stream::kShuffle, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffleRng.uniformInt(0, static_cast<int>(i) - 1))]);

        double epochLoss = 0.0;
        std::size_t step = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(options.batchSize)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(options.batchSize));
            const double invBatch = 1.0 / static_cast<double>(end - begin);

            std::vector<Tensor> images;
            std::vector<std::vector<Box>> boxes;
            images.reserve(end - begin);
            boxes.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i, ++step) {
                const TensorSample* sample = &samples[order[i]];
                TensorSample augmented;
                if (options.augment) {
                    Rng augRng(deriveSeed(seed, stream::kAugment, static_cast<std::uint64_t>(epoch), step));
                    augmented = augmentSample(*sample, augRng);
                    sample = &augmented;
                }
                images.push_back(sample->image);
                boxes.push_back(sample->boxes);
            }

            // batch-norm statistics pool over the mini-batch; everything else
            // runs per image
            BatchCache cache;
            const std::vector<ForwardResult> outputs = detectorForwardBatch(images, result.params, config, cache);
            std::vector<Tensor> gradLoc, gradConf;
            gradLoc.reserve(outputs.size());
            gradConf.reserve(outputs.size());
            for (std::size_t e = 0; e < outputs.size(); ++e) {
                const MatchResult matches = matchAnchors(anchors, boxes[e]);
                MultiboxLossResult loss = multiboxLoss(outputs[e].locRows(), outputs[e].confRows(), matches);
                epochLoss += loss.loss;
                gradLoc.push_back(scale(loss.gradLoc, invBatch));
                gradConf.push_back(scale(loss.gradConf, invBatch));
            }

            const ModelParams grads = detectorBackwardBatch(result.params, config, cache, gradLoc, gradConf);
            sgdStep(result.params, grads, opt);
            applyBatchStats(result.params, cache);
        }

        epochLoss /= static_cast<double>(samples.size());
        if (!std::isfinite(epochLoss))
            throw std::runtime_error("trainLoop: loss diverged at epoch " + std::to_string(epoch));
        result.epochLoss.push_back(epochLoss);
        if (epochCallback) epochCallback(epoch, epochLoss);
    }
    return result;
}

} // namespace assd
