#include "assd/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace assd {

std::size_t anchorsPerCell(const AnchorLayerSpec& layer) {
    return layer.aspectRatios.size() + (layer.includeExtraUnitBox ? 1 : 0);
}

namespace {

void validateLayer(const AnchorLayerSpec& layer) {
    if (layer.gridH < 1 || layer.gridW < 1)
        throw std::invalid_argument("generateAnchors: degenerate grid " + std::to_string(layer.gridH) + "x" +
                                    std::to_string(layer.gridW));
    if (!(layer.sMin > 0.0 && layer.sMin < layer.sMax && layer.sMax <= 1.0))
        throw std::invalid_argument("generateAnchors: scales must satisfy 0 < sMin < sMax <= 1, got sMin=" +
                                    std::to_string(layer.sMin) + " sMax=" + std::to_string(layer.sMax));
    for (double ar : layer.aspectRatios)
        if (!(ar > 0.0)) throw std::invalid_argument("generateAnchors: aspect ratios must be positive");
}

Box centeredBox(double cx, double cy, double w, double h, bool clip) {
    Box b;
    b.xmin = cx - 0.5 * w;
    b.ymin = cy - 0.5 * h;
    b.xmax = cx + 0.5 * w;
    b.ymax = cy + 0.5 * h;
    if (clip) {
        b.xmin = std::clamp(b.xmin, 0.0, 1.0);
        b.ymin = std::clamp(b.ymin, 0.0, 1.0);
        b.xmax = std::clamp(b.xmax, 0.0, 1.0);
        b.ymax = std::clamp(b.ymax, 0.0, 1.0);
    }
    return b;
}

} // namespace

std::vector<Box> generateLayerAnchors(const AnchorLayerSpec& layer, bool clip) {
    validateLayer(layer);
    std::vector<Box> anchors;
    anchors.reserve(static_cast<std::size_t>(layer.gridH) * layer.gridW * anchorsPerCell(layer));
    const double extraScale = std::sqrt(layer.sMin * layer.sMax);
    for (int j = 0; j < layer.gridH; ++j) {
        const double cy = (j + 0.5) / layer.gridH;
        for (int i = 0; i < layer.gridW; ++i) {
            const double cx = (i + 0.5) / layer.gridW;
            for (double ar : layer.aspectRatios) {
                const double root = std::sqrt(ar);
                anchors.push_back(centeredBox(cx, cy, layer.sMin * root, layer.sMin / root, clip));
            }
            if (layer.includeExtraUnitBox)
                anchors.push_back(centeredBox(cx, cy, extraScale, extraScale, clip));
        }
    }
    return anchors;
}

std::vector<Box> generateAnchors(const AnchorSpec& spec, bool clip) {
    std::vector<Box> anchors;
    for (const AnchorLayerSpec& layer : spec) {
        std::vector<Box> layerAnchors = generateLayerAnchors(layer, clip);
        anchors.insert(anchors.end(), layerAnchors.begin(), layerAnchors.end());
    }
    return anchors;
}

double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    const double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encodeBox(const Box& gt, const Box& anchor) {
    if (!gt.valid() || !anchor.valid())
        throw std::invalid_argument("encodeBox: boxes must have positive width and height");
    return {
        (gt.cx() - anchor.cx()) / (anchor.width() * kCenterVariance),
        (gt.cy() - anchor.cy()) / (anchor.height() * kCenterVariance),
        std::log(gt.width() / anchor.width()) / kSizeVariance,
        std::log(gt.height() / anchor.height()) / kSizeVariance,
    };
}

Box decodeBox(const std::array<double, 4>& offsets, const Box& anchor) {
    if (!anchor.valid())
        throw std::invalid_argument("decodeBox: anchor must have positive width and height");
    const double cx = offsets[0] * kCenterVariance * anchor.width() + anchor.cx();
    const double cy = offsets[1] * kCenterVariance * anchor.height() + anchor.cy();
    const double w = anchor.width() * std::exp(offsets[2] * kSizeVariance);
    const double h = anchor.height() * std::exp(offsets[3] * kSizeVariance);
    Box b;
    b.xmin = cx - 0.5 * w;
    b.ymin = cy - 0.5 * h;
    b.xmax = cx + 0.5 * w;
    b.ymax = cy + 0.5 * h;
    return b;
}

std::size_t MatchResult::positiveCount() const {
    return static_cast<std::size_t>(
        std::count_if(matchedTruth.begin(), matchedTruth.end(), [](int t) { return t != kNegative; }));
}

MatchResult matchAnchors(const std::vector<Box>& anchors, const std::vector<Box>& truths,
                         double iouThreshold) {
    if (anchors.empty()) throw std::invalid_argument("matchAnchors: empty anchor list");

    const std::size_t na = anchors.size(), nt = truths.size();
    std::vector<double> overlap(na * nt);
    for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t a = 0; a < na; ++a) overlap[t * na + a] = iou(truths[t], anchors[a]);

    MatchResult result;
    result.matchedTruth.assign(na, kNegative);
    result.locTargets.assign(na, {0.0, 0.0, 0.0, 0.0});
    result.classTargets.assign(na, 0);

    // Stage 1: greedy bipartite assignment so every truth keeps one anchor.
    std::vector<bool> truthDone(nt, false), anchorClaimed(na, false);
    const std::size_t rounds = std::min(na, nt);
    for (std::size_t r = 0; r < rounds; ++r) {
        double best = -1.0;
        std::size_t bestT = 0, bestA = 0;
        for (std::size_t t = 0; t < nt; ++t) {
            if (truthDone[t]) continue;
            for (std::size_t a = 0; a < na; ++a) {
                if (anchorClaimed[a]) continue;
                if (overlap[t * na + a] > best) {
                    best = overlap[t * na + a];
                    bestT = t;
                    bestA = a;
                }
            }
        }
        truthDone[bestT] = true;
        anchorClaimed[bestA] = true;
        result.matchedTruth[bestA] = static_cast<int>(bestT);
    }

    // Stage 2: remaining anchors take their best truth above the threshold.
    for (std::size_t a = 0; a < na; ++a) {
        if (anchorClaimed[a] || nt == 0) continue;
        double best = -1.0;
        std::size_t bestT = 0;
        for (std::size_t t = 0; t < nt; ++t) {
            if (overlap[t * na + a] > best) {
                best = overlap[t * na + a];
                bestT = t;
            }
        }
        if (best >= iouThreshold) result.matchedTruth[a] = static_cast<int>(bestT);
    }

    for (std::size_t a = 0; a < na; ++a) {
        const int t = result.matchedTruth[a];
        if (t == kNegative) continue;
        result.locTargets[a] = encodeBox(truths[static_cast<std::size_t>(t)], anchors[a]);
        result.classTargets[a] = truths[static_cast<std::size_t>(t)].classId;
    }
    return result;
}

std::vector<std::size_t> hardNegativeMine(const std::vector<double>& confLosses,
                                          const MatchResult& matches, double ratio) {
    if (ratio <= 0.0) throw std::invalid_argument("hardNegativeMine: ratio must be positive");
    if (confLosses.size() != matches.matchedTruth.size())
        throw std::invalid_argument("hardNegativeMine: loss count does not match anchor count");

    std::vector<std::size_t> negatives;
    for (std::size_t a = 0; a < confLosses.size(); ++a)
        if (matches.matchedTruth[a] == kNegative) negatives.push_back(a);

    const std::size_t positives = matches.positiveCount();
    const std::size_t want = std::min(negatives.size(),
                                      static_cast<std::size_t>(ratio * static_cast<double>(positives)));
    std::sort(negatives.begin(), negatives.end(), [&](std::size_t a, std::size_t b) {
        if (confLosses[a] != confLosses[b]) return confLosses[a] > confLosses[b];
        return a < b;
    });
    negatives.resize(want);
    std::sort(negatives.begin(), negatives.end());
    return negatives;
}

std::vector<Box> nms(const std::vector<Box>& dets, double iouThreshold) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });

    std::vector<Box> kept;
    std::vector<bool> suppressed(dets.size(), false);
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const std::size_t i = order[oi];
        if (suppressed[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const std::size_t j = order[oj];
            if (!suppressed[j] && iou(dets[i], dets[j]) > iouThreshold) suppressed[j] = true;
        }
    }
    return kept;
}

} // namespace assd
