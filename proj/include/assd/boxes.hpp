#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace assd {

// Axis-aligned box in normalized [0,1] coordinates. classId 0 is background,
// 1..K are object classes, -1 means unset. score is meaningful on detections.
struct Box {
    double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;
    int classId = -1;
    double score = 0.0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double cx() const { return 0.5 * (xmin + xmax); }
    double cy() const { return 0.5 * (ymin + ymax); }
    double area() const { return width() * height(); }
    bool valid() const { return xmin < xmax && ymin < ymax; }
};

using Detection = Box;

struct AnchorLayerSpec {
    int gridH = 0;
    int gridW = 0;
    std::vector<double> aspectRatios; // one box per ratio at s = sMin
    double sMin = 0.0;
    double sMax = 0.0;
    // SSD convention: an extra ratio-1 box at s = sqrt(sMin*sMax)
    bool includeExtraUnitBox = true;
};
using AnchorSpec = std::vector<AnchorLayerSpec>;

std::size_t anchorsPerCell(const AnchorLayerSpec& layer);

// Anchors centered at ((i+0.5)/gridW, (j+0.5)/gridH), sized w = s*sqrt(ar),
// h = s/sqrt(ar). Cell-major order (rows, then columns), listed ratios first,
// extra unit box last. clip=false keeps the raw extents so the w*h = s^2 and
// w/h = ar identities can be checked.
std::vector<Box> generateLayerAnchors(const AnchorLayerSpec& layer, bool clip = true);
std::vector<Box> generateAnchors(const AnchorSpec& spec, bool clip = true);

double iou(const Box& a, const Box& b);

// SSD center-offset / log-size encoding with variances 0.1 (centers) and
// 0.2 (sizes); decodeBox inverts exactly.
inline constexpr double kCenterVariance = 0.1;
inline constexpr double kSizeVariance = 0.2;
std::array<double, 4> encodeBox(const Box& gt, const Box& anchor);
Box decodeBox(const std::array<double, 4>& offsets, const Box& anchor);

inline constexpr int kNegative = -1;

struct MatchResult {
    std::vector<int> matchedTruth;                 // per anchor; kNegative if none
    std::vector<std::array<double, 4>> locTargets; // per anchor; zeros for negatives
    std::vector<int> classTargets;                 // per anchor; 0 for background
    std::size_t positiveCount() const;
};

// Two stages: first every truth claims a distinct best-IoU anchor (greedy
// over the remaining pairs, so each truth keeps >=1 anchor regardless of
// threshold), then unclaimed anchors take their best truth if it clears the
// threshold.
MatchResult matchAnchors(const std::vector<Box>& anchors, const std::vector<Box>& truths,
                         double iouThreshold = 0.5);

// Picks the min(ratio * positives, negatives) negative anchors with the
// largest confidence losses; ties broken toward the lower index. Returned
// indices are ascending.
std::vector<std::size_t> hardNegativeMine(const std::vector<double>& confLosses,
                                          const MatchResult& matches, double ratio = 3.0);

// Greedy NMS: keep the highest-scoring box, drop boxes overlapping it beyond
// the threshold, repeat. Output is score-descending, ties by lower input index.
std::vector<Box> nms(const std::vector<Box>& dets, double iouThreshold = 0.45);

} // namespace assd
