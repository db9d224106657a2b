#pragma once

#include <map>
#include <vector>

#include "assd/boxes.hpp"
#include "assd/config.hpp"
#include "assd/dataset.hpp"
#include "assd/detector.hpp"

namespace assd {

struct EvalResult {
    std::map<int, double> apPerClass; // classes with at least one ground truth
    double meanAp = 0.0;
};

// VOC-style evaluation: detections of each class are ranked globally by
// score, greedily matched to unused truths at the IoU threshold, and AP is
// the area under the monotone (all-point interpolated) precision-recall
// envelope. mAP averages classes that have ground truth.
EvalResult evaluateMAP(const std::vector<std::vector<Detection>>& detections,
                       const std::vector<std::vector<Box>>& truths, double iouThreshold = 0.5);

// Runs detect() over the samples and evaluates.
EvalResult evaluateModel(const ModelParams& params, const PyramidConfig& config,
                         const std::vector<Sample>& samples, double iouThreshold = 0.5);

} // namespace assd
