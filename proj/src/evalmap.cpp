#include "assd/evalmap.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace assd {

EvalResult evaluateMAP(const std::vector<std::vector<Detection>>& detections,
                       const std::vector<std::vector<Box>>& truths, double iouThreshold) {
    if (detections.size() != truths.size())
        throw std::invalid_argument("evaluateMAP: detection and truth image counts differ");

    std::set<int> classes;
    for (const auto& image : truths)
        for (const Box& t : image) classes.insert(t.classId);

    EvalResult result;
    for (int cls : classes) {
        std::size_t totalTruths = 0;
        for (const auto& image : truths)
            totalTruths += static_cast<std::size_t>(
                std::count_if(image.begin(), image.end(), [&](const Box& t) { return t.classId == cls; }));

        struct Ranked {
            double score;
            std::size_t image;
            std::size_t index;
        };
        std::vector<Ranked> ranked;
        for (std::size_t img = 0; img < detections.size(); ++img)
            for (std::size_t d = 0; d < detections[img].size(); ++d)
                if (detections[img][d].classId == cls) ranked.push_back({detections[img][d].score, img, d});
        std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.image != b.image) return a.image < b.image;
            return a.index < b.index;
        });

        std::vector<std::vector<bool>> used(truths.size());
        for (std::size_t img = 0; img < truths.size(); ++img) used[img].assign(truths[img].size(), false);

        std::vector<double> precision, recall;
        std::size_t tp = 0, fp = 0;
        for (const Ranked& r : ranked) {
            const Detection& det = detections[r.image][r.index];
            double bestIou = 0.0;
            std::size_t bestT = 0;
            bool found = false;
            for (std::size_t t = 0; t < truths[r.image].size(); ++t) {
                const Box& gt = truths[r.image][t];
                if (gt.classId != cls || used[r.image][t]) continue;
                const double ov = iou(det, gt);
                if (ov > bestIou) {
                    bestIou = ov;
                    bestT = t;
                    found = true;
                }
            }
            if (found && bestIou >= iouThreshold) {
                used[r.image][bestT] = true;
                ++tp;
            } else {
                ++fp;
            }
            precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
            recall.push_back(totalTruths > 0 ? static_cast<double>(tp) / static_cast<double>(totalTruths) : 0.0);
        }

        // all-point interpolation: area under the monotone precision envelope
        double ap = 0.0;
        double runningMax = 0.0;
        for (std::size_t i = precision.size(); i-- > 0;) {
            runningMax = std::max(runningMax, precision[i]);
            const double r0 = i > 0 ? recall[i - 1] : 0.0;
            ap += (recall[i] - r0) * runningMax;
        }
        result.apPerClass[cls] = ap;
    }

    if (!result.apPerClass.empty()) {
        double total = 0.0;
        for (const auto& [cls, ap] : result.apPerClass) total += ap;
        result.meanAp = total / static_cast<double>(result.apPerClass.size());
    }
    return result;
}

EvalResult evaluateModel(const ModelParams& params, const PyramidConfig& config,
                         const std::vector<Sample>& samples, double iouThreshold) {
    std::vector<std::vector<Detection>> detections;
    std::vector<std::vector<Box>> truths;
    detections.reserve(samples.size());
    truths.reserve(samples.size());
    for (const Sample& s : samples) {
        detections.push_back(detect(imageToTensor(s.image), params, config));
        truths.push_back(s.boxes);
    }
    return evaluateMAP(detections, truths, iouThreshold);
}

} // namespace assd
