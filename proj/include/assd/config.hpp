#pragma once

#include <string>
#include <vector>

#include "assd/boxes.hpp"

namespace assd {

struct ScaleSpec {
    int channels = 0;
    int grid = 0; // square feature grid
    std::vector<double> aspectRatios;
    double sMin = 0.0;
    double sMax = 0.0;
    bool extraUnitBox = true;
};

// Describes the whole detector: input size, detection scales (shallowest
// first, strictly decreasing grids) and which of the two add-on modules are
// active. The backbone is derived from it: a chain of stride-2
// conv-BN-ReLU blocks that halves the resolution until each scale's grid is
// reached, emitting that scale's channel count.
struct PyramidConfig {
    int imageSize = 64;
    int numClasses = 3; // foreground classes; background is class 0
    bool useAttention = true;
    bool useFusion = true;
    std::vector<ScaleSpec> scales;

    std::size_t scaleCount() const { return scales.size(); }
    AnchorSpec anchorSpec() const;
    std::size_t boxesPerCell(std::size_t scale) const;
    std::size_t anchorsAtScale(std::size_t scale) const;
    std::size_t totalAnchors() const;
    // number of shallow scales fusion consumes (the paper's three, capped by S)
    std::size_t fusionInputCount() const { return scales.size() < 3 ? scales.size() : 3; }

    static PyramidConfig toyDefault();
};

// Checks grid monotonicity, power-of-two reachability from the input size,
// the attention capacity bound and anchor scale sanity. Throws on violation.
void validateConfig(const PyramidConfig& config);

std::string configToJson(const PyramidConfig& config);
PyramidConfig configFromJson(const std::string& text);
PyramidConfig loadConfigFile(const std::string& path);

} // namespace assd
