#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "assd/boxes.hpp"
#include "assd/image.hpp"

namespace assd {

inline constexpr int kClassSquare = 1;
inline constexpr int kClassDisc = 2;
inline constexpr int kClassTriangle = 3;
inline constexpr int kNumShapeClasses = 3;

struct SynthSpec {
    int imageSize = 64;
    int minShapes = 1;
    int maxShapes = 3;
    double minSizeFrac = 0.10; // shape extent relative to the image side
    double maxSizeFrac = 0.40;
};

struct Sample {
    ImageU8 image;
    std::vector<Box> boxes; // classId set, normalized coordinates
};

// Deterministic given the seed: noisy background, 1..3 colored shapes
// (square/disc/triangle) per image with tight ground-truth boxes computed
// from the painted pixels.
std::vector<Sample> synthesizeDataset(std::size_t count, std::uint64_t seed,
                                      const SynthSpec& spec = {});

// dir/images/img_00000.ppm ... plus dir/manifest.json
void writeDataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> loadDataset(const std::string& manifestPath);

std::string manifestToJson(const std::vector<Sample>& samples,
                           const std::vector<std::string>& imagePaths);

} // namespace assd
