#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace assd {

struct GradCheckCase {
    std::string name;
    double maxRel = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Central-finite-difference verification of every hand-written backward:
// conv2d, batch norm, bilinear upsample, attention, fusion, the multibox
// loss, and the full tiny model end to end. Layer tolerance 1e-4, full-model
// tolerance 1e-3, h = 1e-5, double precision.
std::vector<GradCheckCase> runGradChecks(std::uint64_t seed);

bool allPass(const std::vector<GradCheckCase>& cases);

} // namespace assd
