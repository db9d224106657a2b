#pragma once

#include <vector>

#include "assd/tensor.hpp"

namespace assd {

// Learned 1x1 projection applied to the channel concatenation of the
// shallowest scale with the upsampled deeper scales. Affine only: no
// normalization or nonlinearity follows.
struct FusionParams {
    Tensor weight; // [Cout, Ctotal]
    Tensor bias;   // [Cout]
};

struct FusionCache {
    std::vector<Tensor> upsampled; // deeper inputs at the target size
    Tensor concat;                 // [Ctotal, N]
};

// inputs[0] sets the spatial size; deeper inputs are bilinearly upsampled to
// it, concatenated in order, and projected. Output shape equals inputs[0]'s.
Tensor fuse(const std::vector<Tensor>& inputs, const FusionParams& p, FusionCache* cache = nullptr);
Tensor fuse(const Tensor& x3, const Tensor& x4, const Tensor& x5, const FusionParams& p);

struct FusionGrads {
    std::vector<Tensor> inputs;
    Tensor weight;
    Tensor bias;
};

FusionGrads fuseBackward(const std::vector<Tensor>& inputs, const FusionParams& p,
                         const FusionCache& cache, const Tensor& gradOut);

} // namespace assd
