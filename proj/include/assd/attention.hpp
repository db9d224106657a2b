#pragma once

#include "assd/rng.hpp"
#include "assd/tensor.hpp"

namespace assd {

// Largest spatial extent (H*W) the dense N x N score matrix is allowed to
// reach. Desk-scale bound: a 64x64 map would need a 16.7M-entry matrix.
inline constexpr std::size_t kMaxAttentionLocations = 4096;

// Query/key/value projections for one pyramid scale. Query and key project
// into a reduced space of max(1, C/8) channels; value keeps full width so the
// weighted features can be added back onto the input.
struct AttentionParams {
    Tensor wq; // [C, C']
    Tensor wk; // [C, C']
    Tensor wv; // [C, C]

    static std::size_t reducedChannels(std::size_t channels) {
        return channels / 8 > 0 ? channels / 8 : 1;
    }
    std::size_t channels() const { return wv.dim(0); }
};

AttentionParams initAttentionParams(std::size_t channels, Rng& rng);

// Row-stochastic N x N pixel-relation matrix for one scale.
struct AttentionMap {
    Tensor scores; // [N, N], each row sums to 1
    std::size_t scaleIndex = 0;
};

struct AttentionCache {
    Tensor xFlat;   // [C, N]
    Tensor query;   // [C', N]
    Tensor key;     // [C', N]
    Tensor value;   // [C, N]
    Tensor weights; // [N, N] row-normalized scores
};

// Row-normalized score matrix: softmaxRows(q(x)^T k(x)).
AttentionMap attentionScores(const Tensor& x, const AttentionParams& p, std::size_t scaleIndex = 0);

// Residual update: out = x + attention-weighted value features. Output shape
// equals input shape; zeroing wv makes this the identity.
Tensor attentionForward(const Tensor& x, const AttentionParams& p, AttentionCache* cache = nullptr);

struct AttentionGrads {
    Tensor input;
    Tensor wq;
    Tensor wk;
    Tensor wv;
};

AttentionGrads attentionBackward(const AttentionParams& p, const AttentionCache& cache,
                                 const Tensor& gradOut);
// Convenience overload that recomputes the forward pass.
AttentionGrads attentionBackward(const Tensor& x, const AttentionParams& p, const Tensor& gradOut);

// Row for one query location, reshaped to the scale's grid for visualization.
Tensor extractQueryRow(const AttentionMap& map, std::size_t location, std::size_t gridH,
                       std::size_t gridW);

} // namespace assd
