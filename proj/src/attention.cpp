#include "assd/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace assd {

namespace {

Tensor xavierMatrix(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor t({rows, cols});
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

// Flattens [C,H,W] to [C,N] after validating against the params and the
// capacity bound.
Tensor flattenChecked(const Tensor& x, const AttentionParams& p) {
    if (x.rank() != 3)
        throw std::invalid_argument("attention: expected [C,H,W] input, got " + x.shapeStr());
    const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
    if (p.wv.rank() != 2 || p.wv.dim(0) != c)
        throw std::invalid_argument("attention: input has " + std::to_string(c) +
                                    " channels, params expect " + std::to_string(p.wv.dim(0)));
    if (n > kMaxAttentionLocations)
        throw std::invalid_argument("attention: " + std::to_string(n) + " locations exceed the capacity bound of " +
                                    std::to_string(kMaxAttentionLocations));
    return reshape(x, {c, n});
}

} // namespace

AttentionParams initAttentionParams(std::size_t channels, Rng& rng) {
    const std::size_t reduced = AttentionParams::reducedChannels(channels);
    AttentionParams p;
    p.wq = xavierMatrix(channels, reduced, rng);
    p.wk = xavierMatrix(channels, reduced, rng);
    p.wv = xavierMatrix(channels, channels, rng);
    return p;
}

AttentionMap attentionScores(const Tensor& x, const AttentionParams& p, std::size_t scaleIndex) {
    const Tensor xf = flattenChecked(x, p);
    const Tensor q = matmul(transpose(p.wq), xf);
    const Tensor k = matmul(transpose(p.wk), xf);
    AttentionMap map;
    map.scores = softmaxRows(matmul(transpose(q), k));
    map.scaleIndex = scaleIndex;
    return map;
}

Tensor attentionForward(const Tensor& x, const AttentionParams& p, AttentionCache* cache) {
    const Tensor xf = flattenChecked(x, p);
    Tensor q = matmul(transpose(p.wq), xf);
    Tensor k = matmul(transpose(p.wk), xf);
    Tensor v = matmul(transpose(p.wv), xf);
    Tensor weights = softmaxRows(matmul(transpose(q), k)); // [N,N]

    // out[c][i] = x[c][i] + sum_j weights[i][j] * v[c][j]
    Tensor out = add(xf, matmul(v, transpose(weights)));
    if (cache) {
        cache->xFlat = std::move(xf);
        cache->query = std::move(q);
        cache->key = std::move(k);
        cache->value = std::move(v);
        cache->weights = std::move(weights);
    }
    return reshape(out, x.shape());
}

AttentionGrads attentionBackward(const AttentionParams& p, const AttentionCache& cache,
                                 const Tensor& gradOut) {
    const Tensor& xf = cache.xFlat;
    if (gradOut.size() != xf.size())
        throw std::invalid_argument("attentionBackward: gradOut shape " + gradOut.shapeStr() +
                                    " does not match input of " + std::to_string(xf.size()) + " elements");
    const Tensor g = reshape(gradOut, xf.shape()); // [C,N]

    // out = x + v A^T with A the row-normalized scores:
    //   dA   = g^T v
    //   dv   = g A
    //   da   = rowwise softmax backward of dA
    //   dq   = k da^T,  dk = q da
    //   dx   = g + Wq dq + Wk dk + Wv dv
    //   dWq  = x dq^T,  dWk = x dk^T,  dWv = x dv^T
    const Tensor dA = matmul(transpose(g), cache.value); // [N,N]
    const Tensor dv = matmul(g, cache.weights);          // [C,N]

    const std::size_t n = cache.weights.dim(0);
    Tensor da({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        const double* wrow = cache.weights.data() + i * n;
        const double* drow = dA.data() + i * n;
        double inner = 0.0;
        for (std::size_t j = 0; j < n; ++j) inner += wrow[j] * drow[j];
        double* orow = da.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = wrow[j] * (drow[j] - inner);
    }

    const Tensor dq = matmul(cache.key, transpose(da));   // [C',N]
    const Tensor dk = matmul(cache.query, da);            // [C',N]

    AttentionGrads grads;
    grads.wq = matmul(xf, transpose(dq));
    grads.wk = matmul(xf, transpose(dk));
    grads.wv = matmul(xf, transpose(dv));
    Tensor dx = g;
    accumulate(dx, matmul(p.wq, dq));
    accumulate(dx, matmul(p.wk, dk));
    accumulate(dx, matmul(p.wv, dv));
    grads.input = reshape(dx, gradOut.shape());
    return grads;
}

AttentionGrads attentionBackward(const Tensor& x, const AttentionParams& p, const Tensor& gradOut) {
    if (!x.sameShape(gradOut))
        throw std::invalid_argument("attentionBackward: gradOut shape " + gradOut.shapeStr() +
                                    " does not match input " + x.shapeStr());
    AttentionCache cache;
    attentionForward(x, p, &cache);
    return attentionBackward(p, cache, gradOut);
}

Tensor extractQueryRow(const AttentionMap& map, std::size_t location, std::size_t gridH,
                       std::size_t gridW) {
    const std::size_t n = map.scores.dim(0);
    if (gridH * gridW != n)
        throw std::invalid_argument("extractQueryRow: grid " + std::to_string(gridH) + "x" + std::to_string(gridW) +
                                    " does not cover " + std::to_string(n) + " locations");
    if (location >= n)
        throw std::out_of_range("extractQueryRow: location " + std::to_string(location) + " out of range [0," +
                                std::to_string(n) + ")");
    Tensor row({gridH, gridW});
    const double* src = map.scores.data() + location * n;
    std::copy(src, src + n, row.data());
    return row;
}

} // namespace assd
