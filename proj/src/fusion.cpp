#include "assd/fusion.hpp"

#include <stdexcept>

#include "assd/layers.hpp"

namespace assd {

namespace {

std::size_t totalChannels(const std::vector<Tensor>& inputs) {
    std::size_t c = 0;
    for (const Tensor& t : inputs) {
        if (t.rank() != 3)
            throw std::invalid_argument("fuse: expected [C,H,W] inputs, got " + t.shapeStr());
        c += t.dim(0);
    }
    return c;
}

} // namespace

Tensor fuse(const std::vector<Tensor>& inputs, const FusionParams& p, FusionCache* cache) {
    if (inputs.empty()) throw std::invalid_argument("fuse: no inputs");
    const std::size_t ct = totalChannels(inputs);
    if (p.weight.rank() != 2 || p.weight.dim(1) != ct)
        throw std::invalid_argument("fuse: weight " + p.weight.shapeStr() + " does not accept " +
                                    std::to_string(ct) + " concatenated channels");
    if (p.bias.size() != p.weight.dim(0))
        throw std::invalid_argument("fuse: bias size " + std::to_string(p.bias.size()) +
                                    " != output channels " + std::to_string(p.weight.dim(0)));

    const std::size_t h = inputs[0].dim(1), w = inputs[0].dim(2), n = h * w;
    Tensor concat({ct, n});
    std::vector<Tensor> ups;
    std::size_t row = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor* src = &inputs[i];
        Tensor up;
        if (i > 0 && (src->dim(1) != h || src->dim(2) != w)) {
            up = bilinearUpsample(*src, h, w);
            src = &up;
        }
        if (src->dim(1) != h || src->dim(2) != w)
            throw std::invalid_argument("fuse: input " + std::to_string(i) + " spatially larger than target");
        std::copy(src->data(), src->data() + src->size(), concat.data() + row * n);
        row += src->dim(0);
        if (i > 0) ups.push_back(std::move(up)); // empty tensor when already at size
    }

    Tensor out = matmul(p.weight, concat); // [Cout, N]
    for (std::size_t o = 0; o < out.dim(0); ++o) {
        double* orow = out.data() + o * n;
        const double b = p.bias[o];
        for (std::size_t j = 0; j < n; ++j) orow[j] += b;
    }
    if (cache) {
        cache->upsampled = std::move(ups);
        cache->concat = std::move(concat);
    }
    return reshape(out, {p.weight.dim(0), h, w});
}

Tensor fuse(const Tensor& x3, const Tensor& x4, const Tensor& x5, const FusionParams& p) {
    return fuse(std::vector<Tensor>{x3, x4, x5}, p);
}

FusionGrads fuseBackward(const std::vector<Tensor>& inputs, const FusionParams& p,
                         const FusionCache& cache, const Tensor& gradOut) {
    const std::size_t h = inputs[0].dim(1), w = inputs[0].dim(2), n = h * w;
    if (gradOut.rank() != 3 || gradOut.dim(0) != p.weight.dim(0) || gradOut.dim(1) != h || gradOut.dim(2) != w)
        throw std::invalid_argument("fuseBackward: gradOut shape " + gradOut.shapeStr() + " does not match output");

    const Tensor g = reshape(gradOut, {p.weight.dim(0), n});
    FusionGrads grads;
    grads.weight = matmul(g, transpose(cache.concat));
    grads.bias = Tensor({p.bias.size()});
    for (std::size_t o = 0; o < g.dim(0); ++o) {
        const double* grow = g.data() + o * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += grow[j];
        grads.bias[o] = acc;
    }

    const Tensor dConcat = matmul(transpose(p.weight), g); // [Ctotal, N]
    std::size_t row = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t c = inputs[i].dim(0);
        Tensor slice({c, h, w});
        std::copy(dConcat.data() + row * n, dConcat.data() + (row + c) * n, slice.data());
        row += c;
        const bool wasUpsampled = i > 0 && (inputs[i].dim(1) != h || inputs[i].dim(2) != w);
        if (wasUpsampled)
            grads.inputs.push_back(bilinearUpsampleBackward(inputs[i].shape(), slice));
        else
            grads.inputs.push_back(std::move(slice));
    }
    return grads;
}

} // namespace assd
