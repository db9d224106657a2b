#include "assd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace assd {

namespace {

void require3d(const Tensor& x, const char* op) {
    if (x.rank() != 3)
        throw std::invalid_argument(std::string(op) + ": expected [C,H,W] tensor, got " + x.shapeStr());
}

struct ConvDims {
    std::size_t inC, inH, inW, outC, kh, kw, outH, outW;
    int stride, pad;
};

ConvDims convDims(const Tensor& x, const ConvParams& p) {
    require3d(x, "conv2d");
    if (p.weight.rank() != 4)
        throw std::invalid_argument("conv2d: weight must be [outC,inC,kh,kw], got " + p.weight.shapeStr());
    ConvDims d;
    d.inC = x.dim(0);
    d.inH = x.dim(1);
    d.inW = x.dim(2);
    d.outC = p.outChannels();
    d.kh = p.kernelH();
    d.kw = p.kernelW();
    d.stride = p.stride;
    d.pad = p.padding;
    if ((d.kh != 1 && d.kh != 3) || (d.kw != 1 && d.kw != 3))
        throw std::invalid_argument("conv2d: only 1x1 and 3x3 kernels are supported, got " +
                                    std::to_string(d.kh) + "x" + std::to_string(d.kw));
    if (p.inChannels() != d.inC)
        throw std::invalid_argument("conv2d: input has " + std::to_string(d.inC) + " channels, weight expects " +
                                    std::to_string(p.inChannels()));
    if (p.bias.size() != d.outC)
        throw std::invalid_argument("conv2d: bias size " + std::to_string(p.bias.size()) + " != outC " +
                                    std::to_string(d.outC));
    if (p.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (p.padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const long long oh = (static_cast<long long>(d.inH) + 2 * d.pad - static_cast<long long>(d.kh)) / d.stride + 1;
    const long long ow = (static_cast<long long>(d.inW) + 2 * d.pad - static_cast<long long>(d.kw)) / d.stride + 1;
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("conv2d: output size " + std::to_string(oh) + "x" + std::to_string(ow) +
                                    " degenerate for input " + x.shapeStr());
    d.outH = static_cast<std::size_t>(oh);
    d.outW = static_cast<std::size_t>(ow);
    return d;
}

} // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    const ConvDims d = convDims(x, p);
    Tensor out({d.outC, d.outH, d.outW});
    const double* xd = x.data();
    const double* wd = p.weight.data();
    double* od = out.data();

    for (std::size_t o = 0; o < d.outC; ++o) {
        const double b = p.bias[o];
        double* oplane = od + o * d.outH * d.outW;
        std::fill(oplane, oplane + d.outH * d.outW, b);
        for (std::size_t c = 0; c < d.inC; ++c) {
            const double* xplane = xd + c * d.inH * d.inW;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    const double w = wd[((o * d.inC + c) * d.kh + ky) * d.kw + kx];
                    if (w == 0.0) continue;
                    for (std::size_t oy = 0; oy < d.outH; ++oy) {
                        const long long iy = static_cast<long long>(oy) * d.stride - d.pad + static_cast<long long>(ky);
                        if (iy < 0 || iy >= static_cast<long long>(d.inH)) continue;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * d.inW;
                        double* orow = oplane + oy * d.outW;
                        for (std::size_t ox = 0; ox < d.outW; ++ox) {
                            const long long ix = static_cast<long long>(ox) * d.stride - d.pad + static_cast<long long>(kx);
                            if (ix < 0 || ix >= static_cast<long long>(d.inW)) continue;
                            orow[ox] += w * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    return out;
}

ConvGrads conv2dBackward(const Tensor& x, const ConvParams& p, const Tensor& gradOut) {
    const ConvDims d = convDims(x, p);
    if (gradOut.rank() != 3 || gradOut.dim(0) != d.outC || gradOut.dim(1) != d.outH || gradOut.dim(2) != d.outW)
        throw std::invalid_argument("conv2dBackward: gradOut shape " + gradOut.shapeStr() + " does not match forward output");

    ConvGrads g{Tensor::zerosLike(x), Tensor::zerosLike(p.weight), Tensor::zerosLike(p.bias)};
    const double* xd = x.data();
    const double* wd = p.weight.data();
    const double* gd = gradOut.data();
    double* gxd = g.input.data();
    double* gwd = g.weight.data();

    for (std::size_t o = 0; o < d.outC; ++o) {
        const double* gplane = gd + o * d.outH * d.outW;
        double bacc = 0.0;
        for (std::size_t i = 0; i < d.outH * d.outW; ++i) bacc += gplane[i];
        g.bias[o] = bacc;
        for (std::size_t c = 0; c < d.inC; ++c) {
            const double* xplane = xd + c * d.inH * d.inW;
            double* gxplane = gxd + c * d.inH * d.inW;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    const std::size_t widx = ((o * d.inC + c) * d.kh + ky) * d.kw + kx;
                    const double w = wd[widx];
                    double wacc = 0.0;
                    for (std::size_t oy = 0; oy < d.outH; ++oy) {
                        const long long iy = static_cast<long long>(oy) * d.stride - d.pad + static_cast<long long>(ky);
                        if (iy < 0 || iy >= static_cast<long long>(d.inH)) continue;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * d.inW;
                        double* gxrow = gxplane + static_cast<std::size_t>(iy) * d.inW;
                        const double* grow = gplane + oy * d.outW;
                        for (std::size_t ox = 0; ox < d.outW; ++ox) {
                            const long long ix = static_cast<long long>(ox) * d.stride - d.pad + static_cast<long long>(kx);
                            if (ix < 0 || ix >= static_cast<long long>(d.inW)) continue;
                            const double go = grow[ox];
                            wacc += go * xrow[ix];
                            gxrow[ix] += go * w;
                        }
                    }
                    gwd[widx] += wacc;
                }
            }
        }
    }
    return g;
}

Tensor batchNorm(const Tensor& x, const BatchNormParams& p, bool training, BatchNormCache* cache) {
    require3d(x, "batchNorm");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), area = h * w;
    if (p.gamma.size() != c)
        throw std::invalid_argument("batchNorm: input has " + std::to_string(c) + " channels, params expect " +
                                    std::to_string(p.gamma.size()));

    Tensor out = Tensor::zerosLike(x);
    Tensor mean({c}), var({c}), invStd({c});
    Tensor xhat = training ? Tensor::zerosLike(x) : Tensor();

    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + ch * area;
        double* op = out.data() + ch * area;
        double mu, v;
        if (training) {
            mu = 0.0;
            for (std::size_t i = 0; i < area; ++i) mu += xp[i];
            mu /= static_cast<double>(area);
            v = 0.0;
            for (std::size_t i = 0; i < area; ++i) {
                const double dvi = xp[i] - mu;
                v += dvi * dvi;
            }
            v /= static_cast<double>(area);
        } else {
            mu = p.runningMean[ch];
            v = p.runningVar[ch];
        }
        const double is = 1.0 / std::sqrt(v + p.epsilon);
        mean[ch] = mu;
        var[ch] = v;
        invStd[ch] = is;
        const double g = p.gamma[ch], b = p.beta[ch];
        if (training) {
            double* hp = xhat.data() + ch * area;
            for (std::size_t i = 0; i < area; ++i) {
                hp[i] = (xp[i] - mu) * is;
                op[i] = g * hp[i] + b;
            }
        } else {
            for (std::size_t i = 0; i < area; ++i) op[i] = g * (xp[i] - mu) * is + b;
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->var = std::move(var);
        cache->invStd = std::move(invStd);
        cache->xhat = std::move(xhat);
    }
    return out;
}

BatchNormGrads batchNormBackward(const BatchNormParams& p, const BatchNormCache& cache, const Tensor& gradOut) {
    const Tensor& xhat = cache.xhat;
    if (xhat.empty())
        throw std::invalid_argument("batchNormBackward: cache missing training-mode normalization");
    if (!gradOut.sameShape(xhat))
        throw std::invalid_argument("batchNormBackward: gradOut shape " + gradOut.shapeStr() + " vs input " + xhat.shapeStr());

    const std::size_t c = xhat.dim(0), area = xhat.dim(1) * xhat.dim(2);
    BatchNormGrads g{Tensor::zerosLike(xhat), Tensor::zerosLike(p.gamma), Tensor::zerosLike(p.beta)};
    const double n = static_cast<double>(area);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* hp = xhat.data() + ch * area;
        const double* gp = gradOut.data() + ch * area;
        double* gip = g.input.data() + ch * area;
        double sumG = 0.0, sumGH = 0.0;
        for (std::size_t i = 0; i < area; ++i) {
            sumG += gp[i];
            sumGH += gp[i] * hp[i];
        }
        g.beta[ch] = sumG;
        g.gamma[ch] = sumGH;
        const double k = p.gamma[ch] * cache.invStd[ch] / n;
        for (std::size_t i = 0; i < area; ++i)
            gip[i] = k * (n * gp[i] - sumG - hp[i] * sumGH);
    }
    return g;
}

void updateRunningStats(BatchNormParams& p, const BatchNormCache& cache) {
    const double m = p.momentum;
    for (std::size_t ch = 0; ch < p.runningMean.size(); ++ch) {
        p.runningMean[ch] = (1.0 - m) * p.runningMean[ch] + m * cache.mean[ch];
        p.runningVar[ch] = (1.0 - m) * p.runningVar[ch] + m * cache.var[ch];
    }
}

std::vector<Tensor> batchNormPooled(const std::vector<Tensor>& xs, const BatchNormParams& p,
                                    BatchNormPooledCache* cache) {
    if (xs.empty()) throw std::invalid_argument("batchNormPooled: empty batch");
    for (const Tensor& x : xs) {
        require3d(x, "batchNormPooled");
        if (!x.sameShape(xs[0]))
            throw std::invalid_argument("batchNormPooled: mixed shapes " + xs[0].shapeStr() + " vs " + x.shapeStr());
    }
    const std::size_t c = xs[0].dim(0), area = xs[0].dim(1) * xs[0].dim(2);
    if (p.gamma.size() != c)
        throw std::invalid_argument("batchNormPooled: input has " + std::to_string(c) +
                                    " channels, params expect " + std::to_string(p.gamma.size()));
    const double n = static_cast<double>(area * xs.size());

    Tensor mean({c}), var({c}), invStd({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mu = 0.0;
        for (const Tensor& x : xs) {
            const double* xp = x.data() + ch * area;
            for (std::size_t i = 0; i < area; ++i) mu += xp[i];
        }
        mu /= n;
        double v = 0.0;
        for (const Tensor& x : xs) {
            const double* xp = x.data() + ch * area;
            for (std::size_t i = 0; i < area; ++i) {
                const double d = xp[i] - mu;
                v += d * d;
            }
        }
        v /= n;
        mean[ch] = mu;
        var[ch] = v;
        invStd[ch] = 1.0 / std::sqrt(v + p.epsilon);
    }

    std::vector<Tensor> out;
    std::vector<Tensor> xhat;
    out.reserve(xs.size());
    xhat.reserve(xs.size());
    for (const Tensor& x : xs) {
        Tensor h = Tensor::zerosLike(x);
        Tensor y = Tensor::zerosLike(x);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xp = x.data() + ch * area;
            double* hp = h.data() + ch * area;
            double* yp = y.data() + ch * area;
            const double mu = mean[ch], is = invStd[ch], g = p.gamma[ch], b = p.beta[ch];
            for (std::size_t i = 0; i < area; ++i) {
                hp[i] = (xp[i] - mu) * is;
                yp[i] = g * hp[i] + b;
            }
        }
        xhat.push_back(std::move(h));
        out.push_back(std::move(y));
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->var = std::move(var);
        cache->invStd = std::move(invStd);
        cache->xhat = std::move(xhat);
    }
    return out;
}

BatchNormPooledGrads batchNormPooledBackward(const BatchNormParams& p,
                                             const BatchNormPooledCache& cache,
                                             const std::vector<Tensor>& gradOuts) {
    if (cache.xhat.empty() || gradOuts.size() != cache.xhat.size())
        throw std::invalid_argument("batchNormPooledBackward: gradient batch does not match the cache");
    const std::size_t c = cache.xhat[0].dim(0), area = cache.xhat[0].dim(1) * cache.xhat[0].dim(2);
    const double n = static_cast<double>(area * gradOuts.size());

    BatchNormPooledGrads g;
    g.gamma = Tensor::zerosLike(p.gamma);
    g.beta = Tensor::zerosLike(p.beta);
    for (const Tensor& go : gradOuts) g.inputs.push_back(Tensor::zerosLike(go));

    for (std::size_t ch = 0; ch < c; ++ch) {
        double sumG = 0.0, sumGH = 0.0;
        for (std::size_t e = 0; e < gradOuts.size(); ++e) {
            const double* gp = gradOuts[e].data() + ch * area;
            const double* hp = cache.xhat[e].data() + ch * area;
            for (std::size_t i = 0; i < area; ++i) {
                sumG += gp[i];
                sumGH += gp[i] * hp[i];
            }
        }
        g.beta[ch] = sumG;
        g.gamma[ch] = sumGH;
        const double k = p.gamma[ch] * cache.invStd[ch] / n;
        for (std::size_t e = 0; e < gradOuts.size(); ++e) {
            const double* gp = gradOuts[e].data() + ch * area;
            const double* hp = cache.xhat[e].data() + ch * area;
            double* gip = g.inputs[e].data() + ch * area;
            for (std::size_t i = 0; i < area; ++i) gip[i] = k * (n * gp[i] - sumG - hp[i] * sumGH);
        }
    }
    return g;
}

void updateRunningStats(BatchNormParams& p, const BatchNormPooledCache& cache) {
    const double m = p.momentum;
    for (std::size_t ch = 0; ch < p.runningMean.size(); ++ch) {
        p.runningMean[ch] = (1.0 - m) * p.runningMean[ch] + m * cache.mean[ch];
        p.runningVar[ch] = (1.0 - m) * p.runningVar[ch] + m * cache.var[ch];
    }
}

namespace {

struct Tap {
    std::size_t lo, hi;
    double frac;
};

// source tap for one output coordinate under half-pixel-center sampling
Tap bilinearTap(std::size_t dst, std::size_t inSize, std::size_t outSize) {
    const double scale = static_cast<double>(inSize) / static_cast<double>(outSize);
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(inSize - 1));
    Tap t;
    t.lo = static_cast<std::size_t>(src);
    t.hi = std::min(t.lo + 1, inSize - 1);
    t.frac = src - static_cast<double>(t.lo);
    return t;
}

} // namespace

Tensor bilinearUpsample(const Tensor& x, std::size_t outH, std::size_t outW) {
    require3d(x, "bilinearUpsample");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (outH < h || outW < w)
        throw std::invalid_argument("bilinearUpsample: target " + std::to_string(outH) + "x" + std::to_string(outW) +
                                    " smaller than input " + x.shapeStr());
    std::vector<Tap> ys(outH), xs(outW);
    for (std::size_t i = 0; i < outH; ++i) ys[i] = bilinearTap(i, h, outH);
    for (std::size_t i = 0; i < outW; ++i) xs[i] = bilinearTap(i, w, outW);

    Tensor out({c, outH, outW});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + ch * h * w;
        double* op = out.data() + ch * outH * outW;
        for (std::size_t oy = 0; oy < outH; ++oy) {
            const Tap& ty = ys[oy];
            const double* r0 = xp + ty.lo * w;
            const double* r1 = xp + ty.hi * w;
            double* orow = op + oy * outW;
            for (std::size_t ox = 0; ox < outW; ++ox) {
                const Tap& tx = xs[ox];
                const double top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.frac;
                const double bot = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.frac;
                orow[ox] = top + (bot - top) * ty.frac;
            }
        }
    }
    return out;
}

Tensor bilinearUpsampleBackward(const std::vector<std::size_t>& inputShape, const Tensor& gradOut) {
    if (inputShape.size() != 3)
        throw std::invalid_argument("bilinearUpsampleBackward: input shape must be [C,H,W]");
    require3d(gradOut, "bilinearUpsampleBackward");
    const std::size_t c = inputShape[0], h = inputShape[1], w = inputShape[2];
    const std::size_t outH = gradOut.dim(1), outW = gradOut.dim(2);
    if (gradOut.dim(0) != c)
        throw std::invalid_argument("bilinearUpsampleBackward: channel mismatch");
    std::vector<Tap> ys(outH), xs(outW);
    for (std::size_t i = 0; i < outH; ++i) ys[i] = bilinearTap(i, h, outH);
    for (std::size_t i = 0; i < outW; ++i) xs[i] = bilinearTap(i, w, outW);

    Tensor grad(std::vector<std::size_t>{c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* gp = gradOut.data() + ch * outH * outW;
        double* xp = grad.data() + ch * h * w;
        for (std::size_t oy = 0; oy < outH; ++oy) {
            const Tap& ty = ys[oy];
            for (std::size_t ox = 0; ox < outW; ++ox) {
                const Tap& tx = xs[ox];
                const double g = gp[oy * outW + ox];
                xp[ty.lo * w + tx.lo] += (1.0 - ty.frac) * (1.0 - tx.frac) * g;
                xp[ty.lo * w + tx.hi] += (1.0 - ty.frac) * tx.frac * g;
                xp[ty.hi * w + tx.lo] += ty.frac * (1.0 - tx.frac) * g;
                xp[ty.hi * w + tx.hi] += ty.frac * tx.frac * g;
            }
        }
    }
    return grad;
}

Tensor reluBackward(const Tensor& x, const Tensor& gradOut) {
    if (!x.sameShape(gradOut))
        throw std::invalid_argument("reluBackward: shape mismatch " + x.shapeStr() + " vs " + gradOut.shapeStr());
    Tensor g = gradOut;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] <= 0.0) g[i] = 0.0;
    return g;
}

} // namespace assd
