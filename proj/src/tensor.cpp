#include "assd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace assd {

std::string shapeString(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return "scalar";
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s;
}

namespace {

std::size_t shapeProduct(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shapeString(shape));
        n *= d;
    }
    return n;
}

void require2d(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + t.shapeStr());
}

void requireSameShape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.sameShape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shapeStr() + " vs " + b.shapeStr());
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shapeProduct(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shapeProduct(shape_) != data_.size())
        throw std::invalid_argument("tensor: shape " + shapeString(shape_) + " does not match data length " +
                                    std::to_string(data_.size()));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require2d(a, "matmul");
    require2d(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), p = b.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree: " + a.shapeStr() + " vs " + b.shapeStr());
    Tensor c({m, p});
    const double* ad = a.data();
    const double* bd = b.data();
    double* cd = c.data();
    // ikj order keeps the inner loop contiguous in both b and c
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ad[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = bd + kk * p;
            double* crow = cd + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    require2d(a, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor t({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Tensor softmaxRows(const Tensor& a) {
    require2d(a, "softmaxRows");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = a.data() + i * cols;
        double* orow = out.data() + i * cols;
        const double mx = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            orow[j] = std::exp(row[j] - mx);
            total += orow[j];
        }
        for (std::size_t j = 0; j < cols; ++j) orow[j] /= total;
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    requireSameShape(a, b, "add");
    Tensor out = a;
    const double* bd = b.data();
    double* od = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] += bd[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    requireSameShape(a, b, "sub");
    Tensor out = a;
    const double* bd = b.data();
    double* od = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] -= bd[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.values()) v *= s;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (shapeProduct(shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + a.shapeStr() + " as " + shapeString(shape));
    return Tensor(std::move(shape), a.values());
}

double sum(const Tensor& a) {
    return std::accumulate(a.values().begin(), a.values().end(), 0.0);
}

double dot(const Tensor& a, const Tensor& b) {
    requireSameShape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void accumulate(Tensor& dst, const Tensor& src) {
    requireSameShape(dst, src, "accumulate");
    double* dd = dst.data();
    const double* sd = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dd[i] += sd[i];
}

Tensor finiteDiffGrad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finiteDiffGrad: step must be positive");
    Tensor grad = Tensor::zerosLike(x);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finiteDiffGrad: non-finite function value at coordinate " + std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double maxRelError(const Tensor& analytic, const Tensor& numeric, double scaleFloor) {
    requireSameShape(analytic, numeric, "maxRelError");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double denom = std::max({std::fabs(a), std::fabs(n), scaleFloor});
        worst = std::max(worst, std::fabs(a - n) / denom);
    }
    return worst;
}

} // namespace assd
