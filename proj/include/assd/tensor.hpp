#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace assd {

std::string shapeString(const std::vector<std::size_t>& shape);

// Dense n-dimensional array of doubles, row-major, owning its storage.
// No views or strides: ops copy, which is fine at the sizes this project runs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor zerosLike(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool sameShape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shapeStr() const { return shapeString(shape_); }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// c[i][j] = sum_k a[i][k] * b[k][j]
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D transpose
Tensor transpose(const Tensor& a);

// Row-wise softmax of a 2-D tensor, max-subtracted for stability.
Tensor softmaxRows(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
void accumulate(Tensor& dst, const Tensor& src); // dst += src

// Central finite differences of a scalar function, one probe per coordinate.
// Gradient verification oracle for every hand-written backward in this repo.
Tensor finiteDiffGrad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                      double h = 1e-5);

// max_i |a_i - n_i| / max(|a_i|, |n_i|, scaleFloor); the floor turns the
// comparison absolute for entries smaller than scaleFloor so finite-difference
// noise on (near-)zero gradients does not dominate.
double maxRelError(const Tensor& analytic, const Tensor& numeric, double scaleFloor = 1e-3);

} // namespace assd
