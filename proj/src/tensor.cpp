#include "msit/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace msit {

Tensor::Tensor(int n, int c, int h, int w) : shape_{n, c, h, w} {
    if (n < 0 || c < 0 || h < 0 || w < 0)
        throw std::invalid_argument("Tensor: negative dimension");
    data_.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
}

Tensor Tensor::full(int n, int c, int h, int w, double v) {
    Tensor t(n, c, h, w);
    t.fill(v);
    return t;
}

int Tensor::rows() const {
    if (shape_[0] != 1 || shape_[1] != 1)
        throw std::invalid_argument("Tensor: not a matrix, shape " + shape_str());
    return shape_[2];
}

int Tensor::cols() const {
    if (shape_[0] != 1 || shape_[1] != 1)
        throw std::invalid_argument("Tensor: not a matrix, shape " + shape_str());
    return shape_[3];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," +
           std::to_string(shape_[2]) + "," + std::to_string(shape_[3]) + "]";
}

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    check_same(a, b, "tensor add");
    Tensor out = a;
    double* o = out.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] += q[i];
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    check_same(a, b, "tensor sub");
    Tensor out = a;
    double* o = out.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] -= q[i];
    return out;
}

Tensor operator*(const Tensor& a, const Tensor& b) {
    check_same(a, b, "tensor mul");
    Tensor out = a;
    double* o = out.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] *= q[i];
    return out;
}

Tensor operator*(const Tensor& a, double s) {
    Tensor out = a;
    double* o = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] *= s;
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same(a, b, "max_abs_diff");
    double m = 0.0;
    const double* p = a.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = std::fabs(p[i] - q[i]);
        if (d > m) m = d;
    }
    return m;
}

} // namespace msit
