#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace msit {

enum class PadMode { zero, circular };

// Dense rank-4 tensor in (N, C, H, W) layout, row-major, double precision.
// Matrices ride along as [1, 1, rows, cols].
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w);

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
    static Tensor full(int n, int c, int h, int w, double v);
    static Tensor matrix(int rows, int cols) { return Tensor(1, 1, rows, cols); }

    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    const std::array<int, 4>& shape() const { return shape_; }

    // matrix view of a [1,1,R,C] tensor
    int rows() const;
    int cols() const;

    std::size_t numel() const { return data_.size(); }

    double& at(int n, int c, int y, int x) {
        return data_[idx(n, c, y, x)];
    }
    double at(int n, int c, int y, int x) const {
        return data_[idx(n, c, y, x)];
    }
    double& mat(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[3] + c]; }
    double mat(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[3] + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(double v);

    std::string shape_str() const;

private:
    std::size_t idx(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    }

    std::array<int, 4> shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

// elementwise helpers shared by the kernels and the autodiff tape
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b); // Hadamard
Tensor operator*(const Tensor& a, double s);
inline Tensor operator*(double s, const Tensor& a) { return a * s; }

double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace msit
