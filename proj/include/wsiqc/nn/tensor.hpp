#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsiqc::nn {

// Dense NHWC tensor, double precision. Weights reuse the same storage
// with op-specific axis meaning (conv kernels are KH x KW x CIN x COUT).
struct Tensor {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int h_, int w_, int c_, double fill = 0.0)
        : n(n_), h(h_), w(w_), c(c_),
          v(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.h, o.w, o.c); }

    std::size_t size() const { return v.size(); }

    double& at(int in, int iy, int ix, int ic) {
        return v[((static_cast<std::size_t>(in) * h + iy) * w + ix) * c + ic];
    }
    double at(int in, int iy, int ix, int ic) const {
        return v[((static_cast<std::size_t>(in) * h + iy) * w + ix) * c + ic];
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && h == o.h && w == o.w && c == o.c;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(h) + "," +
               std::to_string(w) + "," + std::to_string(c) + ")";
    }
};

}  // namespace wsiqc::nn
