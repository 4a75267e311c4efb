#pragma once
// Batched feature-map kernels used by the U-Net.
//
// A batch of B maps with C channels on an S x S grid is stored as a C x (B*S*S)
// column-major matrix; column b*S*S + y*S + x holds every channel of pixel
// (y, x) of item b. Affine propagation uses B = 2 (constant, coefficient).

#include <algorithm>

#include <Eigen/Dense>

namespace dal::ops {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
    int channels;
    int side;
    int batch;

    int area() const { return side * side; }
    int columns() const { return batch * side * side; }
};

// (k*k*C) x (B*S*S) patch matrix with zero padding ("same" convolution).
// Row (ky*k + kx)*C + c holds channel c at tap (ky, kx), so every tap is a
// contiguous copy of an input column. Kernels must use the same row order,
// see tap_major.
inline Mat im2col(const Mat &in, const Shape &s, int k) {
    const int pad = k / 2;
    const int area = s.area();
    const int C = s.channels;
    Mat cols(static_cast<Eigen::Index>(C) * k * k, s.columns());
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < s.side; ++y)
            for (int x = 0; x < s.side; ++x) {
                const int col = b * area + y * s.side + x;
                double *dst = cols.col(col).data();
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - pad;
                    for (int kx = 0; kx < k; ++kx, dst += C) {
                        const int sx = x + kx - pad;
                        if (sy < 0 || sy >= s.side || sx < 0 || sx >= s.side) {
                            std::fill(dst, dst + C, 0.0);
                            continue;
                        }
                        const double *src = in.col(b * area + sy * s.side + sx).data();
                        std::copy(src, src + C, dst);
                    }
                }
            }
    return cols;
}

// Adjoint of im2col.
inline Mat col2im(const Mat &cols, const Shape &s, int k) {
    const int pad = k / 2;
    const int area = s.area();
    const int C = s.channels;
    Mat out = Mat::Zero(C, s.columns());
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < s.side; ++y)
            for (int x = 0; x < s.side; ++x) {
                const int col = b * area + y * s.side + x;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= s.side)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = x + kx - pad;
                        if (sx < 0 || sx >= s.side)
                            continue;
                        out.col(b * area + sy * s.side + sx) +=
                            cols.col(col).segment(static_cast<Eigen::Index>(ky * k + kx) * C, C);
                    }
                }
            }
    return out;
}

// Reorders a Cout x (C*k*k) kernel stored as [c][ky][kx] into the tap-major
// column order of im2col.
template <class Kernel>
Mat tap_major(const Kernel &kernel, int channels, int k) {
    Mat out(kernel.rows(), kernel.cols());
    for (int c = 0; c < channels; ++c)
        for (int t = 0; t < k * k; ++t)
            out.col(static_cast<Eigen::Index>(t) * channels + c) = kernel.col(static_cast<Eigen::Index>(c) * k * k + t);
    return out;
}

// Inverse of tap_major.
inline Mat channel_major(const Mat &kernel, int channels, int k) {
    Mat out(kernel.rows(), kernel.cols());
    for (int c = 0; c < channels; ++c)
        for (int t = 0; t < k * k; ++t)
            out.col(static_cast<Eigen::Index>(c) * k * k + t) = kernel.col(static_cast<Eigen::Index>(t) * channels + c);
    return out;
}

// 2x2 average pooling; input side s.side, output side s.side / 2.
inline Mat avg_pool2(const Mat &in, const Shape &s) {
    const int half = s.side / 2;
    const int area = s.area();
    Mat out(s.channels, s.batch * half * half);
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < half; ++y)
            for (int x = 0; x < half; ++x) {
                const int base = b * area + 2 * y * s.side + 2 * x;
                out.col(b * half * half + y * half + x) =
                    0.25 * (in.col(base) + in.col(base + 1) + in.col(base + s.side) +
                            in.col(base + s.side + 1));
            }
    return out;
}

// Adjoint of avg_pool2; `s` describes the pooling input.
inline Mat avg_pool2_backward(const Mat &dout, const Shape &s) {
    const int half = s.side / 2;
    const int area = s.area();
    Mat din(s.channels, s.columns());
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < half; ++y)
            for (int x = 0; x < half; ++x) {
                const int base = b * area + 2 * y * s.side + 2 * x;
                const auto g = 0.25 * dout.col(b * half * half + y * half + x);
                din.col(base) = g;
                din.col(base + 1) = g;
                din.col(base + s.side) = g;
                din.col(base + s.side + 1) = g;
            }
    return din;
}

// Nearest-neighbour 2x upsampling; input side s.side.
inline Mat upsample2(const Mat &in, const Shape &s) {
    const int two = 2 * s.side;
    const int area = s.area();
    Mat out(s.channels, s.batch * two * two);
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < two; ++y)
            for (int x = 0; x < two; ++x)
                out.col(b * two * two + y * two + x) = in.col(b * area + (y / 2) * s.side + x / 2);
    return out;
}

// Adjoint of upsample2; `s` describes the upsampling input.
inline Mat upsample2_backward(const Mat &dout, const Shape &s) {
    const int two = 2 * s.side;
    const int area = s.area();
    Mat din = Mat::Zero(s.channels, s.columns());
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < two; ++y)
            for (int x = 0; x < two; ++x)
                din.col(b * area + (y / 2) * s.side + x / 2) += dout.col(b * two * two + y * two + x);
    return din;
}

inline Mat concat_channels(const Mat &top, const Mat &bottom) {
    Mat out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
}

} // namespace dal::ops
