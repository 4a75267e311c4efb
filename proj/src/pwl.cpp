#include "dal/pwl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dal/errors.hpp"

namespace dal {

bool AnomalyRegion::contains(std::size_t i) const {
    return std::binary_search(pixels.begin(), pixels.end(), i);
}

FixedInterval intersect(const FixedInterval &a, const FixedInterval &b) {
    return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

bool IntervalSet::contains(double z) const {
    auto it = std::upper_bound(parts_.begin(), parts_.end(), z,
                               [](double v, const FixedInterval &iv) { return v < iv.lo; });
    if (it == parts_.begin())
        return false;
    return std::prev(it)->contains(z);
}

double IntervalSet::measure() const {
    double total = 0.0;
    for (const auto &iv : parts_)
        total += iv.width();
    return total;
}

IntervalSet IntervalSet::clipped(const FixedInterval &window) const {
    IntervalSet out;
    for (const auto &iv : parts_) {
        auto c = intersect(iv, window);
        if (!c.empty())
            out.parts_.push_back(c);
    }
    return out;
}

IntervalSet intervals_union(std::span<const FixedInterval> parts, double merge_tol) {
    std::vector<FixedInterval> sorted;
    sorted.reserve(parts.size());
    for (const auto &iv : parts)
        if (!iv.empty())
            sorted.push_back(iv);
    std::sort(sorted.begin(), sorted.end(),
              [](const FixedInterval &a, const FixedInterval &b) { return a.lo < b.lo; });

    IntervalSet out;
    for (const auto &iv : sorted) {
        if (!out.parts_.empty() && iv.lo - out.parts_.back().hi <= merge_tol)
            out.parts_.back().hi = std::max(out.parts_.back().hi, iv.hi);
        else
            out.parts_.push_back(iv);
    }
    return out;
}

AffineVector::AffineVector(std::vector<double> c, std::vector<double> d)
    : constant(std::move(c)), coefficient(std::move(d)) {
    if (constant.size() != coefficient.size())
        throw ShapeError("affine vector: constant has " + std::to_string(constant.size()) +
                         " entries but coefficient has " + std::to_string(coefficient.size()));
}

AffineVector AffineVector::fixed(std::vector<double> c) {
    std::vector<double> d(c.size(), 0.0);
    return {std::move(c), std::move(d)};
}

std::vector<double> AffineVector::eval(double z) const {
    std::vector<double> out(constant.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = constant[i] + coefficient[i] * z;
    return out;
}

bool AffineVector::is_constant() const {
    return std::all_of(coefficient.begin(), coefficient.end(), [](double v) { return v == 0.0; });
}

AffineVector AffineVector::slice(std::size_t first, std::size_t count) const {
    if (first + count > size())
        throw ShapeError("affine vector slice out of range");
    return {std::vector<double>(constant.begin() + first, constant.begin() + first + count),
            std::vector<double>(coefficient.begin() + first, coefficient.begin() + first + count)};
}

LinearOperator LinearOperator::identity(std::size_t n) {
    return {n, n, [](std::span<const double> in, std::span<double> out) {
                std::copy(in.begin(), in.end(), out.begin());
            },
            {}};
}

LinearOperator LinearOperator::scale_shift(std::size_t n, double scale, std::vector<double> shift) {
    if (!shift.empty() && shift.size() != n)
        throw ShapeError("scale_shift: offset length does not match dimension");
    return {n, n,
            [scale](std::span<const double> in, std::span<double> out) {
                for (std::size_t i = 0; i < in.size(); ++i)
                    out[i] = scale * in[i];
            },
            std::move(shift)};
}

AffineVector affine_linear(const LinearOperator &map, const AffineVector &input) {
    if (input.size() != map.in_dim)
        throw ShapeError("affine_linear: operator expects " + std::to_string(map.in_dim) +
                         " inputs, got " + std::to_string(input.size()));
    if (!map.offset.empty() && map.offset.size() != map.out_dim)
        throw ShapeError("affine_linear: offset length does not match output dimension");
    AffineVector out(map.out_dim);
    map.apply(input.constant, out.constant);
    map.apply(input.coefficient, out.coefficient);
    if (!map.offset.empty())
        for (std::size_t i = 0; i < map.out_dim; ++i)
            out.constant[i] += map.offset[i];
    return out;
}

void tighten_sign(double c, double d, double anchor, FixedInterval &current) {
    if (d == 0.0)
        return;
    const bool nonneg = c + d * anchor >= 0.0;
    const double root = -c / d;
    const double slack = kRootSlack * std::max(1.0, std::abs(root));
    // A non-negative unit with positive slope (or a negative unit with
    // negative slope) is bounded from below by its root.
    if (nonneg == (d > 0.0))
        current.lo = std::max(current.lo, std::min(root - slack, anchor));
    else
        current.hi = std::min(current.hi, std::max(root + slack, anchor));
}

namespace {

void check_lengths(std::span<const double> c, std::span<const double> d) {
    if (c.size() != d.size())
        throw ShapeError("constant and coefficient lengths differ");
}

void check_anchor(const FixedInterval &current, double anchor) {
    if (!current.contains(anchor))
        throw ConsistencyError("anchor " + std::to_string(anchor) + " lies outside [" +
                               std::to_string(current.lo) + ", " + std::to_string(current.hi) + "]");
}

} // namespace

void relu_in_place(std::span<double> constant, std::span<double> coefficient, double anchor,
                   FixedInterval &current) {
    check_lengths(constant, coefficient);
    for (std::size_t i = 0; i < constant.size(); ++i) {
        tighten_sign(constant[i], coefficient[i], anchor, current);
        if (constant[i] + coefficient[i] * anchor < 0.0) {
            constant[i] = 0.0;
            coefficient[i] = 0.0;
        }
    }
}

void abs_in_place(std::span<double> constant, std::span<double> coefficient, double anchor,
                  FixedInterval &current) {
    check_lengths(constant, coefficient);
    for (std::size_t i = 0; i < constant.size(); ++i) {
        tighten_sign(constant[i], coefficient[i], anchor, current);
        if (constant[i] + coefficient[i] * anchor < 0.0) {
            constant[i] = -constant[i];
            coefficient[i] = -coefficient[i];
        }
    }
}

AffinePiece affine_relu(const AffineVector &input, double anchor_z, FixedInterval current) {
    check_anchor(current, anchor_z);
    AffinePiece out{input, current};
    relu_in_place(out.line.constant, out.line.coefficient, anchor_z, out.interval);
    check_anchor(out.interval, anchor_z);
    return out;
}

AffinePiece affine_abs(const AffineVector &input, double anchor_z, FixedInterval current) {
    check_anchor(current, anchor_z);
    AffinePiece out{input, current};
    abs_in_place(out.line.constant, out.line.coefficient, anchor_z, out.interval);
    check_anchor(out.interval, anchor_z);
    return out;
}

RegionPiece threshold_interval(std::span<const double> constant, std::span<const double> coefficient,
                               double lambda, double anchor_z, FixedInterval current) {
    check_lengths(constant, coefficient);
    check_anchor(current, anchor_z);
    RegionPiece out{{{}, lambda}, current};
    for (std::size_t i = 0; i < constant.size(); ++i) {
        // error_i(z) - lambda keeps the sign it has at the anchor.
        tighten_sign(constant[i] - lambda, coefficient[i], anchor_z, out.interval);
        if (constant[i] + coefficient[i] * anchor_z >= lambda)
            out.region.pixels.push_back(i);
    }
    check_anchor(out.interval, anchor_z);
    return out;
}

RegionPiece threshold_interval(const AffineVector &error_line, double lambda, double anchor_z,
                               FixedInterval current) {
    return threshold_interval(error_line.constant, error_line.coefficient, lambda, anchor_z, current);
}

} // namespace dal
