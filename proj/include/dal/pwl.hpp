#pragma once
// Exact propagation of a line a + b*z through piecewise-linear primitives.
//
// Every selection primitive (ReLU, absolute value, threshold) evaluates its
// branch at an anchor z and shrinks the current interval to the set of z on
// which that branch stays selected. Composing primitives therefore yields an
// affine piece together with the maximal interval (around the anchor) on
// which the piece is exact.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dal/region.hpp"

namespace dal {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Relative slack applied to every root before it tightens an interval.
inline constexpr double kRootSlack = 1e-12;
// Width below which an interval is reported as degenerate.
inline constexpr double kWidthTolerance = 1e-12;
// Gap below which neighbouring intervals are coalesced by intervals_union.
inline constexpr double kMergeTolerance = 1e-12;

struct FixedInterval {
    double lo = -kInf;
    double hi = kInf;

    static FixedInterval whole() { return {}; }

    bool contains(double z) const { return lo <= z && z <= hi; }
    bool empty() const { return lo > hi; }
    double width() const { return hi - lo; }
    bool degenerate(double tol = kWidthTolerance) const { return hi - lo < tol; }
    bool bounded_below() const { return lo > -kInf; }
    bool bounded_above() const { return hi < kInf; }

    friend bool operator==(const FixedInterval &, const FixedInterval &) = default;
};

FixedInterval intersect(const FixedInterval &a, const FixedInterval &b);

// Sorted union of disjoint closed intervals.
class IntervalSet {
  public:
    IntervalSet() = default;

    const std::vector<FixedInterval> &intervals() const { return parts_; }
    std::size_t size() const { return parts_.size(); }
    bool empty() const { return parts_.empty(); }
    bool contains(double z) const;
    double measure() const;

    // Restrict every member to `window`, dropping the ones that vanish.
    IntervalSet clipped(const FixedInterval &window) const;

    friend IntervalSet intervals_union(std::span<const FixedInterval> parts, double merge_tol);

  private:
    std::vector<FixedInterval> parts_;
};

// Merge arbitrary closed intervals into a sorted disjoint set. Intervals that
// overlap or whose gap is below merge_tol are coalesced; empty ones dropped.
IntervalSet intervals_union(std::span<const FixedInterval> parts,
                            double merge_tol = kMergeTolerance);

// value(z) = constant + coefficient * z, elementwise.
struct AffineVector {
    std::vector<double> constant;
    std::vector<double> coefficient;

    AffineVector() = default;
    explicit AffineVector(std::size_t n) : constant(n, 0.0), coefficient(n, 0.0) {}
    AffineVector(std::vector<double> c, std::vector<double> d);

    // A line that does not move with z.
    static AffineVector fixed(std::vector<double> c);

    std::size_t size() const { return constant.size(); }
    std::vector<double> eval(double z) const;
    bool is_constant() const;
    // Coordinates [first, first + count) as a new line.
    AffineVector slice(std::size_t first, std::size_t count) const;
};

// A fixed affine map y = M x + offset, described by the action of M.
struct LinearOperator {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::function<void(std::span<const double>, std::span<double>)> apply;
    std::vector<double> offset; // empty means zero

    static LinearOperator identity(std::size_t n);
    static LinearOperator scale_shift(std::size_t n, double scale, std::vector<double> shift);
};

// (M c + offset, M d)
AffineVector affine_linear(const LinearOperator &map, const AffineVector &input);

struct AffinePiece {
    AffineVector line;
    FixedInterval interval;
};

// In-place kernels shared by the AffineVector wrappers and the network
// propagation. Each tightens `current` so that the branch chosen at `anchor`
// remains valid on it. Zero values at the anchor take the non-negative branch.
void tighten_sign(double c, double d, double anchor, FixedInterval &current);
void relu_in_place(std::span<double> constant, std::span<double> coefficient, double anchor,
                   FixedInterval &current);
void abs_in_place(std::span<double> constant, std::span<double> coefficient, double anchor,
                  FixedInterval &current);

AffinePiece affine_relu(const AffineVector &input, double anchor_z, FixedInterval current);
AffinePiece affine_abs(const AffineVector &input, double anchor_z, FixedInterval current);

struct RegionPiece {
    AnomalyRegion region;
    FixedInterval interval;
};

// Region {i : error_i(anchor) >= lambda} and the sub-interval of `current` on
// which every pixel keeps its in/out decision.
RegionPiece threshold_interval(std::span<const double> constant, std::span<const double> coefficient,
                               double lambda, double anchor_z, FixedInterval current);
RegionPiece threshold_interval(const AffineVector &error_line, double lambda, double anchor_z,
                               FixedInterval current);

} // namespace dal
