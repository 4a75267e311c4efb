#pragma once
// Reconstruction-error map, averaging filter and thresholding, both on
// concrete images and along a propagated line.

#include <cstdint>
#include <span>
#include <vector>

#include "dal/diffusion.hpp"
#include "dal/pwl.hpp"
#include "dal/region.hpp"
#include "dal/unet.hpp"

namespace dal {

// Uniform k x k averaging with zero padding. Every output is divided by k*k,
// including border pixels where fewer taps are in bounds.
struct FilterSpec {
    int kernel_size = 3;

    void validate() const;
    // Applies the filter to an image on a side x side grid.
    std::vector<double> apply(std::span<const double> image, int side) const;
    LinearOperator as_operator(int side) const;
};

int image_side_for(std::size_t pixels);

// |F(x - reconstruction)| pixelwise.
std::vector<double> error_map(std::span<const double> x, std::span<const double> reconstruction,
                              const FilterSpec &filter);

AnomalyRegion detect_region(std::span<const double> error, double lambda);

// Everything that maps a test image to its anomaly region.
struct Pipeline {
    const NoiseSchedule *schedule = nullptr;
    const ReconstructionPlan *plan = nullptr;
    const UNet *net = nullptr;
    FilterSpec filter;
    double lambda = 0.8;

    std::size_t pixels() const { return plan->pixels(); }
    std::vector<double> error(std::span<const double> x) const;
    AnomalyRegion region(std::span<const double> x) const;

    // Every selection outcome met while processing x: ReLU signs of each
    // network call, the sign of each filtered difference and each threshold
    // decision. Two inputs with equal traces share one affine piece.
    std::vector<std::uint8_t> selection_trace(std::span<const double> x) const;

    // Region at X(anchor) = line[0:n](anchor) and the interval around the
    // anchor on which every selection is unchanged. `line` may carry the
    // stacked (test, reference) pair; only its first n entries are used.
    RegionPiece region_and_interval(const AffineVector &line, double anchor_z) const;

    // The filtered signed difference F(x - D(x)) along the line, with the
    // interval on which the reconstruction is affine.
    AffinePiece filtered_difference_affine(const AffineVector &line, double anchor_z) const;
};

} // namespace dal
