#include "dal/anomaly.hpp"

#include <cmath>
#include <string>

namespace dal {

void FilterSpec::validate() const {
    if (kernel_size <= 0 || kernel_size % 2 == 0)
        throw ShapeError("filter kernel size must be a positive odd integer");
}

std::vector<double> FilterSpec::apply(std::span<const double> image, int side) const {
    validate();
    const auto n = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
    if (image.size() != n)
        throw ShapeError("filter: image has " + std::to_string(image.size()) + " pixels, grid needs " +
                         std::to_string(n));
    const int r = kernel_size / 2;
    const double norm = 1.0 / (kernel_size * kernel_size);
    std::vector<double> out(n, 0.0);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double acc = 0.0;
            for (int yy = std::max(0, y - r); yy <= std::min(side - 1, y + r); ++yy)
                for (int xx = std::max(0, x - r); xx <= std::min(side - 1, x + r); ++xx)
                    acc += image[static_cast<std::size_t>(yy * side + xx)];
            out[static_cast<std::size_t>(y * side + x)] = acc * norm;
        }
    return out;
}

LinearOperator FilterSpec::as_operator(int side) const {
    const auto n = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
    FilterSpec copy = *this;
    return {n, n,
            [copy, side](std::span<const double> in, std::span<double> out) {
                auto v = copy.apply(in, side);
                std::copy(v.begin(), v.end(), out.begin());
            },
            {}};
}

int image_side_for(std::size_t pixels) {
    const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(pixels))));
    if (static_cast<std::size_t>(side) * static_cast<std::size_t>(side) != pixels)
        throw ShapeError("image with " + std::to_string(pixels) + " pixels is not square");
    return side;
}

std::vector<double> error_map(std::span<const double> x, std::span<const double> reconstruction,
                              const FilterSpec &filter) {
    if (x.size() != reconstruction.size())
        throw ShapeError("error_map: image and reconstruction sizes differ");
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        diff[i] = x[i] - reconstruction[i];
    auto e = filter.apply(diff, image_side_for(x.size()));
    for (auto &v : e)
        v = std::abs(v);
    return e;
}

AnomalyRegion detect_region(std::span<const double> error, double lambda) {
    AnomalyRegion region{{}, lambda};
    for (std::size_t i = 0; i < error.size(); ++i)
        if (error[i] >= lambda)
            region.pixels.push_back(i);
    return region;
}

std::vector<double> Pipeline::error(std::span<const double> x) const {
    return error_map(x, reconstruct(x, *plan, *schedule, *net), filter);
}

AnomalyRegion Pipeline::region(std::span<const double> x) const { return detect_region(error(x), lambda); }

std::vector<std::uint8_t> Pipeline::selection_trace(std::span<const double> x) const {
    std::vector<std::uint8_t> trace;
    const auto rec = reconstruct(x, *plan, *schedule, *net, &trace);
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        diff[i] = x[i] - rec[i];
    const auto filtered = filter.apply(diff, image_side_for(x.size()));
    for (double v : filtered)
        trace.push_back(v >= 0.0 ? 1 : 0);
    for (double v : filtered)
        trace.push_back(std::abs(v) >= lambda ? 1 : 0);
    return trace;
}

AffinePiece Pipeline::filtered_difference_affine(const AffineVector &line, double anchor_z) const {
    const std::size_t n = pixels();
    if (line.size() < n)
        throw ShapeError("region_and_interval: line is shorter than the image");
    AffineVector x = line.size() == n ? line : line.slice(0, n);
    auto rec = reconstruct_affine(x, anchor_z, FixedInterval::whole(), *plan, *schedule, *net);
    for (std::size_t i = 0; i < n; ++i) {
        x.constant[i] -= rec.line.constant[i];
        x.coefficient[i] -= rec.line.coefficient[i];
    }
    return {affine_linear(filter.as_operator(image_side_for(n)), x), rec.interval};
}

RegionPiece Pipeline::region_and_interval(const AffineVector &line, double anchor_z) const {
    auto piece = filtered_difference_affine(line, anchor_z);
    abs_in_place(piece.line.constant, piece.line.coefficient, anchor_z, piece.interval);
    return threshold_interval(piece.line, lambda, anchor_z, piece.interval);
}

} // namespace dal
