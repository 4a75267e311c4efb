#pragma once

#include <cstddef>
#include <vector>

namespace dal {

// Pixels whose filtered reconstruction error reached the threshold.
struct AnomalyRegion {
    std::vector<std::size_t> pixels; // sorted, unique
    double lambda = 0.0;

    bool empty() const { return pixels.empty(); }
    std::size_t size() const { return pixels.size(); }
    bool contains(std::size_t i) const;

    // Set equality; the threshold is bookkeeping only.
    friend bool operator==(const AnomalyRegion &a, const AnomalyRegion &b) {
        return a.pixels == b.pixels;
    }
};

} // namespace dal
