#pragma once
// Standardized non-Gaussian noise families for the robustness study.
//
// Each family has one shape parameter. At the Gaussian end of its range the
// distribution is exactly N(0, 1); moving away increases the 1-Wasserstein
// distance to N(0, 1) monotonically. All members are shifted and scaled to
// zero mean and unit variance.
//
//   skew-normal         shape a >= 0           Gaussian at a = 0
//   exp-modified-gaussian  K = 1/(lambda*sigma) >= 0  Gaussian at K = 0
//   generalized-normal  beta in [1, 2]         Gaussian at beta = 2
//   student-t           theta = 1/dof in [0, 0.45]  Gaussian at theta = 0

#include <array>
#include <string>

#include "dal/rng.hpp"

namespace dal {

enum class Family { skew_normal, exp_modified_gaussian, generalized_normal, student_t };

inline constexpr std::array<Family, 4> kAllFamilies{Family::skew_normal, Family::exp_modified_gaussian,
                                                    Family::generalized_normal, Family::student_t};

std::string family_name(Family family);
// Accepts the names returned by family_name plus the short forms
// snd, emg, gnd, t.
Family parse_family(const std::string &name);

struct FamilyRange {
    double gaussian; // parameter giving N(0, 1)
    double far;      // other end of the calibration bracket
};
FamilyRange family_range(Family family);

class StandardizedFamily {
  public:
    StandardizedFamily(Family family, double param);

    Family family() const { return family_; }
    double param() const { return param_; }
    double cdf(double x) const;
    double sample(Rng &rng) const;

  private:
    Family family_;
    double param_;
    // Standardization: value = (raw - shift) / scale.
    double shift_ = 0.0;
    double scale_ = 1.0;
};

// Integral of |F(x) - Phi(x)| over the real line, which equals the quantile
// form of W1 between the two distributions.
double wasserstein1_to_std_normal(Family family, double param);

// Bisection for the parameter whose W1 equals `target`.
// Throws CalibrationError when the target is outside the reachable range.
double calibrate_family(Family family, double target);

} // namespace dal
