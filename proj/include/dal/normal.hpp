#pragma once
// Standard normal tails and interval masses that stay accurate far into the
// tails. Everything is computed in log space so a mass of 1e-400 is still a
// finite, comparable number.

#include <span>

#include "dal/pwl.hpp"

namespace dal::normal {

double pdf(double x);
double log_pdf(double x);

// Mills ratio R(x) = upper_tail(x) / pdf(x).
double mills_ratio(double x);

// log P(Z >= x) for Z ~ N(0, 1).
double log_upper_tail(double x);
double upper_tail(double x);
double cdf(double x);

// log P(lo <= Z <= hi) for Z ~ N(0, 1); -inf for an empty interval.
double log_mass(double lo, double hi);

// log(sum(exp(v))) over the values, summed in descending order.
double log_sum_exp(std::span<const double> values);

} // namespace dal::normal
