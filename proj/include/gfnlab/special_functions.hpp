#pragma once

namespace gfn {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
// b = 0 (a = 0) is read as the point mass at 1 (at 0).
double incomplete_beta(double a, double b, double x);

}  // namespace gfn
