#pragma once

#include <Eigen/Dense>
#include <vector>

namespace trajmix {

/// Clamped B-spline basis over a fixed time span. Boundary knots are repeated
/// degree+1 times, so the basis has |interior_knots| + degree + 1 functions,
/// is a partition of unity on [lo, hi], and interpolates at the endpoints.
class SplineBasis {
public:
    SplineBasis() = default;
    SplineBasis(int degree, std::vector<double> interior_knots, double lo, double hi);

    int degree() const { return degree_; }
    int dimension() const { return dim_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    const std::vector<double>& interior_knots() const { return interior_; }
    const std::vector<double>& knot_vector() const { return knots_; }

    /// Basis row at time t. Times outside [lo, hi] are clamped to the boundary.
    Eigen::VectorXd row(double t) const;

private:
    int degree_ = 3;
    double lo_ = 0.0;
    double hi_ = 1.0;
    int dim_ = 0;
    std::vector<double> interior_;
    std::vector<double> knots_;  // clamped
};

/// Evenly spaced interior knots strictly inside (lo, hi).
std::vector<double> evenly_spaced_interior(double lo, double hi, int count);

/// Design matrix: row j is the basis evaluated at times[j].
Eigen::MatrixXd bspline_design(const SplineBasis& basis, const Eigen::VectorXd& times);

/// Intercept-and-slope design: row j = (1, times[j]).
Eigen::MatrixXd linear_design(const Eigen::VectorXd& times);

}  // namespace trajmix
