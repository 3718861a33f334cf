#include "trajmix/spline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trajmix {

SplineBasis::SplineBasis(int degree, std::vector<double> interior_knots, double lo, double hi)
    : degree_(degree), lo_(lo), hi_(hi), interior_(std::move(interior_knots)) {
    if (degree < 1) throw std::invalid_argument("spline degree must be >= 1");
    if (!(lo < hi)) throw std::invalid_argument("spline boundary must satisfy lo < hi");
    for (std::size_t i = 0; i < interior_.size(); ++i) {
        if (!(interior_[i] > lo_ && interior_[i] < hi_))
            throw std::invalid_argument("interior knots must lie strictly inside the boundary");
        if (i > 0 && !(interior_[i] > interior_[i - 1]))
            throw std::invalid_argument("interior knots must be strictly ascending");
    }
    dim_ = static_cast<int>(interior_.size()) + degree_ + 1;
    knots_.reserve(interior_.size() + 2 * (degree_ + 1));
    for (int i = 0; i <= degree_; ++i) knots_.push_back(lo_);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    for (int i = 0; i <= degree_; ++i) knots_.push_back(hi_);
}

Eigen::VectorXd SplineBasis::row(double t) const {
    if (!std::isfinite(t)) throw std::invalid_argument("spline evaluation time must be finite");
    t = std::clamp(t, lo_, hi_);

    const int k = degree_;
    const int n_knots = static_cast<int>(knots_.size());
    // Knot span index: largest i with knots[i] <= t, restricted to valid spans.
    int span;
    if (t >= hi_) {
        span = n_knots - k - 2;  // last span, closes the interval at t = hi
    } else {
        span = static_cast<int>(std::upper_bound(knots_.begin() + k, knots_.end() - k - 1, t) -
                                knots_.begin()) - 1;
    }

    // Triangular scheme: values of the k+1 basis functions alive on this span.
    Eigen::VectorXd vals = Eigen::VectorXd::Zero(k + 1);
    vals[0] = 1.0;
    std::vector<double> left(k + 1), right(k + 1);
    for (int j = 1; j <= k; ++j) {
        left[j] = t - knots_[span + 1 - j];
        right[j] = knots_[span + j] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double tmp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        vals[j] = saved;
    }

    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
    for (int j = 0; j <= k; ++j) {
        const int idx = span - k + j;
        if (idx >= 0 && idx < dim_) out[idx] = vals[j];
    }
    return out;
}

std::vector<double> evenly_spaced_interior(double lo, double hi, int count) {
    std::vector<double> knots(static_cast<std::size_t>(std::max(count, 0)));
    const double step = (hi - lo) / static_cast<double>(count + 1);
    for (int i = 0; i < count; ++i) knots[static_cast<std::size_t>(i)] = lo + step * (i + 1);
    return knots;
}

Eigen::MatrixXd bspline_design(const SplineBasis& basis, const Eigen::VectorXd& times) {
    Eigen::MatrixXd out(times.size(), basis.dimension());
    for (Eigen::Index j = 0; j < times.size(); ++j) out.row(j) = basis.row(times[j]).transpose();
    return out;
}

Eigen::MatrixXd linear_design(const Eigen::VectorXd& times) {
    for (Eigen::Index j = 0; j < times.size(); ++j) {
        if (!std::isfinite(times[j])) throw std::invalid_argument("design times must be finite");
    }
    Eigen::MatrixXd out(times.size(), 2);
    out.col(0).setOnes();
    out.col(1) = times;
    return out;
}

}  // namespace trajmix
