#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sparsemix {

/// n finite observations held in nondecreasing order.
class SortedSample {
public:
    explicit SortedSample(std::vector<double> values) : values_(std::move(values))
    {
        if (values_.empty())
            throw std::invalid_argument("SortedSample: at least one observation is required");
        for (double v : values_)
            if (!std::isfinite(v))
                throw std::invalid_argument("SortedSample: observations must be finite");
        if (!std::is_sorted(values_.begin(), values_.end()))
            std::sort(values_.begin(), values_.end());
    }

    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double min() const noexcept { return values_.front(); }
    double max() const noexcept { return values_.back(); }

    /// #{X_i <= t}
    std::size_t count_le(double t) const noexcept
    {
        return static_cast<std::size_t>(
            std::upper_bound(values_.begin(), values_.end(), t) - values_.begin());
    }

    /// #{X_i < t}
    std::size_t count_lt(double t) const noexcept
    {
        return static_cast<std::size_t>(
            std::lower_bound(values_.begin(), values_.end(), t) - values_.begin());
    }

private:
    std::vector<double> values_;
};

} // namespace sparsemix
