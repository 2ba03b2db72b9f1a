#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

namespace grudw {

inline constexpr double kDaysPerYear = 365.25;

/// Timestep boundaries in days relative to the index date. Step k covers the
/// interval (days[k-1], days[k]]; step 0 covers only days[0].
class TimeGrid {
public:
    TimeGrid() = default;
    explicit TimeGrid(std::vector<int> days) : days_(std::move(days)) {
        if (days_.empty()) throw std::invalid_argument("TimeGrid: empty");
        for (std::size_t i = 1; i < days_.size(); ++i) {
            if (days_[i] <= days_[i - 1]) throw std::invalid_argument("TimeGrid: days must be strictly increasing");
        }
    }

    std::size_t size() const noexcept { return days_.size(); }
    int day(std::size_t k) const { return days_[k]; }
    const std::vector<int>& days() const noexcept { return days_; }

    // Days since the previous step; 0 for the first step.
    int gap(std::size_t k) const { return k == 0 ? 0 : days_[k] - days_[k - 1]; }

    /// Step whose interval contains `day`; empty when the day is before the
    /// first boundary or after the last one.
    std::optional<std::size_t> step_of_day(int day) const {
        if (day < days_.front() || day > days_.back()) return std::nullopt;
        auto it = std::lower_bound(days_.begin(), days_.end(), day);
        return static_cast<std::size_t>(it - days_.begin());
    }

    /// Number of steps strictly before `day`.
    std::size_t steps_before(int day) const {
        return static_cast<std::size_t>(std::lower_bound(days_.begin(), days_.end(), day) - days_.begin());
    }

    /// Index of the last step at or before `day`, if any.
    std::optional<std::size_t> last_step_at_or_before(int day) const {
        auto it = std::upper_bound(days_.begin(), days_.end(), day);
        if (it == days_.begin()) return std::nullopt;
        return static_cast<std::size_t>(it - days_.begin() - 1);
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    std::vector<int> days_;
};

/// The 110-step grid over [-3y, +5y]: 15-day spacing on [-180, +180], 30-day
/// spacing elsewhere. Walking outward from the dense window in 30-day steps
/// ends at -1080 and +1800; a final 15-day step to -1095 closes the 3-year
/// look-back.
inline TimeGrid build_grid() {
    std::vector<int> days;
    days.push_back(-1095);
    for (int d = -1080; d < -180; d += 30) days.push_back(d);
    for (int d = -180; d <= 180; d += 15) days.push_back(d);
    for (int d = 210; d <= 1800; d += 30) days.push_back(d);
    return TimeGrid(std::move(days));
}

}  // namespace grudw
