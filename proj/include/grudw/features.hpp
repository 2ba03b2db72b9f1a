#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace grudw {

enum class FeatureKind { continuous, binary, comorbidity };
enum class Preprocessing { zscore, divide_by_100, identity };

struct FeatureSpec {
    std::string name;
    FeatureKind kind;
    Preprocessing preprocessing;
    bool is_static = false;

    friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// Age is not carried as observations; it is derived from age_at_index and the
// grid day.
inline constexpr std::string_view kAgeFeature = "age";

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class FeatureRoster {
public:
    FeatureRoster() = default;
    explicit FeatureRoster(std::vector<FeatureSpec> specs) : specs_(std::move(specs)) {
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                if (specs_[i].name == specs_[j].name) {
                    throw std::invalid_argument("FeatureRoster: duplicate feature '" + specs_[i].name + "'");
                }
            }
        }
    }

    // The 17 dynamic + 2 static features: labs, vitals, comorbidities, age,
    // lifestyle flags, BMI, then demographics.
    static FeatureRoster standard() {
        using K = FeatureKind;
        using P = Preprocessing;
        return FeatureRoster({
            {"egfr", K::continuous, P::zscore},
            {"albumin", K::continuous, P::zscore},
            {"phosphorus", K::continuous, P::zscore},
            {"calcium", K::continuous, P::zscore},
            {"uacr", K::continuous, P::zscore},
            {"bicarbonate", K::continuous, P::zscore},
            {"sbp", K::continuous, P::zscore},
            {"dbp", K::continuous, P::zscore},
            {"dm", K::comorbidity, P::identity},
            {"chf", K::comorbidity, P::identity},
            {"cad", K::comorbidity, P::identity},
            {"cirrhosis", K::comorbidity, P::identity},
            {"dyslipidemia", K::comorbidity, P::identity},
            {"age", K::continuous, P::divide_by_100},
            {"smoking", K::binary, P::identity},
            {"alcohol", K::binary, P::identity},
            {"bmi", K::continuous, P::zscore},
            {"gender", K::binary, P::identity, true},
            {"race", K::binary, P::identity, true},
        });
    }

    std::size_t size() const noexcept { return specs_.size(); }
    const FeatureSpec& operator[](std::size_t i) const { return specs_[i]; }
    const std::vector<FeatureSpec>& specs() const noexcept { return specs_; }
    auto begin() const { return specs_.begin(); }
    auto end() const { return specs_.end(); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            if (specs_[i].name == name) return i;
        }
        return std::nullopt;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& s : specs_) out.push_back(s.name);
        return out;
    }

    // Order-sensitive hash of the names; stored in checkpoints so a reordered
    // roster is rejected on load.
    std::uint64_t hash() const { return hash_names(names()); }

    static std::uint64_t hash_names(const std::vector<std::string>& names) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& n : names) {
            h = fnv1a64(n, h);
            h = fnv1a64(std::string_view("\x1f", 1), h);
        }
        return h;
    }

    friend bool operator==(const FeatureRoster&, const FeatureRoster&) = default;

private:
    std::vector<FeatureSpec> specs_;
};

}  // namespace grudw
