#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"
#include "record.hpp"

namespace grudw {

inline constexpr int kHoldout = 0;

/// Patient id -> 0 for the held-out set, 1..k for cross-validation chunks.
struct FoldAssignment {
    std::map<std::string, int> assignment;
    int k = 0;
    std::uint64_t seed = 0;

    std::vector<std::size_t> members(const std::vector<PatientRecord>& records, int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < records.size(); ++i) {
            auto it = assignment.find(records[i].id);
            if (it == assignment.end()) throw DataError("fold assignment has no entry for patient " + records[i].id);
            if (it->second == fold) out.push_back(i);
        }
        return out;
    }

    friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

/// Uniform draw of `n_holdout` patient ids without replacement.
inline std::set<std::string> holdout_split(const std::vector<PatientRecord>& records, std::size_t n_holdout,
                                           std::uint64_t seed) {
    if (n_holdout >= records.size()) throw DataError("holdout_split: n_holdout must be smaller than the population");
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0x401d));
    rng.shuffle(order);
    std::set<std::string> out;
    for (std::size_t i = 0; i < n_holdout; ++i) out.insert(records[order[i]].id);
    return out;
}

/// Deals shuffled uncensored patients round-robin over the k folds, then the
/// censored ones continuing from where the uncensored left off, so per-fold
/// uncensored counts, censored counts and sizes each differ by at most one.
/// Event times play no role.
inline FoldAssignment censored_stratified_kfold(const std::vector<PatientRecord>& records, int k, std::uint64_t seed,
                                                const std::set<std::string>& excluded = {}) {
    if (k < 1) throw DataError("censored_stratified_kfold: k must be >= 1");
    std::vector<std::size_t> uncensored;
    std::vector<std::size_t> censored;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (excluded.count(records[i].id)) continue;
        (records[i].event ? uncensored : censored).push_back(i);
    }
    if (std::size_t(k) > uncensored.size() + censored.size()) {
        throw DataError("censored_stratified_kfold: k exceeds the remaining population");
    }
    Rng rng(derive_seed(seed, 0xf01d));
    rng.shuffle(uncensored);
    rng.shuffle(censored);

    FoldAssignment out;
    out.k = k;
    out.seed = seed;
    for (const auto& id : excluded) out.assignment[id] = kHoldout;
    std::size_t slot = 0;
    for (std::size_t i : uncensored) out.assignment[records[i].id] = 1 + int(slot++ % std::size_t(k));
    for (std::size_t i : censored) out.assignment[records[i].id] = 1 + int(slot++ % std::size_t(k));
    return out;
}

/// Held-out draw followed by stratified folds over the remainder.
inline FoldAssignment make_splits(const std::vector<PatientRecord>& records, std::size_t n_holdout, int k,
                                  std::uint64_t seed) {
    std::set<std::string> held;
    if (n_holdout > 0) held = holdout_split(records, n_holdout, seed);
    return censored_stratified_kfold(records, k, seed, held);
}

/// Chunk rotation for fold f (1-based): test on f, validate on the next chunk,
/// train on the remaining k - 2.
struct FoldRoles {
    int test = 0;
    int validation = 0;
    std::vector<int> training;
};

inline FoldRoles fold_roles(int fold, int k) {
    if (k < 3) throw DataError("fold_roles: need k >= 3 for train/validation/test rotation");
    FoldRoles roles;
    roles.test = fold;
    roles.validation = fold % k + 1;
    for (int f = 1; f <= k; ++f) {
        if (f != roles.test && f != roles.validation) roles.training.push_back(f);
    }
    return roles;
}

}  // namespace grudw
