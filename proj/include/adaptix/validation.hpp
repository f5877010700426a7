#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adaptix {

enum class Verdict { pass, fail, not_checked };

inline std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::fail: return "fail";
        case Verdict::not_checked: return "not_checked";
    }
    return "?";
}

/// Assumption ids covered by a full problem report, in report order.
inline constexpr std::array<std::string_view, 14> kAssumptionIds = {
    "B1.1", "B1.2", "B2.1", "B2.2", "B2.3", "B3.1a", "B3.1b",
    "B3.1c", "B3.1d", "B3.2", "B3.3", "B3.4", "B4.1", "B4.2"};

struct ValidationItem {
    std::string id;
    Verdict verdict = Verdict::not_checked;
    std::string detail;
    /// Sampled point where the check failed, if any.
    std::optional<Eigen::VectorXd> witness;
};

/// Sampled evidence for (or against) the convergence assumptions. A pass is
/// evidence, not proof; universally quantified conditions can only be spot checked.
struct ValidationReport {
    std::vector<ValidationItem> items;

    const ValidationItem* find(std::string_view id) const {
        auto it = std::find_if(items.begin(), items.end(), [&](const auto& i) { return i.id == id; });
        return it == items.end() ? nullptr : &*it;
    }

    Verdict verdict(std::string_view id) const {
        const auto* item = find(id);
        return item ? item->verdict : Verdict::not_checked;
    }

    bool any_failed() const {
        return std::any_of(items.begin(), items.end(), [](const auto& i) { return i.verdict == Verdict::fail; });
    }

    /// Every id in kAssumptionIds appears exactly once.
    bool complete() const {
        if (items.size() != kAssumptionIds.size()) return false;
        return std::all_of(kAssumptionIds.begin(), kAssumptionIds.end(), [&](std::string_view id) {
            return std::count_if(items.begin(), items.end(), [&](const auto& i) { return i.id == id; }) == 1;
        });
    }

    void add(std::string id, Verdict v, std::string detail, std::optional<Eigen::VectorXd> witness = std::nullopt) {
        items.push_back({std::move(id), v, std::move(detail), std::move(witness)});
    }

    void append(const ValidationReport& other) {
        items.insert(items.end(), other.items.begin(), other.items.end());
    }
};

}  // namespace adaptix
