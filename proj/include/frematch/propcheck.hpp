#pragma once

// The seeded property suite behind `frematch propcheck`: gradient checks for
// every primitive and loss, the group-representation oracles, the EMA closed
// form and the loss zero-cases.

#include <cstdint>
#include <string>
#include <vector>

namespace frematch {

struct PropertyResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct PropertyReport {
    std::vector<PropertyResult> results;

    [[nodiscard]] bool all_passed() const;
    [[nodiscard]] std::vector<std::string> failed_names() const;
    // One "PASS name  detail" / "FAIL name  detail" line per property.
    [[nodiscard]] std::string text() const;
};

// Deterministic for a given seed: repeated calls produce identical reports.
PropertyReport run_property_suite(std::uint64_t seed = 0);

// Property names in suite order.
std::vector<std::string> property_names();

}  // namespace frematch
