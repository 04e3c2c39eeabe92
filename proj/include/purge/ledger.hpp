#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "purge/checkpoint.hpp"

namespace purge {

enum class Phase : std::uint8_t { initial_train, teacher_retrain, student_retrain, relabel_inference };

std::string to_string(Phase phase);
Phase phase_from_string(const std::string& name);

/// One unit of counted work. For training phases `steps` is data-point steps
/// (one point processed for one epoch); for relabel_inference it is the
/// number of single-model forward passes.
struct LedgerEntry {
    std::uint64_t request = 0;  // 0 = initial training
    Phase phase = Phase::initial_train;
    Role role = Role::student;
    std::uint32_t constituent = 0;
    std::uint64_t steps = 0;

    friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

/// Append-only work log.
class CostLedger {
public:
    void append(const LedgerEntry& entry) { entries_.push_back(entry); }
    void append(const CostLedger& other);

    const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }

    std::uint64_t total(Phase phase) const;
    std::uint64_t total(Phase phase, Role role) const;
    std::uint64_t total_for_request(std::uint64_t request, Phase phase) const;

    /// Header `request,phase,role,constituent,steps`.
    void write_csv(const std::filesystem::path& path) const;
    static CostLedger read_csv(const std::filesystem::path& path);

    friend bool operator==(const CostLedger&, const CostLedger&) = default;

private:
    std::vector<LedgerEntry> entries_;
};

}  // namespace purge
