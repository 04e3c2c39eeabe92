#include "purge/ledger.hpp"

#include <fstream>
#include <sstream>

#include "purge/error.hpp"

namespace purge {

std::string to_string(Phase phase) {
    switch (phase) {
        case Phase::initial_train: return "initial_train";
        case Phase::teacher_retrain: return "teacher_retrain";
        case Phase::student_retrain: return "student_retrain";
        case Phase::relabel_inference: return "relabel_inference";
    }
    return "?";
}

Phase phase_from_string(const std::string& name) {
    for (auto p : {Phase::initial_train, Phase::teacher_retrain, Phase::student_retrain, Phase::relabel_inference})
        if (to_string(p) == name) return p;
    throw ParseError("unknown ledger phase '" + name + "'");
}

void CostLedger::append(const CostLedger& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

std::uint64_t CostLedger::total(Phase phase) const {
    std::uint64_t n = 0;
    for (const auto& e : entries_)
        if (e.phase == phase) n += e.steps;
    return n;
}

std::uint64_t CostLedger::total(Phase phase, Role role) const {
    std::uint64_t n = 0;
    for (const auto& e : entries_)
        if (e.phase == phase && e.role == role) n += e.steps;
    return n;
}

std::uint64_t CostLedger::total_for_request(std::uint64_t request, Phase phase) const {
    std::uint64_t n = 0;
    for (const auto& e : entries_)
        if (e.request == request && e.phase == phase) n += e.steps;
    return n;
}

void CostLedger::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "request,phase,role,constituent,steps\n";
    for (const auto& e : entries_)
        out << e.request << ',' << to_string(e.phase) << ',' << to_string(e.role) << ',' << e.constituent << ','
            << e.steps << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

CostLedger CostLedger::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    CostLedger ledger;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 || line.empty()) continue;
        std::istringstream row(line);
        std::string request, phase, role, constituent, steps;
        if (!std::getline(row, request, ',') || !std::getline(row, phase, ',') || !std::getline(row, role, ',') ||
            !std::getline(row, constituent, ',') || !std::getline(row, steps))
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed ledger row");
        try {
            LedgerEntry e;
            e.request = std::stoull(request);
            e.phase = phase_from_string(phase);
            if (role != "teacher" && role != "student") throw ParseError("bad role");
            e.role = role == "teacher" ? Role::teacher : Role::student;
            e.constituent = static_cast<std::uint32_t>(std::stoul(constituent));
            e.steps = std::stoull(steps);
            ledger.append(e);
        } catch (const std::exception& ex) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return ledger;
}

}  // namespace purge
