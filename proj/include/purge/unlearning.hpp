#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "purge/checkpoint.hpp"
#include "purge/data.hpp"
#include "purge/ledger.hpp"
#include "purge/student.hpp"
#include "purge/teacher.hpp"

namespace purge {

enum class TargetKind { student, teacher, simultaneous };

std::string to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& name);

struct UnlearnRequest {
    std::uint64_t request_id = 0;
    TargetKind target = TargetKind::teacher;
    PointId point = 0;

    friend bool operator==(const UnlearnRequest&, const UnlearnRequest&) = default;
};

struct UnlearnReport {
    std::uint64_t request_id = 0;
    TargetKind target = TargetKind::teacher;
    PointId point = 0;
    std::optional<bool> aligned;  // simultaneous requests in purge/single_teacher mode
    std::vector<std::size_t> affected_teacher_members;
    std::vector<std::size_t> affected_student_constituents;
    std::vector<CheckpointKey> reverted_to;  // slice 0 denotes an initial state
    std::vector<std::pair<std::size_t, std::size_t>> chunks_relabeled;  // (k, l), 0-based
    std::uint64_t teacher_steps = 0;
    std::uint64_t student_steps = 0;
    std::uint64_t relabel_inferences = 0;
    std::size_t rounds_retrained = 0;
    double wall_time = 0.0;  // seconds, informational only
};

/// Everything the unlearning engine mutates, apart from the checkpoint store.
/// Datasets are never edited: membership lives in the partition plans.
struct System {
    Dataset teacher_data;
    Dataset student_data;
    TeacherEnsemble teachers;
    StudentNetwork students;
    CostLedger ledger;
    bool deterministic = true;
    std::uint64_t last_request = 0;
};

/// Trains teachers, then students, recording everything in `store`.
System build_system(Dataset teacher_data, Dataset student_data, const TeacherConfig& teacher_config,
                    ConstituentMapping mapping, const StudentConfig& student_config,
                    const std::vector<std::vector<std::size_t>>& slices_per_chunk, CheckpointStore& store);

/// Student-side removal: revert constituent k to the state before the slice
/// holding the point and replay from there. Labels are not regenerated.
UnlearnReport unlearn_student(System& system, CheckpointStore& store, PointId point, std::uint64_t request_id);

/// Teacher-side removal: SISA-update the owning teacher, relabel the owner
/// student's chunks from that teacher's position on, revert to the end of the
/// previous chunk and replay. In naive_sisa mode every constituent restarts.
UnlearnReport unlearn_teacher(System& system, CheckpointStore& store, PointId point, std::uint64_t request_id);

/// Removal of a point present in both datasets. Aligned requests (the point's
/// student chunk is labelled starting from the teacher that owns it) are one
/// combined replay; misaligned requests touch at most two constituents.
UnlearnReport unlearn_simultaneous(System& system, CheckpointStore& store, PointId point,
                                   std::uint64_t request_id);

/// Dispatches on the target. Request ids must strictly increase.
UnlearnReport apply_request(System& system, CheckpointStore& store, const UnlearnRequest& request);

struct Verdict {
    bool pass = false;
    double max_abs_diff = 0.0;
    std::vector<std::size_t> constituents_checked;
    std::vector<std::string> failures;
};

/// Retrains every affected member and constituent from scratch on the
/// post-removal data (same seeds and round order) and demands exact equality
/// with `after`; everything else must equal `before`. Throws
/// VerificationUnavailable for a nondeterministic system.
Verdict verify_exactness(const System& before, const UnlearnRequest& request, const System& after);

/// Request stream file: one `seq,target_kind,point_id` row per request, an
/// optional header row starting with "seq". `line_numbers`, when given,
/// receives the 1-based file line of each request.
std::vector<UnlearnRequest> read_request_stream(const std::filesystem::path& path,
                                                std::vector<std::size_t>* line_numbers = nullptr);
void write_request_stream(const std::vector<UnlearnRequest>& requests, const std::filesystem::path& path);

/// Relative weights of request kinds for generate_requests.
struct RequestMix {
    double student = 0.0;
    double teacher = 1.0;
    double simultaneous_aligned = 0.0;
    double simultaneous_misaligned = 0.0;
};

/// Teacher requests pick a uniform member, then a uniform surviving point of
/// its shard; student requests a uniform surviving student point;
/// simultaneous requests a uniform point of the requested alignment present
/// in both plans. No point is drawn twice for the same side.
std::vector<UnlearnRequest> generate_requests(const System& system, std::size_t count, const RequestMix& mix,
                                              std::uint64_t seed, std::uint64_t first_id = 1);

nlohmann::json to_json(const UnlearnReport& report);
nlohmann::json to_json(const CheckpointKey& key);

}  // namespace purge
