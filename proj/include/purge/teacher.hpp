#pragma once

#include <cstdint>
#include <vector>

#include "purge/checkpoint.hpp"
#include "purge/data.hpp"
#include "purge/ledger.hpp"
#include "purge/model.hpp"

namespace purge {

/// Initial-training effort expressed as equivalent full-dataset epochs e'.
struct TrainBudget {
    std::uint64_t e_prime = 1;

    /// ceil(2e'/(slices+1)), the per-round epoch count of a constituent whose
    /// shard has `slices` slices in total.
    std::size_t epochs_per_slice(std::size_t slices) const;
    void validate() const;
};

struct TeacherConfig {
    std::size_t members = 1;           // M
    std::size_t slices_per_shard = 1;  // R_T
    ModelArch arch;
    TrainHyper hyper;
    TrainBudget budget;
    std::uint64_t seed = 0;  // partition and initialisation
    bool parallel = false;

    void validate() const;
};

/// SISA ensemble: member m is trained only on shard m of `plan`
/// (one chunk, R_T slices), with a checkpoint after every slice.
struct TeacherEnsemble {
    std::vector<ModelState> members;
    PartitionPlan plan;
    TeacherConfig config;

    std::size_t size() const noexcept { return members.size(); }
    std::size_t epochs_per_slice() const { return config.budget.epochs_per_slice(config.slices_per_shard); }
    /// Per-member hyper-parameters; the seed is specialised per member.
    TrainHyper member_hyper(std::size_t m) const;
    ModelState initial_state(std::size_t m) const;
};

TeacherEnsemble train_teacher_ensemble(const Dataset& data, const TeacherConfig& config, CheckpointStore& store,
                                       CostLedger& ledger);

struct TeacherUnlearnResult {
    std::size_t member = 0;
    std::size_t slice = 0;  // 0-based slice that held the point
    CheckpointKey reverted_to;
    bool reverted_to_init = false;
    std::vector<CheckpointKey> written;
    std::uint64_t steps = 0;
};

/// Removes `point` from its member's shard, reverts the member to the
/// checkpoint before the affected slice (the initial state for slice 0) and
/// replays the remaining rounds. Other members are untouched.
TeacherUnlearnResult teacher_unlearn(TeacherEnsemble& ensemble, const Dataset& data, PointId point,
                                     CheckpointStore& store, CostLedger& ledger, std::uint64_t request);

Probabilities predict_ensemble(const TeacherEnsemble& ensemble, std::span<const double> features);

}  // namespace purge
