#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "purge/checkpoint.hpp"
#include "purge/data.hpp"
#include "purge/ledger.hpp"
#include "purge/model.hpp"
#include "purge/teacher.hpp"

namespace purge {

enum class StudentMode { purge, naive_sisa, single_teacher };

std::string to_string(StudentMode mode);
StudentMode student_mode_from_string(const std::string& name);

/// Partition of the M teachers into N ordered groups; student k distils from
/// assignment[k] and has one chunk per entry.
struct ConstituentMapping {
    std::vector<std::vector<std::size_t>> assignment;

    std::size_t num_students() const noexcept { return assignment.size(); }
    std::size_t num_teachers() const;
    std::size_t chunks(std::size_t k) const { return assignment.at(k).size(); }
    std::vector<std::size_t> chunk_counts() const;

    struct Owner {
        std::size_t student = 0;
        std::size_t position = 0;  // 0-based chunk index l
    };
    /// Which student, and which chunk position, teacher m is mapped to.
    Owner owner_of(std::size_t teacher) const;

    /// Throws InvalidArgument unless the lists partition {0..M-1}.
    void validate(std::size_t M) const;

    friend bool operator==(const ConstituentMapping&, const ConstituentMapping&) = default;
};

/// Teachers assigned in index order. Without `sizes` the groups are as even
/// as possible (larger groups first) and N <= M is required.
ConstituentMapping build_mapping(std::size_t M, std::size_t N,
                                 const std::optional<std::vector<std::size_t>>& sizes = std::nullopt);

/// Teachers whose outputs label chunk l of student k under `mode`.
std::vector<std::size_t> label_teachers(const ConstituentMapping& mapping, StudentMode mode, std::size_t k,
                                        std::size_t l, std::size_t M);

struct StudentConfig {
    ModelArch arch;
    TrainHyper hyper;
    TrainBudget budget;
    StudentMode mode = StudentMode::purge;
    std::uint64_t seed = 0;  // partition and initialisation
    bool trace = false;
    bool parallel = false;

    void validate() const;
};

struct ChunkLabels {
    SoftLabelChunk labels;
    std::vector<std::size_t> provenance;

    friend bool operator==(const ChunkLabels&, const ChunkLabels&) = default;
};

struct RoundLoss {
    std::size_t round = 0;  // 0-based position in the constituent's round sequence
    double mean_loss = 0.0;

    friend bool operator==(const RoundLoss&, const RoundLoss&) = default;
};

struct StudentConstituent {
    ModelState state;
    std::vector<ChunkLabels> chunks;
    std::vector<RoundLoss> trace;

    friend bool operator==(const StudentConstituent&, const StudentConstituent&) = default;
};

struct StudentNetwork {
    std::vector<StudentConstituent> constituents;
    ConstituentMapping mapping;
    PartitionPlan plan;
    StudentConfig config;

    std::size_t epochs_per_slice(std::size_t k) const {
        return config.budget.epochs_per_slice(plan.total_slices(k));
    }
    TrainHyper constituent_hyper(std::size_t k) const;
    ModelState initial_state(std::size_t k) const;
};

/// A training round: slice `slice` of chunk `chunk` (both 0-based).
struct Round {
    std::size_t chunk = 0;
    std::size_t slice = 0;

    friend bool operator==(const Round&, const Round&) = default;
};

/// Rounds of shard k in training order.
std::vector<Round> rounds_of(const PartitionPlan& plan, std::size_t k);
/// Index of the first round of chunk l.
std::size_t first_round_of_chunk(const PartitionPlan& plan, std::size_t k, std::size_t l);
/// Checkpoint key written after `round` of constituent k.
CheckpointKey student_key(std::size_t k, const Round& round);

/// Student plan: N shards, c_k = mapping.chunks(k) chunks, `slices_per_chunk`
/// slices per chunk.
PartitionPlan make_student_plan(const Dataset& data, const ConstituentMapping& mapping,
                                const std::vector<std::vector<std::size_t>>& slices_per_chunk, std::uint64_t seed);
std::vector<std::vector<std::size_t>> uniform_slices(const ConstituentMapping& mapping, std::size_t r);

/// Trains constituent k of `network` (whose plan, mapping and config are set)
/// from its initial state: per chunk generate labels, then one round per
/// slice over the cumulative data, checkpointing after each round.
StudentConstituent train_student_constituent(std::size_t k, const StudentNetwork& network,
                                             const TeacherEnsemble& teachers, const Dataset& data,
                                             CheckpointStore& store, CostLedger& ledger);

StudentNetwork train_student_network(const Dataset& data, ConstituentMapping mapping,
                                     const TeacherEnsemble& teachers, const StudentConfig& config,
                                     const std::vector<std::vector<std::size_t>>& slices_per_chunk,
                                     CheckpointStore& store, CostLedger& ledger);

/// Regenerates the labels of chunk l of constituent k from the current
/// teachers. Returns the number of single-model inferences performed.
std::uint64_t relabel_chunk(StudentNetwork& network, std::size_t k, std::size_t l, const TeacherEnsemble& teachers,
                            const Dataset& data);

struct ReplayResult {
    std::vector<CheckpointKey> written;
    std::uint64_t steps = 0;
    std::size_t rounds = 0;
};

/// Continues constituent k from `start` at round `first_round`, replaying
/// every later round with the cached labels and current plan.
ReplayResult replay_student_rounds(StudentNetwork& network, std::size_t k, std::size_t first_round,
                                   ModelState start, const Dataset& data, CheckpointStore& store,
                                   CostLedger& ledger, Phase phase, std::uint64_t request);

/// State before `round` of constituent k: the checkpoint of the previous
/// round, or the initial state for round 0.
struct RevertPoint {
    ModelState state;
    CheckpointKey key;  // slice 0 / chunk 0 denotes the initial state
};
RevertPoint revert_point(const StudentNetwork& network, std::size_t k, std::size_t round,
                         const CheckpointStore& store);

Probabilities predict_student(const StudentNetwork& network, std::span<const double> features);

/// Fraction of points whose argmax prediction (lowest index on ties) equals
/// the label. Throws InvalidArgument on an empty dataset.
double evaluate_accuracy(const std::function<Probabilities(std::span<const double>)>& predictor,
                         const Dataset& data);
double evaluate_accuracy(const StudentNetwork& network, const Dataset& data);
double evaluate_accuracy(const TeacherEnsemble& teachers, const Dataset& data);

/// Per-round mean loss of constituent k. Throws InvalidArgument when the
/// network was trained without tracing.
const std::vector<RoundLoss>& loss_trace(const StudentNetwork& network, std::size_t k);

/// max |loss_r - loss_{r-1}| over consecutive rounds; 0 for fewer than two.
double max_loss_jump(std::span<const RoundLoss> trace);

}  // namespace purge
