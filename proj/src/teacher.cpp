#include "purge/teacher.hpp"

#include <future>

#include "purge/error.hpp"
#include "purge/rng.hpp"

namespace purge {

namespace {

constexpr std::uint64_t kTeacherTag = 0x7eac4e5;

/// One-hot targets for hard-label training, indexed by class.
std::vector<std::vector<double>> one_hot_table(std::size_t num_classes) {
    std::vector<std::vector<double>> table(num_classes, std::vector<double>(num_classes, 0.0));
    for (std::size_t c = 0; c < num_classes; ++c) table[c][c] = 1.0;
    return table;
}

struct MemberRun {
    ModelState state;
    CostLedger ledger;
    std::vector<CheckpointKey> written;
    std::uint64_t steps = 0;
};

/// Rounds first_slice..R_T-1 of member m: round j trains on slices 0..j.
MemberRun run_member_rounds(const TeacherEnsemble& ens, const Dataset& data, std::size_t m, std::size_t first_slice,
                            ModelState state, CheckpointStore& store, Phase phase, std::uint64_t request) {
    const auto& chunk = ens.plan.shard(m).chunks.at(0);
    const auto table = one_hot_table(ens.config.arch.num_classes);
    const auto hyper = ens.member_hyper(m);
    const auto epochs = ens.epochs_per_slice();

    MemberRun run{std::move(state), {}, {}, 0};
    std::vector<TrainExample> examples;
    for (std::size_t j = 0; j < first_slice; ++j)
        for (auto id : chunk.slices[j]) {
            const auto& p = data.at(id);
            examples.push_back({p.features, table[p.label], p.label});
        }
    for (std::size_t j = first_slice; j < chunk.slices.size(); ++j) {
        for (auto id : chunk.slices[j]) {
            const auto& p = data.at(id);
            examples.push_back({p.features, table[p.label], p.label});
        }
        if (!examples.empty()) {
            run.state = train(std::move(run.state), examples, epochs, hyper);
            const std::uint64_t steps = epochs * examples.size();
            run.steps += steps;
            run.ledger.append({request, phase, Role::teacher, static_cast<std::uint32_t>(m), steps});
        }
        const auto receipt = store.save(
            {Role::teacher, static_cast<std::uint32_t>(m), 1, static_cast<std::uint32_t>(j + 1)}, run.state);
        run.written.push_back(receipt.key);
    }
    return run;
}

}  // namespace

std::size_t TrainBudget::epochs_per_slice(std::size_t slices) const {
    validate();
    if (slices == 0) throw InvalidArgument("a constituent needs at least one slice");
    const std::uint64_t num = 2 * e_prime;
    const std::uint64_t den = slices + 1;
    return static_cast<std::size_t>((num + den - 1) / den);
}

void TrainBudget::validate() const {
    if (e_prime == 0) throw InvalidArgument("e_prime must be >= 1");
}

void TeacherConfig::validate() const {
    if (members == 0) throw InvalidArgument("teacher ensemble needs M >= 1");
    if (slices_per_shard == 0) throw InvalidArgument("teacher shards need R_T >= 1");
    arch.validate();
    hyper.validate();
    budget.validate();
}

TrainHyper TeacherEnsemble::member_hyper(std::size_t m) const {
    TrainHyper h = config.hyper;
    h.seed = derive_seed(config.hyper.seed, {kTeacherTag, m});
    return h;
}

ModelState TeacherEnsemble::initial_state(std::size_t m) const {
    return init_model(config.arch, derive_seed(config.seed, {kTeacherTag, 0x1, m}));
}

TeacherEnsemble train_teacher_ensemble(const Dataset& data, const TeacherConfig& config, CheckpointStore& store,
                                       CostLedger& ledger) {
    config.validate();
    if (data.feature_dim() != config.arch.feature_dim)
        throw DimensionError("teacher arch expects " + std::to_string(config.arch.feature_dim) +
                             " features, dataset has " + std::to_string(data.feature_dim()));
    if (data.num_classes() > config.arch.num_classes)
        throw DimensionError("dataset has more classes than the teacher arch");

    TeacherEnsemble ens;
    ens.config = config;
    const std::vector<std::size_t> chunks(config.members, 1);
    const std::vector<std::vector<std::size_t>> slices(config.members,
                                                       std::vector<std::size_t>{config.slices_per_shard});
    ens.plan = make_partition(data, config.members, chunks, slices, derive_seed(config.seed, {kTeacherTag}));

    std::vector<MemberRun> runs(config.members);
    auto job = [&](std::size_t m) {
        return run_member_rounds(ens, data, m, 0, ens.initial_state(m), store, Phase::initial_train, 0);
    };
    if (config.parallel) {
        std::vector<std::future<MemberRun>> pending;
        for (std::size_t m = 0; m < config.members; ++m) pending.push_back(std::async(std::launch::async, job, m));
        for (std::size_t m = 0; m < config.members; ++m) runs[m] = pending[m].get();
    } else {
        for (std::size_t m = 0; m < config.members; ++m) runs[m] = job(m);
    }
    for (auto& run : runs) {
        ens.members.push_back(std::move(run.state));
        ledger.append(run.ledger);
    }
    return ens;
}

TeacherUnlearnResult teacher_unlearn(TeacherEnsemble& ens, const Dataset& data, PointId point,
                                     CheckpointStore& store, CostLedger& ledger, std::uint64_t request) {
    const auto at = ens.plan.locate(point);
    TeacherUnlearnResult result;
    result.member = at.shard;
    result.slice = at.slice;

    const auto m = static_cast<std::uint32_t>(at.shard);
    ModelState start;
    if (at.slice == 0) {
        start = ens.initial_state(at.shard);
        result.reverted_to_init = true;
        result.reverted_to = {Role::teacher, m, 1, 0, 0};
    } else {
        const auto rec = store.load({Role::teacher, m, 1, static_cast<std::uint32_t>(at.slice)});
        start = rec.state;
        result.reverted_to = rec.key;
    }
    ens.plan.remove(point);

    auto run = run_member_rounds(ens, data, at.shard, at.slice, std::move(start), store, Phase::teacher_retrain,
                                 request);
    ens.members[at.shard] = std::move(run.state);
    ledger.append(run.ledger);
    result.written = std::move(run.written);
    result.steps = run.steps;
    return result;
}

Probabilities predict_ensemble(const TeacherEnsemble& ens, std::span<const double> features) {
    if (ens.members.empty()) throw InvalidArgument("teacher ensemble is untrained");
    std::vector<Probabilities> preds;
    preds.reserve(ens.members.size());
    for (const auto& m : ens.members) preds.push_back(predict(m, features));
    return aggregate(preds);
}

}  // namespace purge
