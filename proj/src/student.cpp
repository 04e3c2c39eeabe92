#include "purge/student.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <unordered_map>

#include "purge/error.hpp"
#include "purge/rng.hpp"

namespace purge {

namespace {

constexpr std::uint64_t kStudentTag = 0x57d3e47;

/// Replays rounds [first_round, end) of constituent k into `c`.
ReplayResult replay_rounds(const PartitionPlan& plan, const StudentConfig& config, const TrainHyper& hyper,
                           std::size_t epochs, std::size_t k, std::size_t first_round, StudentConstituent& c,
                           const Dataset& data, CheckpointStore& store, CostLedger& ledger, Phase phase,
                           std::uint64_t request) {
    const auto rounds = rounds_of(plan, k);
    if (first_round > rounds.size()) throw InvalidArgument("replay starts past the last round");
    const auto& shard = plan.shard(k);

    std::vector<std::unordered_map<PointId, const Probabilities*>> label_index(shard.chunks.size());
    for (std::size_t l = 0; l < shard.chunks.size(); ++l)
        for (const auto& e : c.chunks.at(l).labels.entries) label_index[l].emplace(e.id, &e.probs);

    std::vector<TrainExample> examples;
    auto add_slice = [&](std::size_t l, std::size_t j) {
        for (auto id : shard.chunks[l].slices[j]) {
            auto it = label_index[l].find(id);
            if (it == label_index[l].end())
                throw InvalidArgument("no soft label cached for point " + std::to_string(id));
            const auto& p = data.at(id);
            examples.push_back({p.features, *it->second, p.label});
        }
    };
    for (std::size_t q = 0; q < first_round; ++q) add_slice(rounds[q].chunk, rounds[q].slice);

    if (config.trace)
        std::erase_if(c.trace, [&](const RoundLoss& r) { return r.round >= first_round; });

    ReplayResult result;
    for (std::size_t q = first_round; q < rounds.size(); ++q) {
        const auto& round = rounds[q];
        add_slice(round.chunk, round.slice);
        if (!examples.empty()) {
            c.state = train(std::move(c.state), examples, epochs, hyper);
            const std::uint64_t steps = epochs * examples.size();
            result.steps += steps;
            ledger.append({request, phase, Role::student, static_cast<std::uint32_t>(k), steps});
            if (config.trace) c.trace.push_back({q, mean_loss(c.state, examples, hyper.hard_label_weight)});
        }
        const auto& prov = c.chunks[round.chunk].provenance;
        std::vector<std::uint32_t> provenance(prov.begin(), prov.end());
        result.written.push_back(store.save(student_key(k, round), c.state, std::move(provenance)).key);
        ++result.rounds;
    }
    return result;
}

ChunkLabels make_chunk_labels(const PartitionPlan& plan, const ConstituentMapping& mapping,
                              const StudentConfig& config, std::size_t k, std::size_t l,
                              const TeacherEnsemble& teachers, const Dataset& data, std::uint64_t& inferences) {
    ChunkLabels out;
    out.provenance = label_teachers(mapping, config.mode, k, l, teachers.size());
    std::vector<const ModelState*> members;
    for (auto t : out.provenance) members.push_back(&teachers.members.at(t));
    std::vector<PointId> ids;
    for (const auto& s : plan.shard(k).chunks.at(l).slices) ids.insert(ids.end(), s.begin(), s.end());
    out.labels = subensemble_soft_labels(members, data, ids, config.hyper.temperature);
    inferences += ids.size() * members.size();
    return out;
}

}  // namespace

std::string to_string(StudentMode mode) {
    switch (mode) {
        case StudentMode::purge: return "purge";
        case StudentMode::naive_sisa: return "naive_sisa";
        case StudentMode::single_teacher: return "single_teacher";
    }
    return "?";
}

StudentMode student_mode_from_string(const std::string& name) {
    for (auto m : {StudentMode::purge, StudentMode::naive_sisa, StudentMode::single_teacher})
        if (to_string(m) == name) return m;
    throw InvalidArgument("unknown student mode '" + name + "'");
}

std::size_t ConstituentMapping::num_teachers() const {
    std::size_t n = 0;
    for (const auto& a : assignment) n += a.size();
    return n;
}

std::vector<std::size_t> ConstituentMapping::chunk_counts() const {
    std::vector<std::size_t> out;
    for (const auto& a : assignment) out.push_back(a.size());
    return out;
}

ConstituentMapping::Owner ConstituentMapping::owner_of(std::size_t teacher) const {
    for (std::size_t k = 0; k < assignment.size(); ++k)
        for (std::size_t l = 0; l < assignment[k].size(); ++l)
            if (assignment[k][l] == teacher) return {k, l};
    throw NotFoundError("teacher " + std::to_string(teacher) + " is not mapped to any student");
}

void ConstituentMapping::validate(std::size_t M) const {
    if (assignment.empty()) throw InvalidArgument("mapping has no students");
    std::vector<int> seen(M, 0);
    for (std::size_t k = 0; k < assignment.size(); ++k) {
        if (assignment[k].empty()) throw InvalidArgument("student " + std::to_string(k) + " has no teachers");
        for (auto t : assignment[k]) {
            if (t >= M) throw InvalidArgument("mapping names teacher " + std::to_string(t) + " of " + std::to_string(M));
            if (seen[t]++) throw InvalidArgument("teacher " + std::to_string(t) + " mapped twice");
        }
    }
    for (std::size_t t = 0; t < M; ++t)
        if (!seen[t]) throw InvalidArgument("teacher " + std::to_string(t) + " is not mapped");
}

ConstituentMapping build_mapping(std::size_t M, std::size_t N, const std::optional<std::vector<std::size_t>>& sizes) {
    if (N == 0) throw InvalidArgument("need at least one student");
    std::vector<std::size_t> counts;
    if (sizes) {
        if (sizes->size() != N) throw InvalidArgument("mapping sizes must list one entry per student");
        if (std::accumulate(sizes->begin(), sizes->end(), std::size_t{0}) != M)
            throw InvalidArgument("mapping sizes must sum to M = " + std::to_string(M));
        if (std::find(sizes->begin(), sizes->end(), std::size_t{0}) != sizes->end())
            throw InvalidArgument("every student needs at least one teacher");
        counts = *sizes;
    } else {
        if (N > M)
            throw InvalidArgument("N = " + std::to_string(N) + " students cannot share M = " + std::to_string(M) +
                                  " teachers");
        counts = even_split(M, N);
    }
    ConstituentMapping mapping;
    std::size_t next = 0;
    for (auto c : counts) {
        auto& group = mapping.assignment.emplace_back();
        for (std::size_t i = 0; i < c; ++i) group.push_back(next++);
    }
    return mapping;
}

std::vector<std::size_t> label_teachers(const ConstituentMapping& mapping, StudentMode mode, std::size_t k,
                                        std::size_t l, std::size_t M) {
    const auto& group = mapping.assignment.at(k);
    if (l >= group.size()) throw InvalidArgument("chunk index beyond the student's teacher group");
    switch (mode) {
        case StudentMode::purge: return {group.begin(), group.begin() + static_cast<std::ptrdiff_t>(l + 1)};
        case StudentMode::single_teacher: return {group[l]};
        case StudentMode::naive_sisa: {
            std::vector<std::size_t> all(M);
            std::iota(all.begin(), all.end(), std::size_t{0});
            return all;
        }
    }
    return {};
}

void StudentConfig::validate() const {
    arch.validate();
    hyper.validate();
    budget.validate();
}

TrainHyper StudentNetwork::constituent_hyper(std::size_t k) const {
    TrainHyper h = config.hyper;
    h.seed = derive_seed(config.hyper.seed, {kStudentTag, k});
    return h;
}

ModelState StudentNetwork::initial_state(std::size_t k) const {
    return init_model(config.arch, derive_seed(config.seed, {kStudentTag, 0x1, k}));
}

std::vector<Round> rounds_of(const PartitionPlan& plan, std::size_t k) {
    std::vector<Round> out;
    for (std::size_t l = 0; l < plan.num_chunks(k); ++l)
        for (std::size_t j = 0; j < plan.num_slices(k, l); ++j) out.push_back({l, j});
    return out;
}

std::size_t first_round_of_chunk(const PartitionPlan& plan, std::size_t k, std::size_t l) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < l; ++i) n += plan.num_slices(k, i);
    return n;
}

CheckpointKey student_key(std::size_t k, const Round& round) {
    return {Role::student, static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(round.chunk + 1),
            static_cast<std::uint32_t>(round.slice + 1)};
}

std::vector<std::vector<std::size_t>> uniform_slices(const ConstituentMapping& mapping, std::size_t r) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& group : mapping.assignment) out.emplace_back(group.size(), r);
    return out;
}

PartitionPlan make_student_plan(const Dataset& data, const ConstituentMapping& mapping,
                                const std::vector<std::vector<std::size_t>>& slices_per_chunk, std::uint64_t seed) {
    const auto chunks = mapping.chunk_counts();
    return make_partition(data, mapping.num_students(), chunks, slices_per_chunk,
                          derive_seed(seed, {kStudentTag}));
}

StudentConstituent train_student_constituent(std::size_t k, const StudentNetwork& network,
                                             const TeacherEnsemble& teachers, const Dataset& data,
                                             CheckpointStore& store, CostLedger& ledger) {
    if (network.plan.num_chunks(k) != network.mapping.chunks(k))
        throw InvalidArgument("student " + std::to_string(k) + ": plan has " +
                              std::to_string(network.plan.num_chunks(k)) + " chunks but " +
                              std::to_string(network.mapping.chunks(k)) + " mapped teachers");
    StudentConstituent c;
    c.state = network.initial_state(k);
    std::uint64_t inferences = 0;
    for (std::size_t l = 0; l < network.plan.num_chunks(k); ++l)
        c.chunks.push_back(make_chunk_labels(network.plan, network.mapping, network.config, k, l, teachers, data,
                                             inferences));
    ledger.append({0, Phase::relabel_inference, Role::student, static_cast<std::uint32_t>(k), inferences});
    replay_rounds(network.plan, network.config, network.constituent_hyper(k), network.epochs_per_slice(k), k, 0, c,
                  data, store, ledger, Phase::initial_train, 0);
    return c;
}

StudentNetwork train_student_network(const Dataset& data, ConstituentMapping mapping,
                                     const TeacherEnsemble& teachers, const StudentConfig& config,
                                     const std::vector<std::vector<std::size_t>>& slices_per_chunk,
                                     CheckpointStore& store, CostLedger& ledger) {
    config.validate();
    mapping.validate(teachers.size());
    if (data.feature_dim() != config.arch.feature_dim)
        throw DimensionError("student arch expects " + std::to_string(config.arch.feature_dim) +
                             " features, dataset has " + std::to_string(data.feature_dim()));
    if (teachers.config.arch.num_classes != config.arch.num_classes)
        throw DimensionError("teacher and student class counts differ");

    StudentNetwork net;
    net.mapping = std::move(mapping);
    net.config = config;
    net.plan = make_student_plan(data, net.mapping, slices_per_chunk, config.seed);

    const std::size_t N = net.mapping.num_students();
    std::vector<std::pair<StudentConstituent, CostLedger>> runs(N);
    auto job = [&](std::size_t k) {
        CostLedger local;
        auto c = train_student_constituent(k, net, teachers, data, store, local);
        return std::pair{std::move(c), std::move(local)};
    };
    if (config.parallel) {
        std::vector<std::future<std::pair<StudentConstituent, CostLedger>>> pending;
        for (std::size_t k = 0; k < N; ++k) pending.push_back(std::async(std::launch::async, job, k));
        for (std::size_t k = 0; k < N; ++k) runs[k] = pending[k].get();
    } else {
        for (std::size_t k = 0; k < N; ++k) runs[k] = job(k);
    }
    for (auto& [c, local] : runs) {
        net.constituents.push_back(std::move(c));
        ledger.append(local);
    }
    return net;
}

std::uint64_t relabel_chunk(StudentNetwork& network, std::size_t k, std::size_t l, const TeacherEnsemble& teachers,
                            const Dataset& data) {
    std::uint64_t inferences = 0;
    network.constituents.at(k).chunks.at(l) =
        make_chunk_labels(network.plan, network.mapping, network.config, k, l, teachers, data, inferences);
    return inferences;
}

ReplayResult replay_student_rounds(StudentNetwork& network, std::size_t k, std::size_t first_round,
                                   ModelState start, const Dataset& data, CheckpointStore& store,
                                   CostLedger& ledger, Phase phase, std::uint64_t request) {
    auto& c = network.constituents.at(k);
    c.state = std::move(start);
    return replay_rounds(network.plan, network.config, network.constituent_hyper(k), network.epochs_per_slice(k), k,
                         first_round, c, data, store, ledger, phase, request);
}

RevertPoint revert_point(const StudentNetwork& network, std::size_t k, std::size_t round,
                         const CheckpointStore& store) {
    if (round == 0) return {network.initial_state(k), {Role::student, static_cast<std::uint32_t>(k), 0, 0, 0}};
    const auto rounds = rounds_of(network.plan, k);
    auto rec = store.load(student_key(k, rounds.at(round - 1)));
    return {std::move(rec.state), rec.key};
}

Probabilities predict_student(const StudentNetwork& network, std::span<const double> features) {
    if (network.constituents.empty()) throw InvalidArgument("student network is untrained");
    std::vector<Probabilities> preds;
    preds.reserve(network.constituents.size());
    for (const auto& c : network.constituents) preds.push_back(predict(c.state, features));
    return aggregate(preds);
}

double evaluate_accuracy(const std::function<Probabilities(std::span<const double>)>& predictor,
                         const Dataset& data) {
    if (data.empty()) throw InvalidArgument("accuracy of an empty dataset");
    std::size_t correct = 0;
    for (const auto& p : data.points())
        if (argmax(predictor(p.features)) == p.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate_accuracy(const StudentNetwork& network, const Dataset& data) {
    return evaluate_accuracy([&](std::span<const double> x) { return predict_student(network, x); }, data);
}

double evaluate_accuracy(const TeacherEnsemble& teachers, const Dataset& data) {
    return evaluate_accuracy([&](std::span<const double> x) { return predict_ensemble(teachers, x); }, data);
}

const std::vector<RoundLoss>& loss_trace(const StudentNetwork& network, std::size_t k) {
    if (!network.config.trace) throw InvalidArgument("network was trained with tracing disabled");
    return network.constituents.at(k).trace;
}

double max_loss_jump(std::span<const RoundLoss> trace) {
    double best = 0.0;
    for (std::size_t i = 1; i < trace.size(); ++i)
        best = std::max(best, std::abs(trace[i].mean_loss - trace[i - 1].mean_loss));
    return best;
}

}  // namespace purge
