#include "purge/unlearning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "purge/error.hpp"
#include "purge/rng.hpp"

namespace purge {

namespace {

/// Replay plan for one student constituent.
struct StudentWork {
    std::size_t first_round = 0;
    std::optional<std::size_t> relabel_from;  // first chunk to relabel
};

void merge_work(std::map<std::size_t, StudentWork>& work, std::size_t k, StudentWork w) {
    auto [it, inserted] = work.emplace(k, w);
    if (inserted) return;
    auto& cur = it->second;
    cur.first_round = std::min(cur.first_round, w.first_round);
    if (w.relabel_from)
        cur.relabel_from = cur.relabel_from ? std::min(*cur.relabel_from, *w.relabel_from) : *w.relabel_from;
}

/// Student work implied by an update of teacher member m.
void add_teacher_work(const System& sys, std::size_t m, std::map<std::size_t, StudentWork>& work) {
    const auto& net = sys.students;
    if (net.config.mode == StudentMode::naive_sisa) {
        for (std::size_t k = 0; k < net.mapping.num_students(); ++k) merge_work(work, k, {0, 0});
        return;
    }
    const auto owner = net.mapping.owner_of(m);
    merge_work(work, owner.student,
               {first_round_of_chunk(net.plan, owner.student, owner.position), owner.position});
}

void remove_student_point(System& sys, PointId point, const Location& at) {
    sys.students.plan.remove(point);
    sys.students.constituents.at(at.shard).chunks.at(at.chunk).labels.erase(point);
}

void run_student_work(System& sys, CheckpointStore& store, const std::map<std::size_t, StudentWork>& work,
                      UnlearnReport& report) {
    auto& net = sys.students;
    for (const auto& [k, w] : work) {
        report.affected_student_constituents.push_back(k);
        if (w.relabel_from) {
            std::uint64_t inferences = 0;
            for (std::size_t l = *w.relabel_from; l < net.plan.num_chunks(k); ++l) {
                inferences += relabel_chunk(net, k, l, sys.teachers, sys.student_data);
                report.chunks_relabeled.emplace_back(k, l);
            }
            report.relabel_inferences += inferences;
            sys.ledger.append({report.request_id, Phase::relabel_inference, Role::student,
                               static_cast<std::uint32_t>(k), inferences});
        }
        auto revert = revert_point(net, k, w.first_round, store);
        report.reverted_to.push_back(revert.key);
        const auto replay = replay_student_rounds(net, k, w.first_round, std::move(revert.state), sys.student_data,
                                                  store, sys.ledger, Phase::student_retrain, report.request_id);
        report.student_steps += replay.steps;
        report.rounds_retrained += replay.rounds;
    }
}

UnlearnReport start_report(std::uint64_t id, TargetKind kind, PointId point) {
    UnlearnReport r;
    r.request_id = id;
    r.target = kind;
    r.point = point;
    return r;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Scratch retraining on top of the model layer alone.

ModelState scratch_teacher(const TeacherEnsemble& ens, const PartitionPlan& plan, const Dataset& data,
                           std::size_t m) {
    std::vector<std::vector<double>> onehot(ens.config.arch.num_classes,
                                            std::vector<double>(ens.config.arch.num_classes, 0.0));
    for (std::size_t c = 0; c < onehot.size(); ++c) onehot[c][c] = 1.0;
    const auto hyper = ens.member_hyper(m);
    const auto& slices = plan.shard(m).chunks.at(0).slices;
    const auto epochs = ens.config.budget.epochs_per_slice(slices.size());

    ModelState state = ens.initial_state(m);
    std::vector<TrainExample> seen;
    for (const auto& slice : slices) {
        for (auto id : slice) {
            const auto& p = data.at(id);
            seen.push_back({p.features, onehot[p.label], p.label});
        }
        if (!seen.empty()) state = train(std::move(state), seen, epochs, hyper);
    }
    return state;
}

struct ScratchStudent {
    ModelState state;
    std::vector<SoftLabelChunk> labels;
};

ScratchStudent scratch_student(const StudentNetwork& net, const PartitionPlan& plan,
                               const std::vector<ModelState>& teachers, const Dataset& data, std::size_t k) {
    const auto& shard = plan.shard(k);
    const auto hyper = net.constituent_hyper(k);
    const auto epochs = net.config.budget.epochs_per_slice(plan.total_slices(k));

    ScratchStudent out{net.initial_state(k), {}};
    std::vector<TrainExample> seen;
    for (std::size_t l = 0; l < shard.chunks.size(); ++l) {
        std::vector<const ModelState*> members;
        for (auto t : label_teachers(net.mapping, net.config.mode, k, l, teachers.size()))
            members.push_back(&teachers[t]);
        std::vector<PointId> ids;
        for (const auto& s : shard.chunks[l].slices) ids.insert(ids.end(), s.begin(), s.end());
        out.labels.push_back(subensemble_soft_labels(members, data, ids, net.config.hyper.temperature));
    }
    for (std::size_t l = 0; l < shard.chunks.size(); ++l) {
        std::size_t pos = 0;
        for (const auto& slice : shard.chunks[l].slices) {
            for (auto id : slice) {
                const auto& p = data.at(id);
                seen.push_back({p.features, out.labels[l].entries[pos++].probs, p.label});
            }
            if (!seen.empty()) out.state = train(std::move(out.state), seen, epochs, hyper);
        }
    }
    return out;
}

double max_abs_diff(const ModelState& a, const ModelState& b) {
    if (a.params.size() != b.params.size()) return INFINITY;
    double d = 0.0;
    for (std::size_t i = 0; i < a.params.size(); ++i) d = std::max(d, std::abs(a.params[i] - b.params[i]));
    return d;
}

}  // namespace

std::string to_string(TargetKind kind) {
    switch (kind) {
        case TargetKind::student: return "student";
        case TargetKind::teacher: return "teacher";
        case TargetKind::simultaneous: return "simultaneous";
    }
    return "?";
}

TargetKind target_kind_from_string(const std::string& name) {
    for (auto k : {TargetKind::student, TargetKind::teacher, TargetKind::simultaneous})
        if (to_string(k) == name) return k;
    throw ParseError("unknown target kind '" + name + "'");
}

System build_system(Dataset teacher_data, Dataset student_data, const TeacherConfig& teacher_config,
                    ConstituentMapping mapping, const StudentConfig& student_config,
                    const std::vector<std::vector<std::size_t>>& slices_per_chunk, CheckpointStore& store) {
    System sys;
    sys.teacher_data = std::move(teacher_data);
    sys.student_data = std::move(student_data);
    sys.teachers = train_teacher_ensemble(sys.teacher_data, teacher_config, store, sys.ledger);
    sys.students = train_student_network(sys.student_data, std::move(mapping), sys.teachers, student_config,
                                         slices_per_chunk, store, sys.ledger);
    return sys;
}

UnlearnReport unlearn_student(System& sys, CheckpointStore& store, PointId point, std::uint64_t request_id) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto at = sys.students.plan.locate(point);
    auto report = start_report(request_id, TargetKind::student, point);

    remove_student_point(sys, point, at);
    std::map<std::size_t, StudentWork> work;
    merge_work(work, at.shard, {first_round_of_chunk(sys.students.plan, at.shard, at.chunk) + at.slice, {}});
    run_student_work(sys, store, work, report);
    report.wall_time = seconds_since(t0);
    return report;
}

UnlearnReport unlearn_teacher(System& sys, CheckpointStore& store, PointId point, std::uint64_t request_id) {
    const auto t0 = std::chrono::steady_clock::now();
    sys.teachers.plan.locate(point);
    auto report = start_report(request_id, TargetKind::teacher, point);

    const auto t = teacher_unlearn(sys.teachers, sys.teacher_data, point, store, sys.ledger, request_id);
    report.affected_teacher_members.push_back(t.member);
    report.teacher_steps = t.steps;
    report.reverted_to.push_back(t.reverted_to);

    std::map<std::size_t, StudentWork> work;
    add_teacher_work(sys, t.member, work);
    run_student_work(sys, store, work, report);
    report.wall_time = seconds_since(t0);
    return report;
}

UnlearnReport unlearn_simultaneous(System& sys, CheckpointStore& store, PointId point, std::uint64_t request_id) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!sys.students.plan.contains(point))
        throw NotFoundError("point " + std::to_string(point) + " not found on the student side");
    if (!sys.teachers.plan.contains(point))
        throw NotFoundError("point " + std::to_string(point) + " not found on the teacher side");
    auto report = start_report(request_id, TargetKind::simultaneous, point);

    const auto at = sys.students.plan.locate(point);
    const auto t = teacher_unlearn(sys.teachers, sys.teacher_data, point, store, sys.ledger, request_id);
    report.affected_teacher_members.push_back(t.member);
    report.teacher_steps = t.steps;
    report.reverted_to.push_back(t.reverted_to);

    if (sys.students.config.mode != StudentMode::naive_sisa) {
        const auto owner = sys.students.mapping.owner_of(t.member);
        report.aligned = owner.student == at.shard && owner.position == at.chunk;
    }

    remove_student_point(sys, point, at);
    std::map<std::size_t, StudentWork> work;
    merge_work(work, at.shard, {first_round_of_chunk(sys.students.plan, at.shard, at.chunk) + at.slice, {}});
    add_teacher_work(sys, t.member, work);
    run_student_work(sys, store, work, report);
    report.wall_time = seconds_since(t0);
    return report;
}

UnlearnReport apply_request(System& sys, CheckpointStore& store, const UnlearnRequest& request) {
    if (request.request_id <= sys.last_request)
        throw InvalidArgument("request id " + std::to_string(request.request_id) + " does not follow " +
                              std::to_string(sys.last_request));
    UnlearnReport report;
    switch (request.target) {
        case TargetKind::student: report = unlearn_student(sys, store, request.point, request.request_id); break;
        case TargetKind::teacher: report = unlearn_teacher(sys, store, request.point, request.request_id); break;
        case TargetKind::simultaneous:
            report = unlearn_simultaneous(sys, store, request.point, request.request_id);
            break;
    }
    sys.last_request = request.request_id;
    return report;
}

Verdict verify_exactness(const System& before, const UnlearnRequest& request, const System& after) {
    if (!before.deterministic || !after.deterministic)
        throw VerificationUnavailable("system was trained without a fixed seed; exact replay is not defined");

    Verdict v;
    auto fail = [&](std::string msg) { v.failures.push_back(std::move(msg)); };

    const bool teacher_side = request.target != TargetKind::student;
    const bool student_side = request.target != TargetKind::teacher;

    PartitionPlan tplan = before.teachers.plan;
    PartitionPlan splan = before.students.plan;
    std::optional<std::size_t> member;
    std::optional<std::size_t> student_owner;
    try {
        if (teacher_side) {
            member = tplan.locate(request.point).shard;
            tplan.remove(request.point);
        }
        if (student_side) {
            student_owner = splan.locate(request.point).shard;
            splan.remove(request.point);
        }
    } catch (const NotFoundError& e) {
        fail(std::string("request does not resolve against the prior system: ") + e.what());
        return v;
    }
    if (!(after.teachers.plan == tplan)) fail("teacher plan differs from the expected post-removal plan");
    if (!(after.students.plan == splan)) fail("student plan differs from the expected post-removal plan");

    std::vector<ModelState> teachers = before.teachers.members;
    if (member) teachers[*member] = scratch_teacher(before.teachers, tplan, before.teacher_data, *member);
    for (std::size_t m = 0; m < teachers.size(); ++m) {
        const double d = max_abs_diff(teachers[m], after.teachers.members.at(m));
        v.max_abs_diff = std::max(v.max_abs_diff, d);
        if (!(teachers[m] == after.teachers.members[m]))
            fail("teacher " + std::to_string(m) + " differs from its expected state (max |diff| " +
                 std::to_string(d) + ")");
    }

    std::set<std::size_t> affected;
    if (student_owner) affected.insert(*student_owner);
    if (member) {
        if (before.students.config.mode == StudentMode::naive_sisa) {
            for (std::size_t k = 0; k < before.students.constituents.size(); ++k) affected.insert(k);
        } else {
            affected.insert(before.students.mapping.owner_of(*member).student);
        }
    }

    for (std::size_t k = 0; k < before.students.constituents.size(); ++k) {
        const auto& got = after.students.constituents.at(k);
        if (!affected.contains(k)) {
            const auto& prior = before.students.constituents[k];
            if (!(got.state == prior.state) || !(got.chunks == prior.chunks))
                fail("untargeted student " + std::to_string(k) + " changed");
            continue;
        }
        v.constituents_checked.push_back(k);
        const auto expect = scratch_student(before.students, splan, teachers, before.student_data, k);
        const double d = max_abs_diff(expect.state, got.state);
        v.max_abs_diff = std::max(v.max_abs_diff, d);
        if (!(expect.state == got.state))
            fail("student " + std::to_string(k) + " differs from scratch retraining (max |diff| " +
                 std::to_string(d) + ")");
        for (std::size_t l = 0; l < expect.labels.size(); ++l)
            if (!(expect.labels[l] == got.chunks.at(l).labels))
                fail("student " + std::to_string(k) + " chunk " + std::to_string(l) + " labels differ");
    }
    v.pass = v.failures.empty();
    return v;
}

std::vector<UnlearnRequest> read_request_stream(const std::filesystem::path& path,
                                                std::vector<std::size_t>* line_numbers) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<UnlearnRequest> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("seq", 0) == 0) continue;
        std::istringstream row(line);
        std::string seq, kind, point, extra;
        const auto where = path.string() + ":" + std::to_string(line_no);
        if (!std::getline(row, seq, ',') || !std::getline(row, kind, ',') || !std::getline(row, point, ',') ||
            std::getline(row, extra))
            throw ParseError(where + ": expected seq,target_kind,point_id");
        try {
            std::size_t used = 0;
            UnlearnRequest r;
            r.request_id = std::stoull(seq, &used);
            if (used != seq.size()) throw ParseError("bad seq");
            r.target = target_kind_from_string(kind);
            r.point = std::stoll(point, &used);
            if (used != point.size()) throw ParseError("bad point id");
            out.push_back(r);
            if (line_numbers) line_numbers->push_back(line_no);
        } catch (const std::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    return out;
}

void write_request_stream(const std::vector<UnlearnRequest>& requests, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "seq,target_kind,point_id\n";
    for (const auto& r : requests) out << r.request_id << ',' << to_string(r.target) << ',' << r.point << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<UnlearnRequest> generate_requests(const System& sys, std::size_t count, const RequestMix& mix,
                                              std::uint64_t seed, std::uint64_t first_id) {
    const double weights[4] = {mix.student, mix.teacher, mix.simultaneous_aligned, mix.simultaneous_misaligned};
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw InvalidArgument("request mix weights must be non-negative");
        total += w;
    }
    if (count > 0 && !(total > 0.0)) throw InvalidArgument("request mix has no positive weight");

    PartitionPlan tplan = sys.teachers.plan;
    PartitionPlan splan = sys.students.plan;
    const auto& mapping = sys.students.mapping;
    const bool mapped = sys.students.config.mode != StudentMode::naive_sisa;
    Rng rng(derive_seed(seed, {0x7e9}));

    auto pick = [&](const std::vector<PointId>& pool) -> PointId {
        if (pool.empty()) throw InvalidArgument("no eligible points left for the requested kind");
        return pool[rng.below(pool.size())];
    };
    auto shared_points = [&](bool want_aligned) {
        std::vector<PointId> pool;
        for (auto id : splan.all_ids()) {
            if (!tplan.contains(id)) continue;
            const auto s = splan.locate(id);
            const auto owner = mapping.owner_of(tplan.locate(id).shard);
            const bool aligned = mapped && owner.student == s.shard && owner.position == s.chunk;
            if (aligned == want_aligned) pool.push_back(id);
        }
        return pool;
    };

    std::vector<UnlearnRequest> out;
    for (std::size_t i = 0; i < count; ++i) {
        double u = rng.uniform() * total;
        std::size_t kind = 0;
        while (kind < 3 && (weights[kind] == 0.0 || u >= weights[kind])) {
            u -= weights[kind];
            ++kind;
        }
        while (weights[kind] == 0.0) --kind;

        UnlearnRequest r;
        r.request_id = first_id + i;
        switch (kind) {
            case 0:
                r.target = TargetKind::student;
                r.point = pick(splan.all_ids());
                splan.remove(r.point);
                break;
            case 1: {
                r.target = TargetKind::teacher;
                std::vector<PointId> pool;
                for (int tries = 0; pool.empty() && tries < 64; ++tries)
                    pool = tplan.shard_ids(rng.below(tplan.num_shards()));
                r.point = pick(pool);
                tplan.remove(r.point);
                break;
            }
            default:
                r.target = TargetKind::simultaneous;
                r.point = pick(shared_points(kind == 2));
                splan.remove(r.point);
                tplan.remove(r.point);
                break;
        }
        out.push_back(r);
    }
    return out;
}

nlohmann::json to_json(const CheckpointKey& key) {
    return {{"role", to_string(key.role)},
            {"constituent", key.constituent},
            {"chunk", key.chunk},
            {"slice", key.slice},
            {"generation", key.generation}};
}

nlohmann::json to_json(const UnlearnReport& r) {
    nlohmann::json reverted = nlohmann::json::array();
    for (const auto& k : r.reverted_to) reverted.push_back(to_json(k));
    nlohmann::json relabeled = nlohmann::json::array();
    for (const auto& [k, l] : r.chunks_relabeled) relabeled.push_back({k, l});
    nlohmann::json j = {
        {"request_id", r.request_id},
        {"target", to_string(r.target)},
        {"point_id", r.point},
        {"affected_teacher_members", r.affected_teacher_members},
        {"affected_student_constituents", r.affected_student_constituents},
        {"reverted_to", reverted},
        {"chunks_relabeled", relabeled},
        {"steps_retrained", {{"teacher", r.teacher_steps}, {"student", r.student_steps}}},
        {"relabel_inferences", r.relabel_inferences},
        {"rounds_retrained", r.rounds_retrained},
        {"wall_time", r.wall_time},
    };
    j["aligned"] = r.aligned ? nlohmann::json(*r.aligned) : nlohmann::json(nullptr);
    return j;
}

}  // namespace purge
