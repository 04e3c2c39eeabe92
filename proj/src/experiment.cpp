#include "purge/experiment.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "purge/costmodel.hpp"
#include "purge/error.hpp"
#include "purge/rng.hpp"

namespace purge {

using nlohmann::json;

namespace {

constexpr std::uint64_t kDataTag = 0xda7a;
constexpr std::uint64_t kTestSplitTag = 0x7e57;
constexpr std::uint64_t kPoolSplitTag = 0x5a1f;
constexpr std::uint64_t kTeacherTag = 0x7eac;
constexpr std::uint64_t kStudentTag = 0x57d;
constexpr std::uint64_t kRequestTag = 0x4e9e;
constexpr std::uint64_t kSimulateTag = 0x51;

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

[[noreturn]] void raise(ErrorKind kind, const std::string& msg) {
    switch (kind) {
        case ErrorKind::invalid_argument: throw InvalidArgument(msg);
        case ErrorKind::config: throw ConfigError(msg);
        case ErrorKind::parse: throw ParseError(msg);
        case ErrorKind::dimension: throw DimensionError(msg);
        case ErrorKind::partition: throw PartitionError(msg);
        case ErrorKind::not_found: throw NotFoundError(msg);
        case ErrorKind::io: throw IoError(msg);
        case ErrorKind::verification_unavailable: throw VerificationUnavailable(msg);
    }
    throw Error(kind, msg);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

/// Walks one config object, remembering which keys were consumed so that
/// typos surface as errors.
class Reader {
public:
    Reader(const json* obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (obj_ && !obj_->is_object()) throw ConfigError(where() + ": expected an object");
    }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key)) return;
        const auto& v = obj_->at(key);
        const auto field = child_path(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(field + ": expected true or false");
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError(field + ": expected a non-negative integer");
            out = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(field + ": expected a number");
            out = v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(field + ": expected a string");
            out = v.get<std::string>();
        } else {
            try {
                out = v.get<T>();
            } catch (const json::exception&) {
                throw ConfigError(field + ": unexpected value " + v.dump());
            }
        }
    }

    template <class T>
    void get_optional(const std::string& key, std::optional<T>& out) {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key) || obj_->at(key).is_null()) return;
        T value{};
        get(key, value);
        out = std::move(value);
    }

    Reader child(const std::string& key) {
        seen_.insert(key);
        const json* sub = obj_ && obj_->contains(key) ? &obj_->at(key) : nullptr;
        return Reader(sub, child_path(key));
    }

    std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where() const { return path_.empty() ? "<root>" : path_; }

    void finish() const {
        if (!obj_) return;
        for (const auto& [key, _] : obj_->items())
            if (!seen_.contains(key)) throw ConfigError(child_path(key) + ": unknown field");
    }

private:
    const json* obj_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_arch(Reader r, ModelArch& arch) {
    std::string kind = to_string(arch.kind);
    r.get("kind", kind);
    try {
        arch.kind = model_kind_from_string(kind);
    } catch (const Error&) {
        throw ConfigError(r.child_path("kind") + ": unknown model kind '" + kind + "'");
    }
    r.get("hidden_units", arch.hidden_units);
    r.finish();
    if (arch.kind == ModelKind::one_hidden_layer && arch.hidden_units == 0)
        throw ConfigError(r.child_path("hidden_units") + ": must be positive for one_hidden_layer");
}

void read_hyper(Reader r, TrainHyper& h) {
    r.get("learning_rate", h.learning_rate);
    r.get("batch_size", h.batch_size);
    r.get("hard_label_weight", h.hard_label_weight);
    r.get("temperature", h.temperature);
    r.finish();
    if (!(h.learning_rate > 0)) throw ConfigError(r.child_path("learning_rate") + ": must be positive");
    if (h.batch_size == 0) throw ConfigError(r.child_path("batch_size") + ": must be positive");
    if (!(h.hard_label_weight >= 0 && h.hard_label_weight <= 1))
        throw ConfigError(r.child_path("hard_label_weight") + ": must lie in [0, 1]");
    if (!(h.temperature > 0)) throw ConfigError(r.child_path("temperature") + ": must be positive");
}

json arch_json(const ModelArch& a) { return {{"kind", to_string(a.kind)}, {"hidden_units", a.hidden_units}}; }

json hyper_json(const TrainHyper& h) {
    return {{"learning_rate", h.learning_rate},
            {"batch_size", h.batch_size},
            {"hard_label_weight", h.hard_label_weight},
            {"temperature", h.temperature}};
}

void require_positive(std::uint64_t v, const std::string& field) {
    if (v == 0) throw ConfigError(field + ": must be positive");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    ExperimentConfig c;
    Reader root(&doc, "");
    root.get("seed", c.seed);
    root.get("parallel", c.parallel);

    {
        auto r = root.child("dataset");
        auto& s = c.dataset.synthetic;
        r.get("source", c.dataset.source);
        std::string path;
        r.get("path", path);
        c.dataset.path = path;
        r.get("has_header", c.dataset.has_header);
        r.get("num_classes", s.num_classes);
        r.get("points_per_class", s.points_per_class);
        r.get("feature_dim", s.feature_dim);
        r.get("class_center_spread", s.class_center_spread);
        r.get("within_class_stddev", s.within_class_stddev);
        r.get("test_fraction", c.dataset.test_fraction);
        r.get("shared", c.dataset.shared);
        r.finish();
        if (c.dataset.source != "synthetic" && c.dataset.source != "csv")
            throw ConfigError("dataset.source: expected \"synthetic\" or \"csv\"");
        if (c.dataset.source == "csv" && c.dataset.path.empty())
            throw ConfigError("dataset.path: required when dataset.source is \"csv\"");
        if (c.dataset.source == "synthetic") {
            require_positive(s.num_classes, "dataset.num_classes");
            require_positive(s.points_per_class, "dataset.points_per_class");
            require_positive(s.feature_dim, "dataset.feature_dim");
            if (!(s.within_class_stddev > 0)) throw ConfigError("dataset.within_class_stddev: must be positive");
            if (!(s.class_center_spread >= 0)) throw ConfigError("dataset.class_center_spread: must be >= 0");
        }
        if (!(c.dataset.test_fraction >= 0 && c.dataset.test_fraction < 1))
            throw ConfigError("dataset.test_fraction: must lie in [0, 1)");
    }
    {
        auto r = root.child("teacher");
        r.get("members", c.teachers);
        r.get("slices", c.teacher_slices);
        read_arch(r.child("arch"), c.teacher_arch);
        read_hyper(r.child("hyper"), c.teacher_hyper);
        r.finish();
        require_positive(c.teachers, "teacher.members");
        require_positive(c.teacher_slices, "teacher.slices");
    }
    {
        auto r = root.child("student");
        r.get("constituents", c.students);
        std::string mode = to_string(c.mode);
        r.get("mode", mode);
        try {
            c.mode = student_mode_from_string(mode);
        } catch (const Error&) {
            throw ConfigError("student.mode: unknown mode '" + mode + "'");
        }
        r.get("slices_per_chunk", c.slices_per_chunk);
        r.get_optional("slices", c.slices);
        r.get_optional("mapping_sizes", c.mapping_sizes);
        r.get("trace", c.trace);
        read_arch(r.child("arch"), c.student_arch);
        read_hyper(r.child("hyper"), c.student_hyper);
        r.finish();
        require_positive(c.students, "student.constituents");
        require_positive(c.slices_per_chunk, "student.slices_per_chunk");
        if (c.mapping_sizes) {
            if (c.mapping_sizes->size() != c.students)
                throw ConfigError("student.mapping_sizes: needs one entry per constituent");
            std::size_t sum = 0;
            for (auto s : *c.mapping_sizes) {
                require_positive(s, "student.mapping_sizes");
                sum += s;
            }
            if (sum != c.teachers) throw ConfigError("student.mapping_sizes: must sum to teacher.members");
        } else if (c.students > c.teachers) {
            throw ConfigError("student.constituents: exceeds teacher.members without explicit mapping_sizes");
        }
    }
    {
        auto r = root.child("budget");
        r.get("e_prime", c.e_prime);
        r.finish();
        require_positive(c.e_prime, "budget.e_prime");
    }
    {
        auto r = root.child("requests");
        r.get("count", c.requests.count);
        r.get("student", c.requests.mix.student);
        r.get("teacher", c.requests.mix.teacher);
        r.get("simultaneous_aligned", c.requests.mix.simultaneous_aligned);
        r.get("simultaneous_misaligned", c.requests.mix.simultaneous_misaligned);
        r.finish();
        const auto& m = c.requests.mix;
        for (double w : {m.student, m.teacher, m.simultaneous_aligned, m.simultaneous_misaligned})
            if (!(w >= 0)) throw ConfigError("requests: mix weights must be non-negative");
        if ((m.simultaneous_aligned > 0 || m.simultaneous_misaligned > 0) && !c.dataset.shared && c.requests.count > 0)
            throw ConfigError("requests: simultaneous requests need dataset.shared = true");
    }
    {
        auto r = root.child("simulate");
        auto& g = c.simulate;
        r.get("M", g.M);
        r.get("N", g.N);
        r.get("r", g.r);
        r.get("e_prime", g.e_prime);
        r.get("requests", g.requests);
        r.get("D", g.D);
        r.finish();
        require_positive(g.M, "simulate.M");
        require_positive(g.e_prime, "simulate.e_prime");
        require_positive(g.D, "simulate.D");
        for (auto n : g.N) {
            require_positive(n, "simulate.N");
            if (n > g.M) throw ConfigError("simulate.N: entries must not exceed simulate.M");
        }
        for (auto r_ : g.r) require_positive(r_, "simulate.r");
    }
    root.finish();
    return c;
}

json ExperimentConfig::to_json() const {
    const auto& s = dataset.synthetic;
    json j = {
        {"seed", seed},
        {"parallel", parallel},
        {"dataset",
         {{"source", dataset.source},
          {"path", dataset.path.string()},
          {"has_header", dataset.has_header},
          {"num_classes", s.num_classes},
          {"points_per_class", s.points_per_class},
          {"feature_dim", s.feature_dim},
          {"class_center_spread", s.class_center_spread},
          {"within_class_stddev", s.within_class_stddev},
          {"test_fraction", dataset.test_fraction},
          {"shared", dataset.shared}}},
        {"teacher",
         {{"members", teachers},
          {"slices", teacher_slices},
          {"arch", arch_json(teacher_arch)},
          {"hyper", hyper_json(teacher_hyper)}}},
        {"student",
         {{"constituents", students},
          {"mode", to_string(mode)},
          {"slices_per_chunk", slices_per_chunk},
          {"slices", slices ? json(*slices) : json(nullptr)},
          {"mapping_sizes", mapping_sizes ? json(*mapping_sizes) : json(nullptr)},
          {"trace", trace},
          {"arch", arch_json(student_arch)},
          {"hyper", hyper_json(student_hyper)}}},
        {"budget", {{"e_prime", e_prime}}},
        {"requests",
         {{"count", requests.count},
          {"student", requests.mix.student},
          {"teacher", requests.mix.teacher},
          {"simultaneous_aligned", requests.mix.simultaneous_aligned},
          {"simultaneous_misaligned", requests.mix.simultaneous_misaligned}}},
        {"simulate",
         {{"M", simulate.M},
          {"N", simulate.N},
          {"r", simulate.r},
          {"e_prime", simulate.e_prime},
          {"requests", simulate.requests},
          {"D", simulate.D}}},
    };
    return j;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override '" + assignment + "': empty path component");
        if (!node->is_object()) {
            if (!node->is_null()) throw ConfigError("override '" + path + "': parent is not an object");
            *node = json::object();
        }
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
    json doc = json::object();
    if (path) {
        std::ifstream in(*path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config " + path->string());
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(path->string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    return ExperimentConfig::from_json(doc);
}

ExperimentData prepare_data(const ExperimentConfig& config) {
    Dataset pool;
    if (config.dataset.source == "csv") {
        pool = load_csv(config.dataset.path, config.dataset.has_header);
    } else {
        auto spec = config.dataset.synthetic;
        spec.seed = derive_seed(config.seed, {kDataTag});
        pool = gen_synthetic(spec);
    }
    auto split = split_dataset(pool, config.dataset.test_fraction, derive_seed(config.seed, {kTestSplitTag}));
    ExperimentData out;
    out.test = std::move(split.holdout);
    if (config.dataset.shared) {
        out.teacher = split.kept;
        out.student = std::move(split.kept);
    } else {
        auto halves = split_dataset(split.kept, 0.5, derive_seed(config.seed, {kPoolSplitTag}));
        out.teacher = std::move(halves.kept);
        out.student = std::move(halves.holdout);
    }
    return out;
}

ResolvedSetup resolve(const ExperimentConfig& config, const Dataset& teacher_data, const Dataset& student_data) {
    if (teacher_data.feature_dim() != student_data.feature_dim())
        throw DimensionError("teacher and student data have different feature dimensions");
    const std::size_t classes = std::max(teacher_data.num_classes(), student_data.num_classes());

    ResolvedSetup s;
    s.teacher.members = config.teachers;
    s.teacher.slices_per_shard = config.teacher_slices;
    s.teacher.arch = config.teacher_arch;
    s.teacher.arch.feature_dim = teacher_data.feature_dim();
    s.teacher.arch.num_classes = classes;
    s.teacher.hyper = config.teacher_hyper;
    s.teacher.hyper.seed = derive_seed(config.seed, {kTeacherTag, 1});
    s.teacher.budget = {config.e_prime};
    s.teacher.seed = derive_seed(config.seed, {kTeacherTag});
    s.teacher.parallel = config.parallel;

    s.mapping = build_mapping(config.teachers, config.students, config.mapping_sizes);
    s.slices = config.slices ? *config.slices : uniform_slices(s.mapping, config.slices_per_chunk);

    s.student.arch = config.student_arch;
    s.student.arch.feature_dim = student_data.feature_dim();
    s.student.arch.num_classes = classes;
    s.student.hyper = config.student_hyper;
    s.student.hyper.seed = derive_seed(config.seed, {kStudentTag, 1});
    s.student.budget = {config.e_prime};
    s.student.mode = config.mode;
    s.student.seed = derive_seed(config.seed, {kStudentTag});
    s.student.trace = config.trace;
    s.student.parallel = config.parallel;
    return s;
}

System train_system(const ExperimentConfig& config, const ExperimentData& data, CheckpointStore& store) {
    auto setup = resolve(config, data.teacher, data.student);
    return build_system(data.teacher, data.student, setup.teacher, std::move(setup.mapping), setup.student,
                        setup.slices, store);
}

json plan_to_json(const PartitionPlan& plan) {
    json shards = json::array();
    for (const auto& shard : plan.shards()) {
        json chunks = json::array();
        for (const auto& chunk : shard.chunks) chunks.push_back(chunk.slices);
        shards.push_back(std::move(chunks));
    }
    return {{"seed", plan.seed()}, {"shards", std::move(shards)}};
}

PartitionPlan plan_from_json(const json& doc) {
    try {
        std::vector<PartitionPlan::Shard> shards;
        for (const auto& s : doc.at("shards")) {
            PartitionPlan::Shard shard;
            for (const auto& c : s) shard.chunks.push_back({c.get<std::vector<PartitionPlan::Slice>>()});
            shards.push_back(std::move(shard));
        }
        return PartitionPlan::from_groups(std::move(shards), doc.at("seed").get<std::uint64_t>());
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed partition plan: ") + e.what());
    }
}

json system_manifest(const System& sys, const ExperimentConfig& config) {
    json constituents = json::array();
    for (const auto& c : sys.students.constituents) {
        json chunks = json::array();
        for (const auto& ch : c.chunks) {
            json labels = json::array();
            for (const auto& e : ch.labels.entries) labels.push_back({e.id, e.probs});
            chunks.push_back({{"provenance", ch.provenance}, {"labels", std::move(labels)}});
        }
        json trace = json::array();
        for (const auto& t : c.trace) trace.push_back({t.round, t.mean_loss});
        constituents.push_back({{"chunks", std::move(chunks)}, {"trace", std::move(trace)}});
    }
    return {
        {"format", "purge-system"},
        {"version", 1},
        {"config", config.to_json()},
        {"last_request", sys.last_request},
        {"teacher", {{"plan", plan_to_json(sys.teachers.plan)}}},
        {"student",
         {{"plan", plan_to_json(sys.students.plan)},
          {"mapping", sys.students.mapping.assignment},
          {"constituents", std::move(constituents)}}},
    };
}

System load_system(const std::filesystem::path& dir, CheckpointStore& store, ExperimentConfig* config_out) {
    const auto manifest = read_json(dir / "manifest.json");
    if (manifest.value("format", "") != "purge-system")
        throw ParseError((dir / "manifest.json").string() + ": not a system manifest");
    const auto config = ExperimentConfig::from_json(manifest.at("config"));

    System sys;
    sys.teacher_data = load_csv(dir / "teacher.csv", true);
    sys.student_data = load_csv(dir / "student.csv", true);
    auto setup = resolve(config, sys.teacher_data, sys.student_data);

    try {
        sys.last_request = manifest.at("last_request").get<std::uint64_t>();
        sys.teachers.config = setup.teacher;
        sys.teachers.plan = plan_from_json(manifest.at("teacher").at("plan"));
        for (std::size_t m = 0; m < sys.teachers.plan.num_shards(); ++m) {
            const auto R = static_cast<std::uint32_t>(sys.teachers.plan.num_slices(m, 0));
            sys.teachers.members.push_back(store.load({Role::teacher, static_cast<std::uint32_t>(m), 1, R}).state);
        }

        const auto& st = manifest.at("student");
        sys.students.mapping.assignment = st.at("mapping").get<std::vector<std::vector<std::size_t>>>();
        if (!(sys.students.mapping == setup.mapping))
            throw ParseError("manifest mapping disagrees with its configuration");
        sys.students.plan = plan_from_json(st.at("plan"));
        sys.students.config = setup.student;
        const auto& cons = st.at("constituents");
        for (std::size_t k = 0; k < cons.size(); ++k) {
            StudentConstituent c;
            for (const auto& ch : cons[k].at("chunks")) {
                ChunkLabels labels;
                labels.provenance = ch.at("provenance").get<std::vector<std::size_t>>();
                for (const auto& e : ch.at("labels"))
                    labels.labels.entries.push_back({e.at(0).get<PointId>(), e.at(1).get<Probabilities>()});
                c.chunks.push_back(std::move(labels));
            }
            for (const auto& t : cons[k].at("trace"))
                c.trace.push_back({t.at(0).get<std::size_t>(), t.at(1).get<double>()});
            const auto rounds = rounds_of(sys.students.plan, k);
            c.state = store.load(student_key(k, rounds.back())).state;
            sys.students.constituents.push_back(std::move(c));
        }
        if (sys.students.constituents.size() != sys.students.plan.num_shards())
            throw ParseError("manifest constituent count disagrees with the student plan");
    } catch (const json::exception& e) {
        throw ParseError((dir / "manifest.json").string() + ": " + e.what());
    }
    sys.ledger = CostLedger::read_csv(dir / "ledger.csv");
    if (config_out) *config_out = config;
    return sys;
}

void cmd_train(const TrainOptions& options) {
    const auto& config = options.config;
    const auto& out = options.out;
    std::filesystem::create_directories(out);
    std::filesystem::remove_all(out / "checkpoints");
    for (const char* stale : {"reports.jsonl", "comparison.json", "requests.csv"}) std::filesystem::remove(out / stale);

    const auto data = prepare_data(config);
    save_csv(data.teacher, out / "teacher.csv");
    save_csv(data.student, out / "student.csv");
    save_csv(data.test, out / "test.csv");

    CheckpointStore store(out / "checkpoints");
    const auto sys = train_system(config, data, store);

    write_json(out / "manifest.json", system_manifest(sys, config));
    sys.ledger.write_csv(out / "ledger.csv");

    const auto report = store.storage_report();
    json acc = {
        {"mode", to_string(config.mode)},
        {"teachers", config.teachers},
        {"students", config.students},
        {"seed", config.seed},
        {"test_points", data.test.size()},
        {"teacher_accuracy", nullptr},
        {"student_accuracy", nullptr},
        {"checkpoints",
         {{"teacher_records", report.teacher.records},
          {"student_records", report.student.records},
          {"total_bytes", report.total_bytes()}}},
    };
    if (!data.test.empty()) {
        acc["teacher_accuracy"] = evaluate_accuracy(sys.teachers, data.test);
        acc["student_accuracy"] = evaluate_accuracy(sys.students, data.test);
    }
    if (config.trace) {
        json jumps = json::array();
        for (std::size_t k = 0; k < sys.students.constituents.size(); ++k)
            jumps.push_back(max_loss_jump(loss_trace(sys.students, k)));
        acc["max_loss_jump"] = std::move(jumps);
    }
    write_json(out / "accuracy.json", acc);

    if (config.requests.count > 0) {
        const auto requests = generate_requests(sys, config.requests.count, config.requests.mix,
                                                derive_seed(config.seed, {kRequestTag}));
        write_request_stream(requests, out / "requests.csv");
    }
}

namespace {

json comparison_json(const System& sys, const ExperimentConfig& config, std::size_t student_points,
                     const std::vector<std::uint64_t>& teacher_requests) {
    json out = {{"available", false}, {"mode", to_string(config.mode)}};
    const auto counts = sys.students.mapping.chunk_counts();
    const bool even_chunks = std::all_of(counts.begin(), counts.end(), [&](auto c) { return c == counts[0]; });
    if (teacher_requests.empty()) {
        out["reason"] = "no teacher-targeted requests";
        return out;
    }
    if (!even_chunks || config.slices) {
        out["reason"] = "non-even configuration; closed forms do not apply";
        return out;
    }
    const CostParams params{config.students, config.teachers, counts[0], config.slices_per_chunk, config.e_prime,
                            student_points};
    const auto rep = predict_vs_measured(sys.ledger, params, teacher_requests);
    out["available"] = true;
    out["params"] = {{"N", params.N}, {"M", params.M},           {"c", params.c},
                     {"r", params.r}, {"e_prime", params.e_prime}, {"D", params.D}};
    out["requests"] = rep.requests;
    out["naive_steps_per_request"] = rep.naive_steps_per_request;
    out["measured_mean_steps"] = rep.measured_mean_steps;
    out["measured_stderr"] = rep.measured_stderr;
    out["predicted_ratio_eq3"] = rep.predicted_ratio_eq3;
    out["predicted_ratio_eq4"] = rep.predicted_ratio_eq4;
    out["measured_ratio"] = rep.measured_ratio;
    out["relative_deviation"] = rep.relative_deviation;
    out["ceiling_bound"] = rep.ceiling_bound;
    return out;
}

}  // namespace

std::size_t cmd_unlearn(const UnlearnOptions& options) {
    const auto& dir = options.system_dir;
    CheckpointStore store(dir / "checkpoints");
    ExperimentConfig config;
    System sys = load_system(dir, store, &config);
    const std::size_t student_points = sys.students.plan.size();

    std::vector<std::size_t> lines;
    const auto requests = read_request_stream(options.requests, &lines);

    std::ofstream reports(dir / "reports.jsonl", std::ios::binary | std::ios::app);
    if (!reports) throw IoError("cannot write " + (dir / "reports.jsonl").string());

    auto persist = [&] {
        write_json(dir / "manifest.json", system_manifest(sys, config));
        sys.ledger.write_csv(dir / "ledger.csv");
    };

    std::vector<std::uint64_t> teacher_requests;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        const auto& req = requests[i];
        std::optional<System> before;
        if (options.verify) before = sys;
        UnlearnReport report;
        try {
            report = apply_request(sys, store, req);
        } catch (const Error& e) {
            persist();
            raise(e.kind(), options.requests.string() + ":" + std::to_string(lines[i]) + ": " + e.what());
        }
        if (req.target == TargetKind::teacher) teacher_requests.push_back(req.request_id);
        auto j = to_json(report);
        if (before) {
            const auto verdict = verify_exactness(*before, req, sys);
            j["verified"] = verdict.pass;
            j["max_abs_diff"] = verdict.max_abs_diff;
            if (!verdict.pass) {
                ++failures;
                j["verification_failures"] = verdict.failures;
            }
        }
        reports << j.dump() << '\n';
    }
    reports.flush();
    if (!reports) throw IoError("write failed: " + (dir / "reports.jsonl").string());
    persist();
    write_json(dir / "comparison.json", comparison_json(sys, config, student_points, teacher_requests));
    if (options.prune) store.prune();
    return failures;
}

std::vector<SimulationRow> cmd_simulate(const ExperimentConfig& config, const std::filesystem::path& out) {
    const auto& g = config.simulate;
    std::vector<SimulationRow> rows;
    for (auto r : g.r)
        for (auto n : g.N)
            rows.push_back(simulate_teacher_requests(
                {g.M, n, r, g.e_prime, g.D, g.requests, derive_seed(config.seed, {kSimulateTag, n, r})}));

    std::filesystem::create_directories(out);
    std::ostringstream table, detail, cumulative;
    table << "M,N,c,r,e_prime,requests,mean_steps,predicted,measured_ratio,deviation\n";
    detail << "M,N,c,r,e_prime,requests,D,even,naive_steps,mean_steps,stderr_steps,measured_ratio,"
              "predicted_eq3,predicted_eq4,deviation,ceiling_bound\n";
    cumulative << "M,N,r,request,steps,cumulative_steps\n";
    for (const auto& row : rows) {
        const auto& c = row.config;
        table << c.M << ',' << c.N << ',' << row.c << ',' << c.r << ',' << c.e_prime << ',' << c.requests << ','
              << fmt(row.mean_steps) << ',' << fmt(row.predicted_eq3) << ',' << fmt(row.measured_ratio) << ','
              << fmt(row.deviation) << '\n';
        detail << c.M << ',' << c.N << ',' << row.c << ',' << c.r << ',' << c.e_prime << ',' << c.requests << ','
               << c.D << ',' << (row.even ? 1 : 0) << ',' << row.naive_steps << ',' << fmt(row.mean_steps) << ','
               << fmt(row.stderr_steps) << ',' << fmt(row.measured_ratio) << ',' << fmt(row.predicted_eq3) << ','
               << fmt(row.predicted_eq4) << ',' << fmt(row.deviation) << ','
               << (row.even ? fmt(row.ceiling_bound) : std::string()) << '\n';
        for (std::size_t i = 0; i < row.per_request_steps.size(); ++i)
            cumulative << c.M << ',' << c.N << ',' << c.r << ',' << i + 1 << ',' << row.per_request_steps[i] << ','
                       << row.cumulative_steps[i] << '\n';
    }
    write_text(out / "simulate.csv", table.str());
    write_text(out / "simulate_detail.csv", detail.str());
    write_text(out / "simulate_cumulative.csv", cumulative.str());
    return rows;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& text, const std::string& where) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw ParseError(where + ": expected a number, got '" + text + "'");
    return v;
}

struct SpeedupKey {
    std::string source;
    std::uint64_t M, r, N;
    auto operator<=>(const SpeedupKey&) const = default;
};

struct SpeedupAcc {
    std::vector<double> measured;
    std::vector<double> predicted;
};

struct AccuracyAcc {
    std::vector<double> student;
    std::vector<double> teacher;
};

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void read_simulate_table(const std::filesystem::path& path, std::map<SpeedupKey, SpeedupAcc>& speedups) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) return;
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* need : {"M", "N", "r", "predicted", "measured_ratio"})
        if (!col.contains(need))
            throw ParseError(path.string() + ":1: missing column '" + std::string(need) + "'");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no);
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields");
        SpeedupKey key{"simulate", static_cast<std::uint64_t>(parse_number(f[col["M"]], where)),
                       static_cast<std::uint64_t>(parse_number(f[col["r"]], where)),
                       static_cast<std::uint64_t>(parse_number(f[col["N"]], where))};
        auto& acc = speedups[key];
        acc.measured.push_back(parse_number(f[col["measured_ratio"]], where));
        if (!f[col["predicted"]].empty()) acc.predicted.push_back(parse_number(f[col["predicted"]], where));
    }
}

void read_accuracy(const std::filesystem::path& path, std::map<std::pair<std::string, std::uint64_t>, AccuracyAcc>& acc) {
    const auto j = read_json(path);
    try {
        auto& a = acc[{j.at("mode").get<std::string>(), j.at("students").get<std::uint64_t>()}];
        if (!j.at("student_accuracy").is_null()) a.student.push_back(j.at("student_accuracy").get<double>());
        if (!j.at("teacher_accuracy").is_null()) a.teacher.push_back(j.at("teacher_accuracy").get<double>());
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void read_comparison(const std::filesystem::path& path, std::map<SpeedupKey, SpeedupAcc>& speedups) {
    const auto j = read_json(path);
    try {
        if (!j.at("available").get<bool>()) return;
        const auto& p = j.at("params");
        auto& acc = speedups[{"unlearn", p.at("M").get<std::uint64_t>(), p.at("r").get<std::uint64_t>(),
                              p.at("N").get<std::uint64_t>()}];
        acc.measured.push_back(j.at("measured_ratio").get<double>());
        acc.predicted.push_back(j.at("predicted_ratio_eq3").get<double>());
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace

void cmd_analyze(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out) {
    std::map<std::pair<std::string, std::uint64_t>, AccuracyAcc> accuracy;
    std::map<SpeedupKey, SpeedupAcc> speedups;

    auto read_file = [&](const std::filesystem::path& p) {
        const auto name = p.filename().string();
        if (name == "accuracy.json") read_accuracy(p, accuracy);
        else if (name == "comparison.json") read_comparison(p, speedups);
        else if (p.extension() == ".csv") read_simulate_table(p, speedups);
        else throw ParseError(p.string() + ": unrecognised input (expected accuracy.json, comparison.json or a "
                              "simulate table)");
    };
    for (const auto& in : inputs) {
        if (std::filesystem::is_directory(in)) {
            for (const char* name : {"accuracy.json", "comparison.json", "simulate.csv"})
                if (std::filesystem::exists(in / name)) read_file(in / name);
        } else if (std::filesystem::exists(in)) {
            read_file(in);
        } else {
            throw IoError("no such input: " + in.string());
        }
    }

    std::filesystem::create_directories(out);
    std::ostringstream acc_table;
    acc_table << "mode,N,runs,mean_student_accuracy,stddev_student_accuracy,mean_teacher_accuracy\n";
    for (const auto& [key, a] : accuracy)
        acc_table << key.first << ',' << key.second << ',' << a.student.size() << ',' << fmt(mean_of(a.student))
                  << ',' << fmt(stddev_of(a.student)) << ',' << fmt(mean_of(a.teacher)) << '\n';
    write_text(out / "accuracy_vs_N.csv", acc_table.str());

    std::ostringstream sp_table;
    sp_table << "source,M,r,N,runs,mean_measured_ratio,predicted_ratio\n";
    for (const auto& [key, s] : speedups)
        sp_table << key.source << ',' << key.M << ',' << key.r << ',' << key.N << ',' << s.measured.size() << ','
                 << fmt(mean_of(s.measured)) << ','
                 << (s.predicted.empty() ? std::string() : fmt(mean_of(s.predicted))) << '\n';
    write_text(out / "speedup_vs_N.csv", sp_table.str());
}

int exit_code_for(const std::exception& error) {
    if (const auto* e = dynamic_cast<const Error*>(&error)) {
        switch (e->kind()) {
            case ErrorKind::config:
            case ErrorKind::invalid_argument: return 2;
            case ErrorKind::parse:
            case ErrorKind::dimension:
            case ErrorKind::partition:
            case ErrorKind::not_found:
            case ErrorKind::io: return 3;
            case ErrorKind::verification_unavailable: return 4;
        }
    }
    if (dynamic_cast<const json::exception*>(&error)) return 2;
    return 1;
}

}  // namespace purge
