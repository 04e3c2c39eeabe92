#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "purge/error.hpp"
#include "purge/experiment.hpp"

using namespace purge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "purge_test_experiment" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string config_error(const json& doc) {
    try {
        ExperimentConfig::from_json(doc);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

ExperimentConfig small_config(std::uint64_t seed = 3) {
    return load_config(std::nullopt,
                       {"dataset.points_per_class=30", "dataset.feature_dim=3", "dataset.shared=true",
                        "teacher.members=4", "teacher.slices=2", "student.constituents=2",
                        "student.slices_per_chunk=2", "budget.e_prime=3", "requests.count=8",
                        "requests.student=1", "requests.simultaneous_aligned=1",
                        "requests.simultaneous_misaligned=1"},
                       seed);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

}  // namespace

TEST_CASE("config errors name the field path") {
    CHECK(config_error({{"teacher", {{"members", -1}}}}).starts_with("teacher.members"));
    CHECK(config_error({{"student", {{"mode", "all"}}}}).starts_with("student.mode"));
    CHECK(config_error({{"student", {{"arch", {{"hidden", 3}}}}}}).starts_with("student.arch.hidden"));
    CHECK(config_error({{"colour", 1}}).starts_with("colour"));
    CHECK(config_error({{"dataset", {{"test_fraction", 1.5}}}}).starts_with("dataset.test_fraction"));
    CHECK(config_error(json::parse(R"({"teacher": {"members": 2}, "student": {"constituents": 3}})"))
              .starts_with("student.constituents"));
    CHECK(config_error({{"requests", {{"count", 3}, {"simultaneous_aligned", 1}}}}).starts_with("requests"));
    CHECK(config_error(json::object()).empty());
}

TEST_CASE("overrides and round-trip") {
    json doc = json::object();
    apply_override(doc, "student.mode=single_teacher");
    apply_override(doc, "teacher.members=8");
    apply_override(doc, "simulate.N=[1,2]");
    const auto c = ExperimentConfig::from_json(doc);
    CHECK(c.mode == StudentMode::single_teacher);
    CHECK(c.teachers == 8);
    CHECK(c.simulate.N == std::vector<std::uint64_t>{1, 2});
    CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
    CHECK(load_config(std::nullopt, {}, 42).seed == 42);
}

TEST_CASE("train, unlearn with verification, replay on a fresh copy") {
    const auto root = scratch("run");
    const auto a = root / "a";
    cmd_train({small_config(), a});
    for (const char* f : {"teacher.csv", "student.csv", "test.csv", "manifest.json", "ledger.csv", "accuracy.json",
                          "requests.csv"})
        CHECK(fs::exists(a / f));
    const auto acc = json::parse(slurp(a / "accuracy.json"));
    CHECK(acc["student_accuracy"].get<double>() > 0.5);
    CHECK(acc["students"] == 2);

    const auto b = root / "b";
    cmd_train({small_config(), b});
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "ledger.csv") == slurp(b / "ledger.csv"));
    CHECK(oracle::file_bytes(a / "checkpoints/student/1/2/2/1.ckpt") ==
          oracle::file_bytes(b / "checkpoints/student/1/2/2/1.ckpt"));

    const auto fresh = root / "fresh";
    fs::copy(a, fresh, fs::copy_options::recursive);

    CHECK(cmd_unlearn({a, a / "requests.csv", true}) == 0);
    const auto reports = read_jsonl(a / "reports.jsonl");
    REQUIRE(reports.size() == 8);
    for (const auto& r : reports) CHECK(r["verified"] == true);
    const auto cmp = json::parse(slurp(a / "comparison.json"));
    CHECK(cmp.contains("available"));

    CHECK(cmd_unlearn({fresh, fresh / "requests.csv", false}) == 0);
    const auto replay = read_jsonl(fresh / "reports.jsonl");
    REQUIRE(replay.size() == reports.size());
    for (std::size_t i = 0; i < replay.size(); ++i) {
        auto x = reports[i], y = replay[i];
        for (auto* j : {&x, &y}) {
            j->erase("wall_time");
            j->erase("verified");
            j->erase("max_abs_diff");
            j->erase("verification_failures");
        }
        CHECK(x == y);
    }
    CHECK(slurp(a / "manifest.json") == slurp(fresh / "manifest.json"));

    // The stream has been consumed: replaying it again fails on request ids.
    try {
        cmd_unlearn({a, a / "requests.csv", false});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(exit_code_for(e) == 2);
        CHECK(std::string(e.what()).find("requests.csv:") != std::string::npos);
    }
}

TEST_CASE("a missing point aborts with a data error and keeps earlier work") {
    const auto dir = scratch("missing");
    auto cfg = small_config(5);
    cfg.requests.count = 0;
    cmd_train({cfg, dir});
    std::ofstream(dir / "stream.csv") << "seq,target_kind,point_id\n1,student,0\n2,student,0\n";
    try {
        cmd_unlearn({dir, dir / "stream.csv", false});
        FAIL("expected NotFoundError");
    } catch (const NotFoundError& e) {
        CHECK(std::string(e.what()).find("stream.csv:3") != std::string::npos);
        CHECK(exit_code_for(e) == 3);
    }
    CheckpointStore store(dir / "checkpoints");
    const auto sys = load_system(dir, store);
    CHECK(sys.last_request == 1);
    CHECK(storage_report(store).student.records > storage_report(store).student.latest_records);

    std::ofstream(dir / "more.csv") << "2,student," << sys.students.plan.slice({1, 0, 0}).front() << "\n";
    cmd_unlearn({dir, dir / "more.csv", false, true});
    CheckpointStore pruned(dir / "checkpoints");
    const auto rep = storage_report(pruned);
    CHECK(rep.student.records == rep.student.latest_records);
    CHECK(rep.total_bytes() == oracle::directory_bytes(dir / "checkpoints"));
    CHECK(load_system(dir, pruned).last_request == 2);
}

TEST_CASE("simulate writes its tables") {
    const auto dir = scratch("sim");
    auto cfg = load_config(std::nullopt, {"simulate.N=[1,4,32]", "simulate.r=[1]", "simulate.requests=20"}, 1);
    const auto rows = cmd_simulate(cfg, dir);
    CHECK(rows.size() == 3);
    CHECK(rows.back().measured_ratio == doctest::Approx(32.0));
    std::ifstream in(dir / "simulate.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "M,N,c,r,e_prime,requests,mean_steps,predicted,measured_ratio,deviation");
    CHECK(fs::exists(dir / "simulate_cumulative.csv"));
    CHECK(fs::exists(dir / "simulate_detail.csv"));
}

TEST_CASE("analyze aggregates runs") {
    const auto in = scratch("analyze_in");
    const auto out = scratch("analyze_out");

    cmd_analyze({}, out);
    CHECK(slurp(out / "accuracy_vs_N.csv") ==
          "mode,N,runs,mean_student_accuracy,stddev_student_accuracy,mean_teacher_accuracy\n");
    CHECK(slurp(out / "speedup_vs_N.csv") == "source,M,r,N,runs,mean_measured_ratio,predicted_ratio\n");

    const std::vector<double> accs{0.8, 0.85, 0.9};
    std::vector<fs::path> inputs;
    for (std::size_t i = 0; i < accs.size(); ++i) {
        const auto d = in / ("run" + std::to_string(i));
        fs::create_directories(d);
        std::ofstream(d / "accuracy.json")
            << json{{"mode", "purge"}, {"students", 4}, {"student_accuracy", accs[i]}, {"teacher_accuracy", 0.9}}.dump();
        inputs.push_back(d);
    }
    cmd_analyze(inputs, out);
    std::ifstream table(out / "accuracy_vs_N.csv");
    std::string line;
    std::getline(table, line);
    std::getline(table, line);
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 6);
    CHECK(cells[0] == "purge");
    CHECK(cells[1] == "4");
    CHECK(cells[2] == "3");
    CHECK(std::abs(std::stod(cells[3]) - oracle::mean({{0.8}, {0.85}, {0.9}})[0]) <= 1e-9);
    CHECK(std::abs(std::stod(cells[4]) - 0.05) <= 1e-9);

    CHECK_THROWS_AS(cmd_analyze({in / "nothing_here"}, out), IoError);
}

TEST_CASE("exit codes by error kind") {
    CHECK(exit_code_for(ConfigError("x")) == 2);
    CHECK(exit_code_for(InvalidArgument("x")) == 2);
    CHECK(exit_code_for(ParseError("x")) == 3);
    CHECK(exit_code_for(NotFoundError("x")) == 3);
    CHECK(exit_code_for(IoError("x")) == 3);
    CHECK(exit_code_for(VerificationUnavailable("x")) == 4);
    CHECK(exit_code_for(std::runtime_error("x")) == 1);
}
