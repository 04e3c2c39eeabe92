#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "purge/costmodel.hpp"
#include "purge/data.hpp"
#include "purge/student.hpp"
#include "purge/teacher.hpp"
#include "purge/unlearning.hpp"

namespace purge {

struct DatasetConfig {
    std::string source = "synthetic";  // "synthetic" | "csv"
    std::filesystem::path path;
    bool has_header = true;
    SyntheticSpec synthetic;  // seed is derived from the experiment seed
    double test_fraction = 0.2;
    /// Teachers and students train on the same points (simultaneous requests
    /// need this); otherwise the non-test pool is halved between them.
    bool shared = false;
};

struct RequestStreamConfig {
    std::size_t count = 0;
    RequestMix mix;
};

struct SimulateGrid {
    std::uint64_t M = 32;
    std::vector<std::uint64_t> N{1, 2, 4, 8, 16, 32};
    std::vector<std::uint64_t> r{1, 4};
    std::uint64_t e_prime = 120;
    std::uint64_t requests = 100;
    std::uint64_t D = 3840;
};

/// One JSON document. Every seed in a run derives from `seed`.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    DatasetConfig dataset;

    std::size_t teachers = 4;  // M
    std::size_t teacher_slices = 1;  // R_T
    ModelArch teacher_arch;  // feature_dim / num_classes come from the data
    TrainHyper teacher_hyper;

    std::size_t students = 4;  // N
    StudentMode mode = StudentMode::purge;
    std::size_t slices_per_chunk = 1;  // r
    std::optional<std::vector<std::vector<std::size_t>>> slices;  // explicit R_{k,l}
    std::optional<std::vector<std::size_t>> mapping_sizes;  // explicit c_k
    ModelArch student_arch;
    TrainHyper student_hyper;
    bool trace = false;

    std::uint64_t e_prime = 20;
    RequestStreamConfig requests;
    SimulateGrid simulate;
    bool parallel = false;

    /// Throws ConfigError naming the offending field path.
    static ExperimentConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

/// Applies `path.to.field=value` overrides; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides = {},
                             std::optional<std::uint64_t> seed = std::nullopt);

/// Datasets of one run: teacher pool, student pool, held-out test points.
struct ExperimentData {
    Dataset teacher;
    Dataset student;
    Dataset test;
};
ExperimentData prepare_data(const ExperimentConfig& config);

/// Library-level configuration resolved against the data.
struct ResolvedSetup {
    TeacherConfig teacher;
    StudentConfig student;
    ConstituentMapping mapping;
    std::vector<std::vector<std::size_t>> slices;
};
ResolvedSetup resolve(const ExperimentConfig& config, const Dataset& teacher_data, const Dataset& student_data);

/// Trains a full system in memory (or into `store`).
System train_system(const ExperimentConfig& config, const ExperimentData& data, CheckpointStore& store);

nlohmann::json plan_to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const nlohmann::json& doc);

/// Persisted description of a trained system: config, plans, mapping, cached
/// labels, loss traces. Model states live in the checkpoint store.
nlohmann::json system_manifest(const System& system, const ExperimentConfig& config);
System load_system(const std::filesystem::path& dir, CheckpointStore& store, ExperimentConfig* config = nullptr);

struct TrainOptions {
    ExperimentConfig config;
    std::filesystem::path out;
};
/// Writes teacher.csv, student.csv, test.csv, manifest.json, ledger.csv,
/// accuracy.json, requests.csv (when requests.count > 0) and checkpoints/.
void cmd_train(const TrainOptions& options);

struct UnlearnOptions {
    std::filesystem::path system_dir;
    std::filesystem::path requests;
    bool verify = false;
    /// Drop superseded checkpoint generations once the stream is applied.
    /// Off by default: old generations stay available for audits.
    bool prune = false;
};
/// Applies the stream, appends to reports.jsonl, rewrites manifest and
/// ledger, writes comparison.json. Returns the number of failed verifications.
std::size_t cmd_unlearn(const UnlearnOptions& options);

/// Writes simulate.csv, simulate_detail.csv and simulate_cumulative.csv.
std::vector<SimulationRow> cmd_simulate(const ExperimentConfig& config, const std::filesystem::path& out);

/// Reads run directories (accuracy.json, comparison.json, simulate.csv) or
/// those files directly; writes accuracy_vs_N.csv and speedup_vs_N.csv.
void cmd_analyze(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out);

/// 2 configuration, 3 data, 4 verification, 1 anything else.
int exit_code_for(const std::exception& error);

}  // namespace purge
