#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <boost/rational.hpp>

#include "purge/ledger.hpp"

namespace purge {

/// Exact arithmetic for the closed forms; convert with to_double() only for
/// presentation.
using Rational = boost::rational<std::int64_t>;

double to_double(const Rational& q);

/// Per-slice epochs that match `e_prime` full passes of initial effort when a
/// shard has c*r slices: exact 2e'/(cr+1) and the ceiling actually trained.
struct SliceEpochs {
    Rational exact;
    std::uint64_t practical = 0;
};
SliceEpochs epochs_per_slice(std::uint64_t e_prime, std::uint64_t c, std::uint64_t r);

/// Slice-rounds (weighted by cumulative slice count) replayed when the l-th
/// of c mapped teachers changes: e_R((l-1)r+1+cr)(cr-(l-1)r)/2. l is 1-based.
Rational retrain_steps(std::uint64_t l, std::uint64_t c, std::uint64_t r, const Rational& e_R);

/// Average of retrain_steps over l = 1..c, closed form.
Rational avg_retrain_steps(std::uint64_t c, std::uint64_t r, const Rational& e_R);

/// Same average by walking every replayed round; independent of the closed
/// forms above.
Rational brute_force_avg_steps(std::uint64_t c, std::uint64_t r, const Rational& e_R);

/// Teacher-side speed-up over full student retraining,
/// N(6c^2 r + 6c)/(4c^2 r + 3cr + 3c - r + 3).
Rational speedup_vs_N(std::uint64_t N, std::uint64_t c, std::uint64_t r);

/// The same ratio in terms of the teacher count, M(6cr + 6)/(4c^2 r + 3cr + 3c - r + 3).
Rational speedup_vs_M(std::uint64_t M, std::uint64_t c, std::uint64_t r);

/// True when speedup_vs_M(M,c,r) == speedup_vs_N(M/c,c,r). Throws
/// InvalidArgument when c does not divide M (no even configuration exists).
bool speedup_forms_agree(std::uint64_t M, std::uint64_t c, std::uint64_t r);

/// Expected student-side retraining cost relative to retraining the whole
/// shard, for R equal slices: 2/3 + 1/(3R).
Rational student_side_cost_fraction(std::uint64_t R);

/// The same quantity for the actual slice sizes of one shard, by enumerating
/// every point as the removal target (uniform over points). A request in
/// slice j replays rounds j..R; round q processes the first q slices.
Rational student_side_expected_fraction(std::span<const std::size_t> slice_sizes);

/// Evenly distributed configuration: c = M/N chunks per shard, r slices per
/// chunk, student dataset size D.
struct CostParams {
    std::uint64_t N = 1;
    std::uint64_t M = 1;
    std::uint64_t c = 1;
    std::uint64_t r = 1;
    std::uint64_t e_prime = 1;
    std::uint64_t D = 0;

    bool even() const { return N * c == M; }
    SliceEpochs slice_epochs() const { return epochs_per_slice(e_prime, c, r); }
    /// |ceil(e_R) - e_R| / e_R
    double ceiling_bound() const;
};

struct ComparisonReport {
    CostParams params;
    std::size_t requests = 0;
    std::uint64_t naive_steps_per_request = 0;
    double measured_mean_steps = 0.0;
    double measured_stderr = 0.0;  // of the per-request mean
    double predicted_ratio_eq3 = 0.0;
    double predicted_ratio_eq4 = 0.0;
    double measured_ratio = 0.0;
    double relative_deviation = 0.0;  // |measured - eq3| / eq3
    double ceiling_bound = 0.0;
};

/// Measured speed-up = (student initial-training step total) / (mean
/// student_retrain steps over the requests in `request_log`). Throws
/// InvalidArgument on an empty log or an uneven configuration.
ComparisonReport predict_vs_measured(const CostLedger& ledger, const CostParams& params,
                                     std::span<const std::uint64_t> request_log);

/// Step-count simulation of teacher-targeted requests; no model is trained.
struct SimulationConfig {
    std::uint64_t M = 32;
    std::uint64_t N = 1;
    std::uint64_t r = 1;
    std::uint64_t e_prime = 120;
    std::uint64_t D = 3840;
    std::uint64_t requests = 100;
    std::uint64_t seed = 0;
};

struct SimulationRow {
    SimulationConfig config;
    std::uint64_t c = 0;  // M/N when even, otherwise the largest chunk count
    bool even = false;
    std::uint64_t naive_steps = 0;  // full initial student training
    std::vector<std::uint64_t> per_request_steps;
    std::vector<std::uint64_t> cumulative_steps;
    double mean_steps = 0.0;
    double stderr_steps = 0.0;
    double measured_ratio = 0.0;
    std::optional<double> predicted_eq3;
    std::optional<double> predicted_eq4;
    std::optional<double> deviation;
    double ceiling_bound = 0.0;

    /// stderr of the mean, relative to the mean.
    double relative_stderr() const { return mean_steps > 0 ? stderr_steps / mean_steps : 0.0; }
};

SimulationRow simulate_teacher_requests(const SimulationConfig& config);

}  // namespace purge
