#include "purge/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "purge/error.hpp"
#include "purge/rng.hpp"
#include "purge/student.hpp"

namespace purge {

namespace {

std::int64_t i64(std::uint64_t v) { return static_cast<std::int64_t>(v); }

void require_positive(std::initializer_list<std::uint64_t> values) {
    for (auto v : values)
        if (v == 0) throw InvalidArgument("cost-model inputs must be positive integers");
}

Rational eq3_denominator(std::int64_t c, std::int64_t r) { return Rational(4 * c * c * r + 3 * c * r + 3 * c - r + 3); }

}  // namespace

double to_double(const Rational& q) {
    return static_cast<double>(q.numerator()) / static_cast<double>(q.denominator());
}

SliceEpochs epochs_per_slice(std::uint64_t e_prime, std::uint64_t c, std::uint64_t r) {
    require_positive({e_prime, c, r});
    const std::int64_t num = 2 * i64(e_prime);
    const std::int64_t den = i64(c * r) + 1;
    return {Rational(num, den), static_cast<std::uint64_t>((num + den - 1) / den)};
}

Rational retrain_steps(std::uint64_t l, std::uint64_t c, std::uint64_t r, const Rational& e_R) {
    require_positive({c, r});
    if (l < 1 || l > c)
        throw InvalidArgument("affected chunk l = " + std::to_string(l) + " outside 1.." + std::to_string(c));
    const std::int64_t first = (i64(l) - 1) * i64(r) + 1;
    const std::int64_t last = i64(c) * i64(r);
    return e_R * Rational((first + last) * (last - first + 1), 2);
}

Rational avg_retrain_steps(std::uint64_t c, std::uint64_t r, const Rational& e_R) {
    require_positive({c, r});
    const std::int64_t cc = i64(c), rr = i64(r);
    Rational sum(0);
    for (std::int64_t i = 0; i < cc; ++i) sum += Rational(((i * rr + 1) + cc * rr) * ((cc - i) * rr), 2);
    return e_R / Rational(cc) * sum;
}

Rational brute_force_avg_steps(std::uint64_t c, std::uint64_t r, const Rational& e_R) {
    require_positive({c, r});
    Rational total(0);
    for (std::uint64_t l = 1; l <= c; ++l) {
        // Replay every round from the first slice of chunk l; round q covers q slices.
        for (std::uint64_t q = (l - 1) * r + 1; q <= c * r; ++q) {
            Rational round_cost(0);
            for (std::uint64_t s = 1; s <= q; ++s) round_cost += e_R;
            total += round_cost;
        }
    }
    return total / Rational(i64(c));
}

Rational speedup_vs_N(std::uint64_t N, std::uint64_t c, std::uint64_t r) {
    require_positive({N, c, r});
    const std::int64_t cc = i64(c), rr = i64(r);
    return Rational(i64(N)) * Rational(6 * cc * cc * rr + 6 * cc) / eq3_denominator(cc, rr);
}

Rational speedup_vs_M(std::uint64_t M, std::uint64_t c, std::uint64_t r) {
    require_positive({M, c, r});
    const std::int64_t cc = i64(c), rr = i64(r);
    return Rational(i64(M)) * Rational(6 * cc * rr + 6) / eq3_denominator(cc, rr);
}

bool speedup_forms_agree(std::uint64_t M, std::uint64_t c, std::uint64_t r) {
    require_positive({M, c, r});
    if (M % c != 0)
        throw InvalidArgument("non-even configuration: c = " + std::to_string(c) + " does not divide M = " +
                              std::to_string(M));
    return speedup_vs_M(M, c, r) == speedup_vs_N(M / c, c, r);
}

Rational student_side_cost_fraction(std::uint64_t R) {
    require_positive({R});
    return Rational(2, 3) + Rational(1, 3 * i64(R));
}

Rational student_side_expected_fraction(std::span<const std::size_t> slice_sizes) {
    if (slice_sizes.empty()) throw InvalidArgument("shard has no slices");
    const std::size_t R = slice_sizes.size();
    std::vector<std::int64_t> cumulative(R);
    std::int64_t running = 0;
    for (std::size_t q = 0; q < R; ++q) cumulative[q] = running += static_cast<std::int64_t>(slice_sizes[q]);
    if (running == 0) throw InvalidArgument("shard has no points");

    const std::int64_t full = std::accumulate(cumulative.begin(), cumulative.end(), std::int64_t{0});
    std::int64_t expected_numerator = 0;  // Σ over points of replayed work
    for (std::size_t j = 0; j < R; ++j) {
        std::int64_t replay = 0;
        for (std::size_t q = j; q < R; ++q) replay += cumulative[q];
        expected_numerator += static_cast<std::int64_t>(slice_sizes[j]) * replay;
    }
    return Rational(expected_numerator) / Rational(running * full);
}

double CostParams::ceiling_bound() const {
    const auto e = slice_epochs();
    const double exact = to_double(e.exact);
    return std::abs(static_cast<double>(e.practical) - exact) / exact;
}

ComparisonReport predict_vs_measured(const CostLedger& ledger, const CostParams& params,
                                     std::span<const std::uint64_t> request_log) {
    if (request_log.empty()) throw InvalidArgument("no requests to compare");
    if (!params.even())
        throw InvalidArgument("non-even configuration: N*c != M, closed forms do not apply");

    ComparisonReport rep;
    rep.params = params;
    rep.requests = request_log.size();
    rep.naive_steps_per_request = ledger.total(Phase::initial_train, Role::student);

    std::vector<double> steps;
    for (auto req : request_log) steps.push_back(static_cast<double>(ledger.total_for_request(req, Phase::student_retrain)));
    const double n = static_cast<double>(steps.size());
    const double mean = std::accumulate(steps.begin(), steps.end(), 0.0) / n;
    double var = 0.0;
    for (double s : steps) var += (s - mean) * (s - mean);
    var = steps.size() > 1 ? var / (n - 1.0) : 0.0;

    rep.measured_mean_steps = mean;
    rep.measured_stderr = std::sqrt(var / n);
    rep.predicted_ratio_eq3 = to_double(speedup_vs_N(params.N, params.c, params.r));
    rep.predicted_ratio_eq4 = to_double(speedup_vs_M(params.M, params.c, params.r));
    rep.measured_ratio = mean > 0 ? static_cast<double>(rep.naive_steps_per_request) / mean : 0.0;
    rep.relative_deviation = std::abs(rep.measured_ratio - rep.predicted_ratio_eq3) / rep.predicted_ratio_eq3;
    rep.ceiling_bound = params.ceiling_bound();
    return rep;
}

SimulationRow simulate_teacher_requests(const SimulationConfig& cfg) {
    require_positive({cfg.M, cfg.N, cfg.r, cfg.e_prime, cfg.D});
    SimulationRow row;
    row.config = cfg;

    const auto mapping = build_mapping(cfg.M, cfg.N);
    const auto counts = mapping.chunk_counts();
    row.even = cfg.M % cfg.N == 0;
    row.c = *std::max_element(counts.begin(), counts.end());

    std::vector<PointId> ids(cfg.D);
    std::iota(ids.begin(), ids.end(), PointId{0});
    const auto plan = make_partition(ids, cfg.N, counts, uniform_slices(mapping, cfg.r), derive_seed(cfg.seed, {0x5e1}));
    const TrainBudget budget{cfg.e_prime};

    // cost_from[k][q]: work of replaying rounds q.. of shard k.
    std::vector<std::vector<std::uint64_t>> cost_from(cfg.N);
    for (std::size_t k = 0; k < cfg.N; ++k) {
        const auto rounds = rounds_of(plan, k);
        const std::uint64_t epochs = budget.epochs_per_slice(rounds.size());
        std::vector<std::uint64_t> round_cost;
        std::uint64_t cumulative = 0;
        for (const auto& rd : rounds) {
            cumulative += plan.shard(k).chunks[rd.chunk].slices[rd.slice].size();
            round_cost.push_back(epochs * cumulative);
        }
        cost_from[k].assign(rounds.size() + 1, 0);
        for (std::size_t q = rounds.size(); q-- > 0;) cost_from[k][q] = cost_from[k][q + 1] + round_cost[q];
        row.naive_steps += cost_from[k][0];
    }

    Rng rng(derive_seed(cfg.seed, {0x4e9}));
    std::uint64_t running = 0;
    for (std::uint64_t i = 0; i < cfg.requests; ++i) {
        const auto owner = mapping.owner_of(rng.below(cfg.M));
        const auto steps = cost_from[owner.student][first_round_of_chunk(plan, owner.student, owner.position)];
        row.per_request_steps.push_back(steps);
        running += steps;
        row.cumulative_steps.push_back(running);
    }

    if (!row.per_request_steps.empty()) {
        const double n = static_cast<double>(row.per_request_steps.size());
        row.mean_steps = static_cast<double>(running) / n;
        double var = 0.0;
        for (auto s : row.per_request_steps) var += (static_cast<double>(s) - row.mean_steps) * (static_cast<double>(s) - row.mean_steps);
        var = n > 1 ? var / (n - 1.0) : 0.0;
        row.stderr_steps = std::sqrt(var / n);
        row.measured_ratio = static_cast<double>(row.naive_steps) / row.mean_steps;
    }
    if (row.even) {
        const CostParams params{cfg.N, cfg.M, row.c, cfg.r, cfg.e_prime, cfg.D};
        row.predicted_eq3 = to_double(speedup_vs_N(cfg.N, row.c, cfg.r));
        row.predicted_eq4 = to_double(speedup_vs_M(cfg.M, row.c, cfg.r));
        row.ceiling_bound = params.ceiling_bound();
        if (row.mean_steps > 0) row.deviation = std::abs(row.measured_ratio - *row.predicted_eq3) / *row.predicted_eq3;
    }
    return row;
}

}  // namespace purge
