#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "purge/costmodel.hpp"
#include "purge/error.hpp"
#include "purge/ledger.hpp"

using namespace purge;

TEST_CASE("speed-up closed form examples") {
    CHECK(speedup_vs_N(16, 2, 1) == Rational(96, 5));
    CHECK(to_double(speedup_vs_N(16, 2, 1)) == doctest::Approx(19.2));
    for (std::uint64_t N : {1u, 3u, 32u})
        for (std::uint64_t r : {1u, 4u}) CHECK(speedup_vs_N(N, 1, r) == Rational(static_cast<std::int64_t>(N)));
    CHECK(speedup_vs_M(32, 1, 1) == Rational(32));
    CHECK(speedup_vs_M(32, 1, 4) == Rational(32));
}

TEST_CASE("the two speed-up forms agree whenever c divides M") {
    for (std::uint64_t M = 1; M <= 64; ++M)
        for (std::uint64_t c = 1; c <= M; ++c) {
            if (M % c) {
                CHECK_THROWS_AS(speedup_forms_agree(M, c, 1), InvalidArgument);
                continue;
            }
            for (std::uint64_t r : {1u, 2u, 5u}) CHECK(speedup_forms_agree(M, c, r));
        }
}

TEST_CASE("average retraining work") {
    CHECK(avg_retrain_steps(2, 1, Rational(1)) == Rational(5, 2));
    CHECK(retrain_steps(1, 2, 1, Rational(1)) == Rational(3));
    CHECK(retrain_steps(2, 2, 1, Rational(1)) == Rational(2));
    for (std::uint64_t c = 1; c <= 8; ++c)
        for (std::uint64_t r = 1; r <= 5; ++r) {
            const Rational e(7, 3);
            const auto want = oracle::enumerate_avg_retrain(c, r, e);
            CHECK(avg_retrain_steps(c, r, e) == want);
            CHECK(brute_force_avg_steps(c, r, e) == want);
        }
}

TEST_CASE("per-slice epochs") {
    const auto e = epochs_per_slice(20, 2, 2);
    CHECK(e.exact == Rational(8));
    CHECK(e.practical == 8);
    const auto f = epochs_per_slice(120, 4, 4);
    CHECK(f.exact == Rational(240, 17));
    CHECK(f.practical == 15);
    const CostParams p{8, 32, 4, 4, 120, 3840};
    CHECK(p.ceiling_bound() == doctest::Approx((15.0 - 240.0 / 17) / (240.0 / 17)));
}

TEST_CASE("student-side cost fraction") {
    CHECK(student_side_cost_fraction(1) == Rational(1));
    CHECK(student_side_cost_fraction(4) == Rational(3, 4));
    for (std::uint64_t R = 1; R <= 12; ++R) {
        CHECK(student_side_cost_fraction(R) == Rational(2, 3) + Rational(1, 3 * static_cast<std::int64_t>(R)));
        const std::vector<std::size_t> even(R, 5);
        CHECK(student_side_expected_fraction(even) == student_side_cost_fraction(R));
        CHECK(oracle::enumerate_student_fraction(even) == student_side_cost_fraction(R));
    }
    const std::vector<std::size_t> uneven{4, 3, 3, 1};
    CHECK(student_side_expected_fraction(uneven) == oracle::enumerate_student_fraction(uneven));
}

TEST_CASE("predict_vs_measured on a hand-built ledger") {
    CostLedger ledger;
    ledger.append({0, Phase::initial_train, Role::student, 0, 600});
    ledger.append({0, Phase::initial_train, Role::student, 1, 600});
    ledger.append({0, Phase::initial_train, Role::teacher, 0, 999});
    ledger.append({1, Phase::student_retrain, Role::student, 0, 100});
    ledger.append({2, Phase::student_retrain, Role::student, 1, 300});
    ledger.append({2, Phase::teacher_retrain, Role::teacher, 3, 77});
    const std::vector<std::uint64_t> log{1, 2};
    const CostParams params{2, 4, 2, 1, 20, 100};
    const auto rep = predict_vs_measured(ledger, params, log);
    CHECK(rep.naive_steps_per_request == 1200);
    CHECK(rep.measured_mean_steps == doctest::Approx(200));
    CHECK(rep.measured_ratio == doctest::Approx(6));
    CHECK(rep.predicted_ratio_eq3 == doctest::Approx(to_double(speedup_vs_N(2, 2, 1))));
    CHECK(rep.measured_stderr == doctest::Approx(100));
    CHECK(rep.relative_deviation == doctest::Approx(std::abs(6 - 2.4) / 2.4));

    CHECK_THROWS_AS(predict_vs_measured(ledger, params, std::vector<std::uint64_t>{}), InvalidArgument);
    CHECK_THROWS_AS(predict_vs_measured(ledger, CostParams{3, 4, 1, 1, 20, 100}, log), InvalidArgument);
}

TEST_CASE("simulation: one teacher per student matches N exactly") {
    SimulationConfig cfg;
    cfg.N = 32;
    cfg.requests = 100;
    const auto row = simulate_teacher_requests(cfg);
    CHECK(row.even);
    CHECK(row.c == 1);
    REQUIRE(row.predicted_eq3);
    CHECK(*row.predicted_eq3 == 32.0);
    CHECK(row.measured_ratio == doctest::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("simulation tracks the closed form within its error budget") {
    for (std::uint64_t N : {1u, 2u, 4u, 8u, 16u})
        for (std::uint64_t r : {1u, 4u}) {
            SimulationConfig cfg;
            cfg.N = N;
            cfg.r = r;
            cfg.seed = 3;
            const auto row = simulate_teacher_requests(cfg);
            REQUIRE(row.deviation);
            CAPTURE(N);
            CAPTURE(r);
            CHECK(*row.deviation <= row.ceiling_bound + 3 * row.relative_stderr());
            CHECK(row.cumulative_steps.size() == 100);
            CHECK(row.cumulative_steps.back() ==
                  std::accumulate(row.per_request_steps.begin(), row.per_request_steps.end(), std::uint64_t{0}));
        }
}

TEST_CASE("finer slicing lowers the relative speed-up") {
    for (std::uint64_t N : {1u, 2u, 4u, 8u}) {
        SimulationConfig a;
        a.N = N;
        a.seed = 5;
        auto b = a;
        b.r = 4;
        const auto ra = simulate_teacher_requests(a), rb = simulate_teacher_requests(b);
        CHECK(rb.measured_ratio <= ra.measured_ratio);
        CHECK(speedup_vs_N(N, 32 / N, 4) < speedup_vs_N(N, 32 / N, 1));
    }
    CHECK(speedup_vs_N(32, 1, 4) == speedup_vs_N(32, 1, 1));
}

TEST_CASE("uneven simulation has no prediction") {
    SimulationConfig cfg;
    cfg.M = 10;
    cfg.N = 4;
    cfg.D = 400;
    const auto row = simulate_teacher_requests(cfg);
    CHECK_FALSE(row.even);
    CHECK_FALSE(row.predicted_eq3);
    CHECK_FALSE(row.deviation);
    CHECK(row.c == 3);
}

TEST_CASE("ledger csv round-trip and totals") {
    CostLedger ledger;
    ledger.append({0, Phase::initial_train, Role::teacher, 1, 10});
    ledger.append({0, Phase::initial_train, Role::student, 0, 20});
    ledger.append({3, Phase::relabel_inference, Role::student, 0, 5});
    ledger.append({3, Phase::student_retrain, Role::student, 2, 7});
    ledger.append({3, Phase::student_retrain, Role::student, 1, 8});
    CHECK(ledger.total(Phase::initial_train) == 30);
    CHECK(ledger.total(Phase::initial_train, Role::student) == 20);
    CHECK(ledger.total_for_request(3, Phase::student_retrain) == 15);
    const auto p = std::filesystem::temp_directory_path() / "purge_test_ledger.csv";
    ledger.write_csv(p);
    CHECK(CostLedger::read_csv(p) == ledger);
    for (auto ph : {Phase::initial_train, Phase::teacher_retrain, Phase::student_retrain, Phase::relabel_inference})
        CHECK(phase_from_string(to_string(ph)) == ph);
    CHECK_THROWS(phase_from_string("warmup"));
}
