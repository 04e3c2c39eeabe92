#pragma once

// Small trained systems shared by the engine tests.

#include "purge/data.hpp"
#include "purge/student.hpp"
#include "purge/teacher.hpp"
#include "purge/unlearning.hpp"

namespace fixture {

struct Shape {
    std::size_t M = 4;
    std::size_t N = 2;
    std::size_t r = 2;
    std::size_t teacher_slices = 2;
    purge::StudentMode mode = purge::StudentMode::purge;
    std::size_t points_per_class = 40;
    std::uint64_t seed = 1;
    bool shared = true;
    bool trace = false;
};

inline purge::System make_system(const Shape& s, purge::CheckpointStore& store) {
    using namespace purge;
    auto data = gen_synthetic({3, s.points_per_class, 3, 3.0, 1.0, s.seed, 0});
    Dataset teacher_data = data, student_data = data;
    if (!s.shared) student_data = gen_synthetic({3, s.points_per_class, 3, 3.0, 1.0, s.seed + 100, 100000});

    TeacherConfig tc;
    tc.members = s.M;
    tc.slices_per_shard = s.teacher_slices;
    tc.arch = {ModelKind::one_hidden_layer, 3, 3, 4};
    tc.hyper.learning_rate = 0.2;
    tc.hyper.batch_size = 8;
    tc.hyper.seed = s.seed + 7;
    tc.budget.e_prime = 3;
    tc.seed = s.seed + 11;

    StudentConfig sc;
    sc.arch = {ModelKind::softmax_linear, 3, 3, 0};
    sc.hyper.learning_rate = 0.2;
    sc.hyper.batch_size = 8;
    sc.hyper.hard_label_weight = 0.3;
    sc.hyper.seed = s.seed + 13;
    sc.budget.e_prime = 3;
    sc.mode = s.mode;
    sc.seed = s.seed + 17;
    sc.trace = s.trace;

    auto mapping = build_mapping(s.M, s.N);
    const auto slices = uniform_slices(mapping, s.r);
    return build_system(std::move(teacher_data), std::move(student_data), tc, std::move(mapping), sc, slices, store);
}

}  // namespace fixture
