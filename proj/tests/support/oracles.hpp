#pragma once

// Reference computations used by the tests. Each one is written directly
// from the mathematical definition, without calling the code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include "purge/costmodel.hpp"
#include "purge/model.hpp"
#include "purge/student.hpp"
#include "purge/teacher.hpp"

namespace oracle {

using purge::ModelArch;
using purge::ModelKind;
using purge::ModelState;
using purge::Rational;

/// Logits by explicit index arithmetic over the documented layout.
inline std::vector<double> logits(const ModelState& s, const std::vector<double>& x) {
    const auto d = s.arch.feature_dim, K = s.arch.num_classes;
    const auto& p = s.params;
    std::vector<double> z(K, 0.0);
    if (s.arch.kind == ModelKind::softmax_linear) {
        for (std::size_t c = 0; c < K; ++c) {
            double acc = p[d * K + c];
            for (std::size_t i = 0; i < d; ++i) acc += x[i] * p[i * K + c];
            z[c] = acc;
        }
        return z;
    }
    const auto H = s.arch.hidden_units;
    const std::size_t w1 = 0, b1 = d * H, w2 = b1 + H, b2 = w2 + H * K;
    std::vector<double> h(H);
    for (std::size_t u = 0; u < H; ++u) {
        double acc = p[b1 + u];
        for (std::size_t i = 0; i < d; ++i) acc += x[i] * p[w1 + i * H + u];
        h[u] = std::tanh(acc);
    }
    for (std::size_t c = 0; c < K; ++c) {
        double acc = p[b2 + c];
        for (std::size_t u = 0; u < H; ++u) acc += h[u] * p[w2 + u * K + c];
        z[c] = acc;
    }
    return z;
}

inline std::vector<double> softmax(std::vector<double> z, double temperature = 1.0) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp((v - m) / temperature));
    for (auto& v : z) v /= sum;
    return z;
}

inline double loss(const std::vector<double>& p, const std::vector<double>& soft, std::size_t hard, double alpha) {
    double soft_ce = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) soft_ce -= soft[i] * std::log(std::max(p[i], 1e-12));
    const double hard_ce = -std::log(std::max(p[hard], 1e-12));
    return (1.0 - alpha) * soft_ce + alpha * hard_ce;
}

inline double example_loss(const ModelState& s, const std::vector<double>& x, const std::vector<double>& soft,
                           std::size_t hard, double alpha) {
    return loss(softmax(logits(s, x)), soft, hard, alpha);
}

/// Central differences of example_loss with respect to every parameter.
inline std::vector<double> fd_gradient(const ModelState& s, const std::vector<double>& x,
                                       const std::vector<double>& soft, std::size_t hard, double alpha,
                                       double h = 1e-6) {
    std::vector<double> g(s.params.size());
    ModelState t = s;
    for (std::size_t i = 0; i < g.size(); ++i) {
        t.params[i] = s.params[i] + h;
        const double up = example_loss(t, x, soft, hard, alpha);
        t.params[i] = s.params[i] - h;
        const double down = example_loss(t, x, soft, hard, alpha);
        t.params[i] = s.params[i];
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline std::vector<double> mean(const std::vector<std::vector<double>>& vs) {
    std::vector<double> out(vs.at(0).size(), 0.0);
    for (const auto& v : vs)
        for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
    for (auto& v : out) v /= static_cast<double>(vs.size());
    return out;
}

/// Average retraining work over l = 1..c by listing every replayed round
/// and every slice it touches, one e_R at a time.
inline Rational enumerate_avg_retrain(std::uint64_t c, std::uint64_t r, const Rational& e_R) {
    Rational total(0);
    for (std::uint64_t l = 1; l <= c; ++l)
        for (std::uint64_t chunk = l; chunk <= c; ++chunk)
            for (std::uint64_t slice = 1; slice <= r; ++slice) {
                const std::uint64_t slices_seen = (chunk - 1) * r + slice;
                for (std::uint64_t s = 0; s < slices_seen; ++s) total += e_R;
            }
    return total / Rational(static_cast<std::int64_t>(c));
}

/// Expected replay fraction for student-side requests, one removal position
/// at a time.
inline Rational enumerate_student_fraction(const std::vector<std::size_t>& slice_sizes) {
    std::int64_t full = 0;
    std::int64_t seen = 0;
    std::vector<std::int64_t> round_cost;
    for (auto s : slice_sizes) {
        seen += static_cast<std::int64_t>(s);
        round_cost.push_back(seen);
        full += seen;
    }
    Rational total(0);
    std::int64_t points = 0;
    for (std::size_t j = 0; j < slice_sizes.size(); ++j)
        for (std::size_t p = 0; p < slice_sizes[j]; ++p) {
            std::int64_t replay = 0;
            for (std::size_t q = j; q < round_cost.size(); ++q) replay += round_cost[q];
            total += Rational(replay, full);
            ++points;
        }
    return total / Rational(points);
}

inline std::uint64_t directory_bytes(const std::filesystem::path& root) {
    std::uint64_t total = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.is_regular_file()) total += e.file_size();
    return total;
}

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Student constituent k trained from its initial state on `plan`, labels
/// regenerated from `teachers`, rounds written out as explicit loops.
inline ModelState scratch_student(const purge::StudentNetwork& net, const purge::PartitionPlan& plan,
                                  const purge::TeacherEnsemble& teachers, const purge::Dataset& data,
                                  std::size_t k) {
    const auto& shard = plan.shard(k);
    std::size_t total_slices = 0;
    for (const auto& ch : shard.chunks) total_slices += ch.slices.size();
    const std::size_t epochs = (2 * net.config.budget.e_prime + total_slices) / (total_slices + 1);

    std::vector<std::vector<std::vector<double>>> labels(shard.chunks.size());
    for (std::size_t l = 0; l < shard.chunks.size(); ++l) {
        std::vector<std::size_t> members;
        const auto& group = net.mapping.assignment[k];
        switch (net.config.mode) {
            case purge::StudentMode::purge: members.assign(group.begin(), group.begin() + l + 1); break;
            case purge::StudentMode::single_teacher: members = {group[l]}; break;
            case purge::StudentMode::naive_sisa:
                members.resize(teachers.size());
                std::iota(members.begin(), members.end(), std::size_t{0});
                break;
        }
        for (const auto& slice : shard.chunks[l].slices)
            for (auto id : slice) {
                std::vector<std::vector<double>> outs;
                for (auto t : members) {
                    outs.push_back(softmax(logits(teachers.members[t], data.at(id).features),
                                           net.config.hyper.temperature));
                }
                labels[l].push_back(mean(outs));
            }
    }

    ModelState state = net.initial_state(k);
    std::vector<purge::TrainExample> seen;
    for (std::size_t l = 0; l < shard.chunks.size(); ++l) {
        std::size_t pos = 0;
        for (const auto& slice : shard.chunks[l].slices) {
            for (auto id : slice) {
                const auto& p = data.at(id);
                seen.push_back({p.features, labels[l][pos++], p.label});
            }
            if (!seen.empty()) state = purge::train(std::move(state), seen, epochs, net.constituent_hyper(k));
        }
    }
    return state;
}

}  // namespace oracle
