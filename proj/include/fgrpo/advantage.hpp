// Group-relative advantages: per-signal normalization, decoupled combination,
// coupled scalar baselines, batch whitening.
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "core.hpp"

namespace fgrpo {

namespace detail {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // population
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd ms;
    if (v.empty()) return ms;
    for (double x : v) ms.mean += x;
    ms.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - ms.mean) * (x - ms.mean);
    ms.std = std::sqrt(var / static_cast<double>(v.size()));
    return ms;
}

} // namespace detail

inline std::vector<double> group_normalize(const std::vector<double>& values, double eps) {
    const auto ms = detail::mean_std(values);
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - ms.mean) / (ms.std + eps);
    return out;
}

// Statistics over present entries only; absent entries stay absent.
inline std::vector<std::optional<double>>
masked_group_normalize(const std::vector<std::optional<double>>& values, double eps) {
    std::vector<double> present;
    for (const auto& v : values)
        if (v) present.push_back(*v);
    const auto ms = detail::mean_std(present);
    std::vector<std::optional<double>> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i]) out[i] = (*values[i] - ms.mean) / (ms.std + eps);
    return out;
}

struct AdvantageBreakdown {
    double a_task = 0.0;
    std::array<std::optional<double>, 3> a_k{}; // consistency, sentence, spatial
    double combined = 0.0;                      // a_task + sum_k lambda_k * a_k
    double whitened = 0.0;                      // filled by the batch whitening pass
};

// Each signal is normalized independently within the group; masked-out signals
// contribute exactly zero to the combination.
inline std::vector<AdvantageBreakdown> fgrpo_advantage(const RolloutGroup& group,
                                                       const LagrangeState& lagrange,
                                                       double eps) {
    const std::size_t g = group.rollouts.size();
    if (g < 2) throw std::invalid_argument("fgrpo_advantage: group smaller than 2");

    std::vector<double> task(g);
    for (std::size_t i = 0; i < g; ++i) task[i] = group.rollouts[i].rewards.r_task;
    const auto a_task = group_normalize(task, eps);

    std::array<std::vector<std::optional<double>>, 3> a_k;
    for (Constraint k : kConstraints) {
        std::vector<std::optional<double>> vals(g);
        for (std::size_t i = 0; i < g; ++i)
            vals[i] = constraint_value(group.rollouts[i].rewards, k);
        a_k[static_cast<int>(k)] = masked_group_normalize(vals, eps);
    }

    std::vector<AdvantageBreakdown> out(g);
    for (std::size_t i = 0; i < g; ++i) {
        out[i].a_task = a_task[i];
        out[i].combined = a_task[i];
        for (Constraint k : kConstraints) {
            const int ki = static_cast<int>(k);
            out[i].a_k[ki] = a_k[ki][i];
            if (out[i].a_k[ki]) out[i].combined += lagrange.lambda[ki] * *out[i].a_k[ki];
        }
        out[i].whitened = out[i].combined;
    }
    return out;
}

// Scalar baselines that fold constraint signals into one reward before
// group normalization. Masked-out signals enter the products as 0.
inline double coupled_additive_reward(const RewardVector& rv) {
    const double rc = rv.r_c.value_or(0.0);
    const double rg = rv.r_g.value_or(0.0);
    return (rv.r_acc + rv.r_acc * rc + rv.r_fmt * rg) / 3.0;
}

inline double coupled_multiplicative_reward(const RewardVector& rv) {
    const double rc = rv.r_c.value_or(0.0);
    const double rg = rv.r_g.value_or(0.0);
    return 0.5 * rv.r_acc * rc + 0.5 * rv.r_fmt * rg;
}

// Final zero-mean/unit-scale pass over the whole batch of combined advantages.
inline std::vector<double> whiten(const std::vector<double>& advantages, double eps) {
    const auto ms = detail::mean_std(advantages);
    std::vector<double> out(advantages.size());
    for (std::size_t i = 0; i < advantages.size(); ++i)
        out[i] = (advantages[i] - ms.mean) / (ms.std + eps);
    return out;
}

} // namespace fgrpo
