// Tabular softmax policy over per-slot action logits, group rollout sampling,
// and the clipped-ratio surrogate with analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "synthenv.hpp"

namespace fgrpo {

// logits[context][slot][action]
using LogitTable = std::vector<std::vector<std::vector<double>>>;

struct PolicyParams {
    LogitTable logits;
    LogitTable ref_logits; // frozen at construction, anchors the KL penalty
};

inline LogitTable make_logit_table(int n_contexts, const std::vector<int>& slot_actions) {
    if (n_contexts < 1) throw std::invalid_argument("make_logit_table: n_contexts < 1");
    LogitTable t(static_cast<std::size_t>(n_contexts));
    for (auto& ctx : t) {
        ctx.resize(slot_actions.size());
        for (std::size_t s = 0; s < slot_actions.size(); ++s) {
            if (slot_actions[s] < 1) throw std::invalid_argument("make_logit_table: empty slot");
            ctx[s].assign(static_cast<std::size_t>(slot_actions[s]), 0.0);
        }
    }
    return t;
}

inline PolicyParams make_policy_params(int n_contexts, const std::vector<int>& slot_actions) {
    PolicyParams p;
    p.logits = make_logit_table(n_contexts, slot_actions);
    p.ref_logits = p.logits;
    return p;
}

inline PolicyParams make_policy_params(const EnvConfig& cfg) {
    const ActionSchema schema = make_schema(cfg);
    std::vector<int> slot_actions(static_cast<std::size_t>(schema.slots()));
    for (int s = 0; s < schema.slots(); ++s)
        slot_actions[static_cast<std::size_t>(s)] = schema.actions_in_slot(s);
    return make_policy_params(cfg.n_contexts, slot_actions);
}

// ------------------------------------------------------------------- softmax

inline std::vector<double> log_softmax(const std::vector<double>& z) {
    if (z.empty()) throw std::invalid_argument("log_softmax: empty logits");
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] - lse;
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
    std::vector<double> out = log_softmax(z);
    for (double& v : out) v = std::exp(v);
    return out;
}

inline std::vector<double> action_distribution(const PolicyParams& params, int context_id,
                                               int slot) {
    return softmax(params.logits.at(static_cast<std::size_t>(context_id))
                       .at(static_cast<std::size_t>(slot)));
}

// --------------------------------------------------------------------- rollouts

// Samples one action per slot; old_logprob_per_step records the behaviour
// policy's log-probabilities at sampling time. Rewards are left unfilled.
inline RolloutRecord sample_rollout(const PolicyParams& params, const EnvConfig& cfg,
                                    const SynthTask& task, Rng& rng) {
    const ActionSchema schema = make_schema(cfg);
    const auto& ctx_logits = params.logits.at(static_cast<std::size_t>(task.context_id));
    if (static_cast<int>(ctx_logits.size()) != schema.slots())
        throw std::invalid_argument("sample_rollout: slot count mismatch");

    RolloutRecord rec;
    rec.prompt_id = task.task_id;
    rec.source_tag = task.source_tag;
    rec.action_sequence.reserve(ctx_logits.size());
    rec.old_logprob_per_step.reserve(ctx_logits.size());
    for (std::size_t s = 0; s < ctx_logits.size(); ++s) {
        const std::vector<double> logp = log_softmax(ctx_logits[s]);
        std::vector<double> probs(logp.size());
        for (std::size_t j = 0; j < logp.size(); ++j) probs[j] = std::exp(logp[j]);
        const int a = rng.categorical(probs);
        rec.action_sequence.push_back(a);
        rec.old_logprob_per_step.push_back(std::min(logp[static_cast<std::size_t>(a)], 0.0));
    }
    rec.response = parse_response(decode_actions(cfg, task, rec.action_sequence));
    return rec;
}

inline RolloutGroup sample_rollouts(const PolicyParams& params, const EnvConfig& cfg,
                                    const SynthTask& task, int group_size, Rng& rng) {
    if (group_size < 2) throw std::invalid_argument("sample_rollouts: group_size < 2");
    RolloutGroup group;
    group.prompt_id = task.task_id;
    group.rollouts.reserve(static_cast<std::size_t>(group_size));
    for (int g = 0; g < group_size; ++g)
        group.rollouts.push_back(sample_rollout(params, cfg, task, rng));
    return group;
}

// Argmax per slot, lowest index on ties.
inline std::vector<int> greedy_actions(const PolicyParams& params, int context_id) {
    const auto& ctx_logits = params.logits.at(static_cast<std::size_t>(context_id));
    std::vector<int> actions;
    actions.reserve(ctx_logits.size());
    for (const auto& row : ctx_logits) {
        int best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
        actions.push_back(best);
    }
    return actions;
}

// ---------------------------------------------------------------- surrogate loss

struct PolicyBatch {
    std::vector<const RolloutRecord*> rollouts;
    std::vector<int> context_ids; // parallel to rollouts
    std::vector<double> advantages; // parallel to rollouts, one scalar per rollout
};

struct SurrogateStats {
    double loss = 0.0;
    double surrogate = 0.0; // mean clipped objective before negation
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;
    double kl = 0.0; // mean per-step KL(policy || reference)
};

struct SurrogateResult {
    SurrogateStats stats;
    LogitTable grad; // d loss / d logits, same shape as params.logits
};

namespace policy_detail {

struct RowCache {
    bool ready = false;
    std::vector<double> logp;
    std::vector<double> probs;
    std::vector<double> logq; // reference row log-probabilities, empty when no reference
    double kl = 0.0;          // KL(p || q) against the reference row, 0 when no reference
};

inline const RowCache& row_cache(std::vector<std::vector<RowCache>>& cache,
                                 const LogitTable& logits, const LogitTable* kl_ref, int ctx,
                                 int slot) {
    RowCache& rc = cache.at(static_cast<std::size_t>(ctx)).at(static_cast<std::size_t>(slot));
    if (rc.ready) return rc;
    const auto& z = logits[static_cast<std::size_t>(ctx)][static_cast<std::size_t>(slot)];
    rc.logp = log_softmax(z);
    rc.probs.resize(rc.logp.size());
    for (std::size_t j = 0; j < rc.logp.size(); ++j) rc.probs[j] = std::exp(rc.logp[j]);
    if (kl_ref != nullptr) {
        const auto& zq = kl_ref->at(static_cast<std::size_t>(ctx))
                             .at(static_cast<std::size_t>(slot));
        if (zq.size() != rc.logp.size())
            throw std::invalid_argument("surrogate: reference shape mismatch");
        const std::vector<double> logq = log_softmax(zq);
        double kl = 0.0;
        for (std::size_t j = 0; j < rc.logp.size(); ++j)
            kl += rc.probs[j] * (rc.logp[j] - logq[j]);
        rc.kl = kl;
        rc.logq = logq;
    }
    rc.ready = true;
    return rc;
}

} // namespace policy_detail

// Flat mean over every (rollout, step) term:
//   term = min(rho * A, clamp(rho, 1-eps, 1+eps) * A),  rho = exp(logp_new - logp_old)
//   loss = -mean(term) + kl_coef * mean(KL_row)
// The policy gradient flows only through the unclipped branch; ties between the
// branches resolve to the unclipped one. Pass kl_ref = nullptr to drop the KL term.
inline SurrogateResult clipped_surrogate_loss(const PolicyParams& params, const PolicyBatch& batch,
                                              double clip_ratio, double kl_coef,
                                              const LogitTable* kl_ref) {
    if (batch.rollouts.size() != batch.context_ids.size() ||
        batch.rollouts.size() != batch.advantages.size())
        throw std::invalid_argument("surrogate: batch arrays disagree");
    if (batch.rollouts.empty()) throw std::invalid_argument("surrogate: empty batch");
    if (clip_ratio <= 0.0 || clip_ratio >= 1.0)
        throw std::invalid_argument("surrogate: clip_ratio out of range");

    std::size_t n_terms = 0;
    for (const RolloutRecord* r : batch.rollouts) n_terms += r->action_sequence.size();
    if (n_terms == 0) throw std::invalid_argument("surrogate: no steps in batch");

    SurrogateResult result;
    result.grad = params.logits;
    for (auto& ctx : result.grad)
        for (auto& row : ctx) std::fill(row.begin(), row.end(), 0.0);

    std::vector<std::vector<policy_detail::RowCache>> cache(params.logits.size());
    for (std::size_t c = 0; c < params.logits.size(); ++c)
        cache[c].resize(params.logits[c].size());

    const double inv_n = 1.0 / static_cast<double>(n_terms);
    const double lo = 1.0 - clip_ratio;
    const double hi = 1.0 + clip_ratio;
    double sum_term = 0.0, sum_ratio = 0.0, sum_kl = 0.0;
    std::size_t n_clipped = 0;

    for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
        const RolloutRecord& rec = *batch.rollouts[i];
        const int ctx = batch.context_ids[i];
        const double adv = batch.advantages[i];
        if (rec.old_logprob_per_step.size() != rec.action_sequence.size())
            throw std::invalid_argument("surrogate: rollout step arrays disagree");
        for (std::size_t s = 0; s < rec.action_sequence.size(); ++s) {
            const auto& rc = policy_detail::row_cache(cache, params.logits, kl_ref, ctx,
                                                      static_cast<int>(s));
            const int a = rec.action_sequence[s];
            const double logp_new = rc.logp.at(static_cast<std::size_t>(a));
            const double rho = std::exp(logp_new - rec.old_logprob_per_step[s]);
            const double unclipped = rho * adv;
            const double clipped = std::clamp(rho, lo, hi) * adv;
            sum_term += std::min(unclipped, clipped);
            sum_ratio += rho;
            if (rho < lo || rho > hi) ++n_clipped;

            auto& grow = result.grad[static_cast<std::size_t>(ctx)][s];
            if (unclipped <= clipped) {
                const double coef = -inv_n * adv * rho;
                for (std::size_t j = 0; j < grow.size(); ++j)
                    grow[j] += coef * ((static_cast<int>(j) == a ? 1.0 : 0.0) - rc.probs[j]);
            }
            if (kl_ref != nullptr) {
                sum_kl += rc.kl;
                const double kcoef = kl_coef * inv_n;
                for (std::size_t j = 0; j < grow.size(); ++j)
                    grow[j] += kcoef * rc.probs[j] * (rc.logp[j] - rc.logq[j] - rc.kl);
            }
        }
    }

    result.stats.surrogate = sum_term * inv_n;
    result.stats.mean_ratio = sum_ratio * inv_n;
    result.stats.clip_fraction = static_cast<double>(n_clipped) * inv_n;
    result.stats.kl = sum_kl * inv_n;
    result.stats.loss = -result.stats.surrogate + kl_coef * result.stats.kl;
    return result;
}

// ------------------------------------------------------------------- optimizers

inline void apply_gradient(LogitTable& logits, const LogitTable& grad, double lr) {
    for (std::size_t c = 0; c < logits.size(); ++c)
        for (std::size_t s = 0; s < logits[c].size(); ++s)
            for (std::size_t j = 0; j < logits[c][s].size(); ++j)
                logits[c][s][j] -= lr * grad[c][s][j];
}

struct AdamState {
    LogitTable m;
    LogitTable v;
    long long t = 0;
};

inline AdamState make_adam_state(const LogitTable& shape) {
    AdamState st;
    st.m = shape;
    st.v = shape;
    for (auto* table : {&st.m, &st.v})
        for (auto& ctx : *table)
            for (auto& row : ctx) std::fill(row.begin(), row.end(), 0.0);
    return st;
}

inline void apply_adamw(LogitTable& logits, const LogitTable& grad, AdamState& st, double lr,
                        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                        double weight_decay = 0.0) {
    ++st.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (std::size_t c = 0; c < logits.size(); ++c)
        for (std::size_t s = 0; s < logits[c].size(); ++s)
            for (std::size_t j = 0; j < logits[c][s].size(); ++j) {
                const double g = grad[c][s][j];
                double& m = st.m[c][s][j];
                double& v = st.v[c][s][j];
                m = beta1 * m + (1.0 - beta1) * g;
                v = beta2 * v + (1.0 - beta2) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                logits[c][s][j] -= lr * (mhat / (std::sqrt(vhat) + eps) +
                                         weight_decay * logits[c][s][j]);
            }
}

// ---------------------------------------------------------------------- JSON io

inline json policy_params_to_json(const PolicyParams& p) {
    return json{{"logits", p.logits}, {"ref_logits", p.ref_logits}};
}

inline PolicyParams policy_params_from_json(const json& j) {
    PolicyParams p;
    p.logits = j.at("logits").get<LogitTable>();
    p.ref_logits = j.at("ref_logits").get<LogitTable>();
    if (p.ref_logits.size() != p.logits.size())
        throw std::invalid_argument("policy params: table shapes disagree");
    return p;
}

} // namespace fgrpo
