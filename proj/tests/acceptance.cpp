// Acceptance gate. Eleven numbered checks, one PASS/FAIL line each, exit code
// 1 when any check fails. Every tolerance and threshold is pinned inline next
// to the check that uses it; nothing here depends on gtest.
#include "fgrpo/cli.hpp"
#include "fgrpo/mcts.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace fgrpo;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int number, const char* claim, bool ok, const std::string& detail) {
    std::printf("%s  check %2d  %s%s%s\n", ok ? "PASS" : "FAIL", number, claim,
                detail.empty() ? "" : "  [", detail.empty() ? "" : (detail + "]").c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

// ------------------------------------------------------------------- check 1

// Exhaustive best injective pairing of the smaller box list into the larger,
// same pair score as the production matcher (clamped complete-iou).
double exhaustive_best_score(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    const bool pred_rows = pred.size() <= gt.size();
    const std::vector<BBox>& rows = pred_rows ? pred : gt;
    const std::vector<BBox>& cols = pred_rows ? gt : pred;
    std::vector<char> used(cols.size(), 0);
    std::function<double(std::size_t)> rec = [&](std::size_t i) -> double {
        if (i == rows.size()) return 0.0;
        double best = -1.0;
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (used[j]) continue;
            used[j] = 1;
            const double s = pred_rows ? std::max(0.0, ciou(rows[i], cols[j]))
                                       : std::max(0.0, ciou(cols[j], rows[i]));
            best = std::max(best, s + rec(i + 1));
            used[j] = 0;
        }
        return best;
    };
    return rec(0);
}

BBox random_box(Rng& rng) {
    const double x = rng.uniform() * 80.0;
    const double y = rng.uniform() * 80.0;
    const double w = 2.0 + rng.uniform() * 60.0;
    const double h = 2.0 + rng.uniform() * 60.0;
    return BBox{x, y, x + w, y + h};
}

void check_1_matching() {
    const double tol = 1e-9;
    const double budget_s = 5.0;
    Rng rng = seeded_rng(101);
    double max_diff = 0.0;
    const double t0 = now_seconds();
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(5);
        const std::size_t m = 1 + rng.uniform_index(5);
        std::vector<BBox> pred, gt;
        for (std::size_t i = 0; i < n; ++i) pred.push_back(random_box(rng));
        for (std::size_t j = 0; j < m; ++j) gt.push_back(random_box(rng));
        const Assignment a = hungarian_match(pred, gt);
        const double want = exhaustive_best_score(pred, gt);
        max_diff = std::max(max_diff, std::abs(a.total_score - want));
    }
    const double secs = now_seconds() - t0;
    report(1, "box matching equals exhaustive assignment search",
           max_diff <= tol && secs < budget_s,
           "1000 instances, max diff " + fmt("%.2e", max_diff) + ", " + fmt("%.2f", secs) + "s");
}

// ------------------------------------------------------------------- check 2

void check_2_ciou() {
    const double tol = 1e-9;
    const BBox a{0, 0, 2, 2}, b{1, 1, 3, 3};
    bool ok = std::abs(ciou(a, a) - 1.0) <= tol;
    ok = ok && std::abs(iou(a, b) - 1.0 / 7.0) <= tol;
    ok = ok && std::abs(ciou(a, b) - 2.0 / 63.0) <= tol;
    ok = ok && ciou(BBox{0, 0, 1, 1}, BBox{10, 10, 11, 11}) < 0.0;

    Rng rng = seeded_rng(202);
    double max_asym = 0.0;
    int bound_violations = 0;
    for (int trial = 0; trial < 100000; ++trial) {
        const BBox p = random_box(rng), q = random_box(rng);
        max_asym = std::max(max_asym, std::abs(ciou(p, q) - ciou(q, p)));
        if (!(ciou(p, q) <= iou(p, q))) ++bound_violations;
    }
    ok = ok && max_asym <= 1e-12 && bound_violations == 0;
    report(2, "complete-iou worked values, symmetry, iou upper bound", ok,
           "1e5 pairs, max asymmetry " + fmt("%.2e", max_asym));
}

// ------------------------------------------------------------------- check 3

RolloutRecord reward_only_rollout(RewardVector rv) {
    RolloutRecord r;
    r.rewards = rv;
    return r;
}

void check_3_constraint_score() {
    Rng rng = seeded_rng(303);
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        std::vector<RolloutGroup> batch(1 + rng.uniform_index(4));
        for (auto& g : batch) {
            const std::size_t n = 2 + rng.uniform_index(5);
            for (std::size_t i = 0; i < n; ++i) {
                RewardVector rv;
                rv.r_acc = rng.bernoulli(0.5) ? 1.0 : 0.0;
                rv.r_fmt = 1.0;
                rv.r_task = task_reward(rv.r_acc, rv.r_fmt);
                if (rng.bernoulli(0.6)) rv.r_c = rng.uniform();
                if (rng.bernoulli(0.6)) rv.r_s = rng.uniform();
                if (rng.bernoulli(0.6)) rv.r_g = rng.uniform();
                g.rollouts.push_back(reward_only_rollout(rv));
            }
        }
        for (Constraint k : kConstraints) {
            double sum = 0.0;
            int count = 0;
            for (const auto& g : batch)
                for (const auto& r : g.rollouts)
                    if (const auto& v = constraint_value(r.rewards, k)) {
                        sum += *v;
                        ++count;
                    }
            const ConstraintBatchScore got = batch_constraint_score(batch, k);
            ok = ok && got.applicable == count && got.cbar.has_value() == (count > 0);
            if (count > 0) ok = ok && *got.cbar == sum / static_cast<double>(count);
        }
    }

    // a signal absent from the whole batch must come back empty and leave the
    // multiplier untouched
    std::vector<RolloutGroup> empty_batch(2);
    for (auto& g : empty_batch)
        for (int i = 0; i < 3; ++i) {
            RewardVector rv;
            rv.r_acc = 1.0;
            rv.r_fmt = 1.0;
            rv.r_task = 1.0;
            g.rollouts.push_back(reward_only_rollout(rv));
        }
    const ConstraintBatchScore none = batch_constraint_score(empty_batch, Constraint::consistency);
    LagrangeState st;
    st.lambda[0] = 2.5;
    dual_update(st, Constraint::consistency, none);
    ok = ok && !none.cbar && none.applicable == 0 && st.lambda[0] == 2.5 &&
         st.last_applicable[0] == 0;
    report(3, "batch constraint score equals direct masked mean; empty signal freezes the dual",
           ok, "1000 random batches, exact equality");
}

// ------------------------------------------------------------------- check 4

void check_4_dual_drive() {
    bool ok = true;
    std::string detail;

    LagrangeState up;
    up.lambda[0] = 1.0;
    const double cbar_low = 0.65;
    const double delta_up = up.eta_lambda * (up.tau[0] - cbar_low);
    const int predicted_up = static_cast<int>(std::ceil((up.lambda_max - 1.0) / delta_up));
    int steps_up = 0;
    while (up.lambda[0] < up.lambda_max && steps_up < 100000) {
        dual_update(up, Constraint::consistency, ConstraintBatchScore{cbar_low, 32});
        ++steps_up;
    }
    ok = ok && steps_up == predicted_up && up.lambda[0] == up.lambda_max;

    LagrangeState down;
    down.lambda[0] = down.lambda_max;
    const double cbar_high = 1.25;
    const double delta_down = down.eta_lambda * (cbar_high - down.tau[0]);
    const int predicted_down = static_cast<int>(std::ceil(down.lambda_max / delta_down));
    int steps_down = 0;
    while (down.lambda[0] > 0.0 && steps_down < 100000) {
        dual_update(down, Constraint::consistency, ConstraintBatchScore{cbar_high, 32});
        ++steps_down;
    }
    ok = ok && steps_down == predicted_down && down.lambda[0] == 0.0;

    Rng rng = seeded_rng(404);
    LagrangeState fuzz;
    bool bounded = true;
    for (int i = 0; i < 1000000; ++i) {
        const Constraint k = kConstraints[rng.uniform_index(3)];
        const double cbar = -1.0 + 3.0 * rng.uniform();
        const int applicable = 8 + static_cast<int>(rng.uniform_index(32));
        dual_update(fuzz, k, ConstraintBatchScore{cbar, applicable});
        for (double l : fuzz.lambda) bounded = bounded && l >= 0.0 && l <= fuzz.lambda_max;
    }
    ok = ok && bounded;

    LagrangeState thin;
    thin.lambda[1] = 3.3;
    dual_update(thin, Constraint::sentence, ConstraintBatchScore{0.2, 7});
    ok = ok && thin.lambda[1] == 3.3 && thin.last_applicable[1] == 7;

    detail = "up " + std::to_string(steps_up) + "/" + std::to_string(predicted_up) + ", down " +
             std::to_string(steps_down) + "/" + std::to_string(predicted_down) +
             ", 1e6 fuzzed updates stayed in [0, 5]";
    report(4, "dual ascent hits its bounds in the predicted step counts and stays clipped", ok,
           detail);
}

// ------------------------------------------------------------------- check 5

void check_5_coupled_ordering() {
    const double eps = 1e-4;
    Rng rng = seeded_rng(505);
    bool ok = true;
    for (int trial = 0; trial < 500 && ok; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(7);
        // constants on the 1/8 grid so the group mean reproduces them bit for
        // bit; cancellation to exactly 0.0 is only defined for exact means
        const double c = static_cast<double>(rng.uniform_index(9)) / 8.0;
        const double s = static_cast<double>(rng.uniform_index(9)) / 8.0;
        const double g = static_cast<double>(rng.uniform_index(9)) / 8.0;
        RolloutGroup group;
        std::vector<double> task_vals, add_vals;
        for (std::size_t i = 0; i < n; ++i) {
            RewardVector rv;
            rv.r_acc = rng.bernoulli(0.5) ? 1.0 : 0.0;
            rv.r_fmt = 1.0;
            rv.r_task = task_reward(rv.r_acc, rv.r_fmt);
            rv.r_c = c;
            rv.r_s = s;
            rv.r_g = g;
            group.rollouts.push_back(reward_only_rollout(rv));
            task_vals.push_back(rv.r_task);
            add_vals.push_back(coupled_additive_reward(rv));
        }
        const std::vector<double> a_task = group_normalize(task_vals, eps);
        const std::vector<double> a_add = group_normalize(add_vals, eps);
        for (std::size_t i = 0; i < n && ok; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                ok = ok && (a_add[i] < a_add[j]) == (a_task[i] < a_task[j]) &&
                     (a_add[i] > a_add[j]) == (a_task[i] > a_task[j]) &&
                     (a_add[i] == a_add[j]) == (a_task[i] == a_task[j]);
                if (!ok) break;
            }

        const LagrangeState st;
        const auto breakdown = fgrpo_advantage(group, st, eps);
        for (const auto& b : breakdown)
            for (int ki = 0; ki < 3; ++ki)
                ok = ok && b.a_k[ki].has_value() && *b.a_k[ki] == 0.0;
    }
    report(5, "constant coupled signals keep the task ordering; per-signal advantages vanish", ok,
           "500 random groups, exact comparisons");
}

// ------------------------------------------------------------------- check 6

RolloutRecord behaviour_rollout(const PolicyParams& behaviour, int ctx,
                                const std::vector<int>& actions) {
    RolloutRecord r;
    r.action_sequence = actions;
    for (std::size_t s = 0; s < actions.size(); ++s) {
        const auto logp = log_softmax(behaviour.logits[ctx][s]);
        r.old_logprob_per_step.push_back(logp[actions[s]]);
    }
    return r;
}

void check_6_gradient() {
    const double h = 1e-5;
    const double clip = 0.28;
    const double kl_coef = 0.01;
    const double rel_tol = 1e-4;
    const double boundary_margin = 5e-3;
    const std::vector<int> slot_actions{3, 4, 3};

    double max_rel = 0.0;
    double min_kl = 0.0;
    int checked = 0;
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng = seeded_rng(60000 + seed);
        PolicyParams p = make_policy_params(2, slot_actions);
        PolicyParams behaviour = make_policy_params(2, slot_actions);
        for (auto* tbl : {&p.logits, &p.ref_logits, &behaviour.logits})
            for (auto& ctx : *tbl)
                for (auto& row : ctx)
                    for (double& v : row) v = (rng.uniform() - 0.5) * 1.5;

        std::vector<RolloutRecord> recs;
        PolicyBatch batch;
        for (int i = 0; i < 4; ++i) {
            const int ctx = static_cast<int>(rng.uniform_index(2));
            std::vector<int> actions;
            for (std::size_t s = 0; s < behaviour.logits[ctx].size(); ++s)
                actions.push_back(
                    static_cast<int>(rng.categorical(softmax(behaviour.logits[ctx][s]))));
            recs.push_back(behaviour_rollout(behaviour, ctx, actions));
            batch.context_ids.push_back(ctx);
            batch.advantages.push_back((rng.uniform() - 0.5) * 2.0);
        }
        for (const auto& r : recs) batch.rollouts.push_back(&r);

        // the objective has kinks at the clip boundaries; reject instances
        // whose ratios sit within the finite-difference straddle
        bool near_boundary = false;
        for (std::size_t i = 0; i < recs.size(); ++i)
            for (std::size_t s = 0; s < recs[i].action_sequence.size(); ++s) {
                const auto logp = log_softmax(p.logits[batch.context_ids[i]][s]);
                const double rho = std::exp(logp[recs[i].action_sequence[s]] -
                                            recs[i].old_logprob_per_step[s]);
                if (std::abs(rho - (1.0 - clip)) < boundary_margin ||
                    std::abs(rho - (1.0 + clip)) < boundary_margin)
                    near_boundary = true;
            }
        if (near_boundary) continue;

        const auto base = clipped_surrogate_loss(p, batch, clip, kl_coef, &p.ref_logits);
        min_kl = std::min(min_kl, base.stats.kl);
        for (std::size_t c = 0; c < p.logits.size(); ++c)
            for (std::size_t s = 0; s < p.logits[c].size(); ++s)
                for (std::size_t j = 0; j < p.logits[c][s].size(); ++j) {
                    PolicyParams plus = p, minus = p;
                    plus.logits[c][s][j] += h;
                    minus.logits[c][s][j] -= h;
                    const double lp =
                        clipped_surrogate_loss(plus, batch, clip, kl_coef, &p.ref_logits)
                            .stats.loss;
                    const double lm =
                        clipped_surrogate_loss(minus, batch, clip, kl_coef, &p.ref_logits)
                            .stats.loss;
                    const double fd = (lp - lm) / (2.0 * h);
                    const double an = base.grad[c][s][j];
                    const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
                    max_rel = std::max(max_rel, std::abs(fd - an) / scale);
                    ++checked;
                }
    }

    // untouched parameters sit exactly on the reference table
    PolicyParams fresh = make_policy_params(2, slot_actions);
    Rng rng = seeded_rng(61999);
    std::vector<RolloutRecord> recs;
    PolicyBatch batch;
    for (int i = 0; i < 2; ++i) {
        std::vector<int> actions;
        for (int a : slot_actions) actions.push_back(static_cast<int>(rng.uniform_index(a)));
        recs.push_back(behaviour_rollout(fresh, 0, actions));
        batch.context_ids.push_back(0);
        batch.advantages.push_back(i == 0 ? 1.0 : -1.0);
    }
    for (const auto& r : recs) batch.rollouts.push_back(&r);
    const double kl_at_init =
        clipped_surrogate_loss(fresh, batch, clip, kl_coef, &fresh.ref_logits).stats.kl;

    const bool ok = checked > 500 && max_rel <= rel_tol && min_kl >= 0.0 && kl_at_init == 0.0;
    report(6, "surrogate gradient matches central differences; kl penalty nonnegative", ok,
           std::to_string(checked) + " entries, max rel err " + fmt("%.2e", max_rel));
}

// --------------------------------------------------------------- checks 7, 8

struct RunOutcome {
    double acc = 0.0;
    double ir = 0.0;
    double secs = 0.0;
};

// Operating point chosen so the five objective formulations actually separate.
// One reasoning slot over a wide fact vocabulary makes consistent traces rare
// under the initial policy (about 1 in 36 rollouts), so objectives that gate the
// task reward behind consistency see almost no usable events per context, while
// objectives with an ungated task term keep their dense signal. SGD without the
// adaptive-moment rescaling keeps that scarcity visible in the updates. Only the
// consistency constraint is active; its dual weight adapts in fgrpo mode.
RunOutcome run_shortcut(TrainMode mode, std::uint64_t seed) {
    TrainConfig tc;
    tc.mode = mode;
    tc.seed = seed;
    tc.group_size = 8;
    tc.batch_prompts = 1;
    tc.total_steps = 2000;
    tc.policy_lr = 0.6;
    tc.kl_coef = 0.001;
    tc.optimizer = OptimizerKind::sgd;
    tc.lambda_s = 0.0;
    tc.lambda_g = 0.0;
    tc.tau_s = 0.0;
    tc.tau_g = 0.0;
    tc.eval_every = 0;
    tc.eval_tasks = 400;
    EnvConfig env;
    env.n_contexts = 24;
    env.n_background_facts = 32;
    env.reasoning_slots = 1;
    env.shortcut_bias = 0.9;
    env.gt_box_fraction = 1.0;

    const double t0 = now_seconds();
    Trainer trainer(tc, env);
    const TrainResult res = trainer.run();
    RunOutcome out;
    out.acc = res.final_metrics.accuracy;
    out.ir = res.final_metrics.inconsistency_rate;
    out.secs = now_seconds() - t0;
    return out;
}

struct ShortcutSweep {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<RunOutcome> task_only, adaptive, fixed, additive, multiplicative;
};

double mean_of(const std::vector<RunOutcome>& runs, double RunOutcome::*field) {
    double sum = 0.0;
    for (const auto& r : runs) sum += r.*field;
    return sum / static_cast<double>(runs.size());
}

void check_7_shortcut(const ShortcutSweep& sweep) {
    bool ok = true;
    double max_secs = 0.0;
    std::ostringstream detail;
    for (std::size_t i = 0; i < sweep.seeds.size(); ++i) {
        const RunOutcome& to = sweep.task_only[i];
        const RunOutcome& fg = sweep.adaptive[i];
        ok = ok && to.acc >= 0.85 && to.ir >= 0.20;
        ok = ok && fg.acc >= to.acc - 0.02 && fg.ir <= 0.05;
        max_secs = std::max({max_secs, to.secs, fg.secs});
        detail << (i ? " " : "") << "s" << sweep.seeds[i] << ":" << fmt("%.3f", to.acc) << "/"
               << fmt("%.2f", to.ir) << ">" << fmt("%.3f", fg.acc) << "/" << fmt("%.2f", fg.ir);
    }
    ok = ok && max_secs <= 120.0;
    detail << " max " << fmt("%.1f", max_secs) << "s/run";
    report(7, "unconstrained runs shortcut the reasoning, constrained runs stay faithful", ok,
           detail.str());
}

void check_8_mode_sweep(const ShortcutSweep& sweep) {
    const double acc_a = mean_of(sweep.adaptive, &RunOutcome::acc);
    const double acc_f = mean_of(sweep.fixed, &RunOutcome::acc);
    const double ir_a = mean_of(sweep.adaptive, &RunOutcome::ir);
    const double ir_f = mean_of(sweep.fixed, &RunOutcome::ir);

    const auto composite = [](const std::vector<RunOutcome>& runs) {
        return mean_of(runs, &RunOutcome::acc) - mean_of(runs, &RunOutcome::ir);
    };
    const double comp_mult = composite(sweep.multiplicative);
    const double comp_others = std::min({composite(sweep.task_only), composite(sweep.adaptive),
                                         composite(sweep.fixed), composite(sweep.additive)});

    const bool ok = acc_a >= acc_f && ir_a <= 0.05 && ir_f <= 0.05 && comp_mult <= comp_others;
    std::ostringstream detail;
    detail << "acc adaptive " << fmt("%.3f", acc_a) << " vs fixed " << fmt("%.3f", acc_f)
           << ", ir " << fmt("%.3f", ir_a) << "/" << fmt("%.3f", ir_f) << ", composite mult "
           << fmt("%.3f", comp_mult) << " vs best-of-rest floor " << fmt("%.3f", comp_others);
    report(8, "adaptive duals beat fixed ones; multiplicative coupling ranks worst", ok,
           detail.str());
}

// ------------------------------------------------------------------- check 9

// Three-level branch-of-three toy: one planted continuation at every level,
// completions follow the planted suffix, reward 1 only on the full branch.
class PlantedTeacher : public Teacher {
public:
    explicit PlantedTeacher(std::array<int, 3> planted) : planted_(planted) {}

    std::optional<std::vector<int>> propose(const std::vector<int>& state, int k, Rng&) override {
        if (is_terminal(state)) return std::nullopt;
        std::vector<int> actions;
        for (int a = 0; a < 3 && static_cast<int>(actions.size()) < k; ++a) actions.push_back(a);
        return actions;
    }

    std::vector<int> complete(const std::vector<int>& state, Rng&) override {
        std::vector<int> full = state;
        while (full.size() < planted_.size()) full.push_back(planted_[full.size()]);
        return full;
    }

    bool is_terminal(const std::vector<int>& state) const override {
        return state.size() >= planted_.size();
    }

    double terminal_reward(const std::vector<int>& state) const override {
        for (std::size_t i = 0; i < planted_.size(); ++i)
            if (state[i] != planted_[i]) return 0.0;
        return 1.0;
    }

private:
    std::array<int, 3> planted_;
};

const MctsNode* best_child(const MctsNode& node) {
    const MctsNode* best = nullptr;
    for (const auto& c : node.children) {
        if (!best || c->visit_count > best->visit_count ||
            (c->visit_count == best->visit_count && c->q() > best->q()))
            best = c.get();
    }
    return best;
}

void check_9_search() {
    int successes = 0;
    bool conservation = true;
    for (int seed = 0; seed < 100; ++seed) {
        Rng plant_rng = seeded_rng(900 + static_cast<std::uint64_t>(seed));
        std::array<int, 3> planted{};
        for (auto& a : planted) a = static_cast<int>(plant_rng.uniform_index(3));
        PlantedTeacher teacher(planted);
        SearchParams params;
        Rng search_rng = seeded_rng(7000 + static_cast<std::uint64_t>(seed));
        const SearchResult res = run_search(teacher, params, search_rng);

        for (const auto& [visits, sims] : res.per_iteration)
            conservation = conservation && visits == sims;
        conservation = conservation && res.root->visit_count == res.simulations;

        std::array<int, 3> walked{-1, -1, -1};
        const MctsNode* node = res.root.get();
        for (int level = 0; level < 3 && node; ++level) {
            node = best_child(*node);
            if (node) walked[level] = node->action;
        }
        if (walked == planted) ++successes;
    }
    bool ok = successes >= 95 && conservation;

    ok = ok && std::string(kBacktrackCue) == "Wait, this seems off. Let's try something else.";

    // quota: a flat tree of 12 winning and 4 losing terminals must linearize
    // to exactly 8 direct and 2 corrected chains
    MctsNode root;
    for (int a = 0; a < 16; ++a) {
        auto child = std::make_unique<MctsNode>();
        child->action = a;
        child->parent = &root;
        child->depth = 1;
        child->terminal = true;
        child->reward = a < 12 ? 1.0 : 0.0;
        root.children.push_back(std::move(child));
    }
    const auto chains = linearize(root, LinearizeQuota{});
    int n_direct = 0, n_corrected = 0;
    bool cue_steps_ok = true;
    for (const auto& c : chains) {
        int cues = 0;
        for (const auto& s : c.steps) cues += s.is_cue ? 1 : 0;
        if (c.kind == ChainKind::direct) {
            ++n_direct;
            cue_steps_ok = cue_steps_ok && cues == 0;
        } else {
            ++n_corrected;
            cue_steps_ok = cue_steps_ok && cues == 1;
        }
    }
    ok = ok && n_direct == 8 && n_corrected == 2 && cue_steps_ok;

    // a corrected chain renders the cue bytes exactly once
    EnvConfig cfg;
    Rng task_rng = seeded_rng(940);
    const SynthTask task = sample_task(task_rng, cfg, 9);
    const ActionSchema schema = make_schema(cfg);
    SynthTeacher synth(cfg, task);
    std::vector<int> best;
    for (int s = 0; s < schema.slots(); ++s) best.push_back(synth.faithful_action(s));
    std::vector<int> wrong = best;
    wrong[static_cast<std::size_t>(schema.answer_slot())] =
        (task.gt_answer + 1) % cfg.n_options;
    Chain corrected;
    corrected.kind = ChainKind::corrected;
    corrected.final_path = best;
    for (int a : wrong) corrected.steps.push_back(ChainStep{false, a});
    corrected.steps.push_back(ChainStep{true, -1});
    for (std::size_t j = 3; j < best.size(); ++j)
        corrected.steps.push_back(ChainStep{false, best[j]});
    const std::string text = render_chain(cfg, task, corrected);
    const std::size_t cue_at = text.find(kBacktrackCue);
    ok = ok && cue_at != std::string::npos &&
         text.find(kBacktrackCue, cue_at + 1) == std::string::npos;

    report(9, "planted-branch search concentrates visits; cue bytes and chain quotas hold", ok,
           std::to_string(successes) + "/100 searches on the planted branch");
}

// ------------------------------------------------------------------ check 10

class QueueSentenceJudge : public SentenceJudge {
public:
    std::vector<SentenceJudgement> script;
    std::size_t next = 0;
    std::optional<SentenceJudgement> judge(const SentenceQuery&) override {
        return script.at(next++);
    }
};

void check_10_metrics() {
    bool ok = cohen_kappa({1, 0, 1, 1, 0}, {1, 0, 1, 1, 0}) == 1.0;
    ok = ok && cohen_kappa({1, 1, 0, 0}, {1, 0, 1, 0}) == 0.0;
    ok = ok && cohen_kappa({1, 0, 1, 0}, {0, 1, 0, 1}) == -1.0;

    std::vector<ConsistencyVerdict> verdicts;
    for (int i = 0; i < 50; ++i)
        verdicts.push_back(i < 13 ? ConsistencyVerdict::no : ConsistencyVerdict::yes);
    ok = ok && inconsistency_rate(verdicts) == 13.0 / 50.0;

    // 50 grounding records: three judged sentences each except every fifth
    // record, which has nothing to judge; verdict pattern fixed by index
    QueueSentenceJudge judge;
    std::vector<std::optional<double>> expected;
    for (int i = 0; i < 50; ++i) {
        if (i % 5 == 4) {
            expected.push_back(std::nullopt);
            continue;
        }
        for (int j = 0; j < 3; ++j) {
            const int v = (2 * i + j) % 4;
            judge.script.push_back(v == 1 ? SentenceJudgement::incorrect
                                          : (v == 2 ? SentenceJudgement::skip
                                                    : SentenceJudgement::correct));
        }
        expected.push_back(i % 2 == 0 ? 0.5 : 1.0);
    }

    double sum = 0.0;
    int defined = 0;
    for (int i = 0; i < 50; ++i) {
        std::vector<Sentence> sentences;
        if (i % 5 == 4) {
            sentences.push_back(Sentence{"So the scene is settled.", 0, SentenceKind::trivial,
                                         SentenceVerdict::unscored});
            sentences.push_back(Sentence{"That is that.", 1, SentenceKind::trivial,
                                         SentenceVerdict::unscored});
        } else {
            for (int j = 0; j < 3; ++j)
                sentences.push_back(Sentence{"Claim " + std::to_string(j) + ".", j,
                                             SentenceKind::visual, SentenceVerdict::unscored});
            sentences.push_back(Sentence{"Clearly so.", 3, SentenceKind::trivial,
                                         SentenceVerdict::unscored});
        }
        const auto got =
            sentence_grounding_score(judge, "scene:10", "Which option?", sentences, nullptr);
        ok = ok && got == expected[static_cast<std::size_t>(i)];
        if (got) {
            sum += *got;
            ++defined;
        }
    }
    ok = ok && defined == 40 && sum / 40.0 == 0.75;
    report(10, "agreement and corpus metrics match hand enumeration", ok,
           "kappa worked values exact, rate 0.26, mean grounding 0.75");
}

// ------------------------------------------------------------------ check 11

void check_11_reproducibility() {
    RunConfig rc;
    rc.train.mode = TrainMode::fgrpo;
    rc.train.seed = 4242;
    rc.train.group_size = 4;
    rc.train.batch_prompts = 6;
    rc.train.total_steps = 12;
    rc.train.policy_lr = 0.05;
    rc.train.eval_every = 4;
    rc.train.eval_tasks = 32;
    rc.env.n_contexts = 4;

    const fs::path base = fs::temp_directory_path();
    const fs::path dir_a = base / "fgrpo_accept_run_a";
    const fs::path dir_b = base / "fgrpo_accept_run_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    std::ostringstream err;
    const int rc_a = cmd_train(rc, dir_a.string(), err);
    const int rc_b = cmd_train(rc, dir_b.string(), err);
    bool ok = rc_a == 0 && rc_b == 0;
    std::string csv_a, csv_b;
    if (ok) {
        csv_a = read_text_file((dir_a / "dynamics.csv").string());
        csv_b = read_text_file((dir_b / "dynamics.csv").string());
        ok = csv_a == csv_b && csv_a.rfind(kDynamicsCsvHeader, 0) == 0 && !csv_a.empty();
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    report(11, "train runs with equal config and seed write byte-identical dynamics logs", ok,
           ok ? std::to_string(csv_a.size()) + " bytes compared" : err.str());
}

} // namespace

int main() {
    check_1_matching();
    check_2_ciou();
    check_3_constraint_score();
    check_4_dual_drive();
    check_5_coupled_ordering();
    check_6_gradient();

    ShortcutSweep sweep;
    for (std::uint64_t seed : sweep.seeds) {
        sweep.task_only.push_back(run_shortcut(TrainMode::task_only, seed));
        sweep.adaptive.push_back(run_shortcut(TrainMode::fgrpo, seed));
        sweep.fixed.push_back(run_shortcut(TrainMode::fgrpo_fixed, seed));
        sweep.additive.push_back(run_shortcut(TrainMode::coupled_additive, seed));
        sweep.multiplicative.push_back(run_shortcut(TrainMode::coupled_multiplicative, seed));
    }
    check_7_shortcut(sweep);
    check_8_mode_sweep(sweep);

    check_9_search();
    check_10_metrics();
    check_11_reproducibility();

    std::printf("%d/11 checks passed\n", 11 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
