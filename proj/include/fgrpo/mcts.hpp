// PUCT tree search over reasoning-step sequences with a pluggable teacher,
// plus linearization of the tree into direct and corrected training chains.
#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "rewards.hpp"
#include "synthenv.hpp"

namespace fgrpo {

inline constexpr const char* kBacktrackCue = "Wait, this seems off. Let's try something else.";

// ------------------------------------------------------------------- teacher

// States are partial action sequences; complete() extends one to a terminal
// sequence. propose() returning nullopt marks the node unexpandable.
struct Teacher {
    virtual ~Teacher() = default;
    virtual std::optional<std::vector<int>> propose(const std::vector<int>& state, int k,
                                                    Rng& rng) = 0;
    virtual std::vector<int> complete(const std::vector<int>& state, Rng& rng) = 0;
    virtual bool is_terminal(const std::vector<int>& state) const = 0;
    virtual double terminal_reward(const std::vector<int>& state) const = 0;
};

// ---------------------------------------------------------------------- tree

struct MctsNode {
    int action = -1; // action taken from the parent; -1 at the root
    MctsNode* parent = nullptr;
    std::vector<std::unique_ptr<MctsNode>> children;
    double prior = 1.0;
    int visit_count = 0;
    double value_sum = 0.0;
    int depth = 0;
    bool terminal = false;
    double reward = 0.0; // valid when terminal
    bool unexpandable = false;

    double q() const { return value_sum / static_cast<double>(std::max(visit_count, 1)); }
};

inline std::vector<int> node_state(const MctsNode* node) {
    std::vector<int> state;
    for (const MctsNode* n = node; n->parent != nullptr; n = n->parent)
        state.push_back(n->action);
    std::reverse(state.begin(), state.end());
    return state;
}

inline double puct_score(const MctsNode& parent, const MctsNode& child, double c_puct) {
    int sibling_visits = 0;
    for (const auto& b : parent.children) sibling_visits += b->visit_count;
    return child.q() + c_puct * child.prior * std::sqrt(static_cast<double>(sibling_visits)) /
                           (1.0 + static_cast<double>(child.visit_count));
}

struct SearchParams {
    int n_sim = 8; // search iterations (select-expand-simulate-backprop cycles)
    double c_puct = 2.0;
    int k = 3; // candidate steps requested per expansion
    int n_rollouts = 2;
    int d_max = 10;
};

struct SearchResult {
    std::unique_ptr<MctsNode> root;
    int simulations = 0;
    std::vector<std::pair<int, int>> per_iteration; // (root visits, total sims) snapshots
};

namespace mcts_detail {

inline void backprop(MctsNode* node, double value) {
    for (MctsNode* n = node; n != nullptr; n = n->parent) {
        ++n->visit_count;
        n->value_sum += value;
    }
}

inline MctsNode* select_leaf(MctsNode* root, double c_puct) {
    MctsNode* node = root;
    while (!node->children.empty()) {
        MctsNode* best = node->children.front().get();
        double best_score = puct_score(*node, *best, c_puct);
        for (std::size_t i = 1; i < node->children.size(); ++i) {
            const double s = puct_score(*node, *node->children[i], c_puct);
            if (s > best_score) {
                best = node->children[i].get();
                best_score = s;
            }
        }
        node = best;
    }
    return node;
}

} // namespace mcts_detail

inline SearchResult run_search(Teacher& teacher, const SearchParams& params, Rng& rng) {
    if (params.n_sim < 0 || params.k < 1 || params.n_rollouts < 1 || params.d_max < 0)
        throw std::invalid_argument("run_search: bad parameters");

    SearchResult result;
    result.root = std::make_unique<MctsNode>();
    MctsNode* root = result.root.get();
    if (teacher.is_terminal({})) {
        root->terminal = true;
        root->reward = teacher.terminal_reward({});
    }

    for (int iter = 0; iter < params.n_sim; ++iter) {
        MctsNode* leaf = mcts_detail::select_leaf(root, params.c_puct);
        if (leaf->terminal) {
            mcts_detail::backprop(leaf, leaf->reward);
            ++result.simulations;
        } else if (leaf->unexpandable || leaf->depth >= params.d_max) {
            // dead end: the iteration is consumed without a simulation
        } else {
            const std::vector<int> state = node_state(leaf);
            const auto proposals = teacher.propose(state, params.k, rng);
            if (!proposals || proposals->empty()) {
                leaf->unexpandable = true;
            } else {
                std::vector<int> actions;
                for (int a : *proposals)
                    if (std::find(actions.begin(), actions.end(), a) == actions.end())
                        actions.push_back(a);
                const double prior = 1.0 / static_cast<double>(actions.size());
                for (int a : actions) {
                    auto child = std::make_unique<MctsNode>();
                    child->action = a;
                    child->parent = leaf;
                    child->prior = prior;
                    child->depth = leaf->depth + 1;
                    std::vector<int> child_state = state;
                    child_state.push_back(a);
                    if (teacher.is_terminal(child_state)) {
                        child->terminal = true;
                        child->reward = teacher.terminal_reward(child_state);
                    }
                    leaf->children.push_back(std::move(child));
                }
                for (auto& child : leaf->children) {
                    std::vector<int> child_state = state;
                    child_state.push_back(child->action);
                    for (int r = 0; r < params.n_rollouts; ++r) {
                        double value;
                        if (child->terminal) {
                            value = child->reward;
                        } else {
                            const std::vector<int> full = teacher.complete(child_state, rng);
                            value = teacher.terminal_reward(full);
                        }
                        mcts_detail::backprop(child.get(), value);
                        ++result.simulations;
                    }
                }
            }
        }
        result.per_iteration.emplace_back(root->visit_count, result.simulations);
    }
    return result;
}

// ------------------------------------------------------------------ linearization

enum class ChainKind { direct, corrected };

struct ChainStep {
    bool is_cue = false;
    int action = -1;
};

struct Chain {
    std::vector<ChainStep> steps;
    ChainKind kind = ChainKind::direct;
    std::vector<int> final_path; // replayable action path ending at a correct terminal
};

struct LinearizeQuota {
    int direct = 8;
    int corrected = 2;
};

namespace mcts_detail {

inline void collect_terminal_paths(const MctsNode* node, std::vector<int>& prefix,
                                   std::vector<std::vector<int>>& correct,
                                   std::vector<std::vector<int>>& incorrect) {
    if (node->terminal) {
        (node->reward > 0.0 ? correct : incorrect).push_back(prefix);
        return;
    }
    for (const auto& child : node->children) {
        prefix.push_back(child->action);
        collect_terminal_paths(child.get(), prefix, correct, incorrect);
        prefix.pop_back();
    }
}

inline bool path_order(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
}

inline std::size_t common_prefix_len(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t n = 0;
    while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
    return n;
}

} // namespace mcts_detail

// Direct chains are the best correct root-to-terminal paths (shortest first,
// rewards are binary so ties break on length then lexicographic order).
// Corrected chains replay a full incorrect path, emit the backtracking cue,
// then continue along the best correct path from the divergence point.
inline std::vector<Chain> linearize(const MctsNode& root, const LinearizeQuota& quota) {
    std::vector<std::vector<int>> correct, incorrect;
    std::vector<int> prefix;
    mcts_detail::collect_terminal_paths(&root, prefix, correct, incorrect);
    if (correct.empty()) return {};

    std::sort(correct.begin(), correct.end(), mcts_detail::path_order);
    std::sort(incorrect.begin(), incorrect.end(), mcts_detail::path_order);

    std::vector<Chain> chains;
    const int n_direct = std::min<int>(quota.direct, static_cast<int>(correct.size()));
    for (int i = 0; i < n_direct; ++i) {
        Chain c;
        c.kind = ChainKind::direct;
        c.final_path = correct[static_cast<std::size_t>(i)];
        for (int a : c.final_path) c.steps.push_back(ChainStep{false, a});
        chains.push_back(std::move(c));
    }

    const std::vector<int>& best = correct.front();
    std::set<std::vector<int>> seen;
    int n_corrected = 0;
    for (const auto& wrong : incorrect) {
        if (n_corrected >= quota.corrected) break;
        if (!seen.insert(wrong).second) continue;
        const std::size_t d = mcts_detail::common_prefix_len(wrong, best);
        Chain c;
        c.kind = ChainKind::corrected;
        c.final_path = best;
        for (int a : wrong) c.steps.push_back(ChainStep{false, a});
        c.steps.push_back(ChainStep{true, -1});
        for (std::size_t j = d; j < best.size(); ++j) c.steps.push_back(ChainStep{false, best[j]});
        chains.push_back(std::move(c));
        ++n_corrected;
    }
    return chains;
}

// --------------------------------------------------------------- synth teacher

// Teacher over full synthetic-scene action sequences. Proposals are
// deterministic and always include the faithful step for the slot; rollout
// completions pick the faithful step with probability `skill`, otherwise
// uniformly. Terminal scoring is exact string matching of the decoded answer.
class SynthTeacher : public Teacher {
public:
    SynthTeacher(const EnvConfig& cfg, const SynthTask& task, double skill = 0.7)
        : cfg_(&cfg), task_(&task), schema_(make_schema(cfg)), skill_(skill) {
        if (skill < 0.0 || skill > 1.0) throw std::invalid_argument("SynthTeacher: bad skill");
        for (std::size_t i = 0; i < task.candidate_boxes.size(); ++i)
            if (task.candidate_boxes[i] == task.gt_box) gt_box_index_ = static_cast<int>(i);
        if (gt_box_index_ < 0) throw std::invalid_argument("SynthTeacher: gt box not a candidate");
    }

    int faithful_action(int slot) const {
        if (slot < schema_.reasoning_slots) {
            const auto& facts = task_->fact_set;
            return facts[static_cast<std::size_t>(slot) % facts.size()];
        }
        if (slot == schema_.answer_slot()) return task_->gt_answer;
        return gt_box_index_;
    }

    std::optional<std::vector<int>> propose(const std::vector<int>& state, int k, Rng&) override {
        if (is_terminal(state)) return std::nullopt;
        const int slot = static_cast<int>(state.size());
        const int n_actions = schema_.actions_in_slot(slot);
        std::vector<int> out{faithful_action(slot)};
        for (int a = 0; a < n_actions && static_cast<int>(out.size()) < k; ++a)
            if (a != out.front()) out.push_back(a);
        return out;
    }

    std::vector<int> complete(const std::vector<int>& state, Rng& rng) override {
        std::vector<int> full = state;
        while (!is_terminal(full)) {
            const int slot = static_cast<int>(full.size());
            if (rng.bernoulli(skill_))
                full.push_back(faithful_action(slot));
            else
                full.push_back(static_cast<int>(rng.uniform_index(
                    static_cast<std::size_t>(schema_.actions_in_slot(slot)))));
        }
        return full;
    }

    bool is_terminal(const std::vector<int>& state) const override {
        return static_cast<int>(state.size()) >= schema_.slots();
    }

    double terminal_reward(const std::vector<int>& state) const override {
        const int a = state.at(static_cast<std::size_t>(schema_.answer_slot()));
        const std::string decoded(1, option_letter(a));
        const std::string gt(1, option_letter(task_->gt_answer));
        return normalize_answer(decoded) == normalize_answer(gt) ? 1.0 : 0.0;
    }

    int gt_box_index() const { return gt_box_index_; }

private:
    const EnvConfig* cfg_;
    const SynthTask* task_;
    ActionSchema schema_;
    double skill_;
    int gt_box_index_ = -1;
};

// ------------------------------------------------------------------- rendering

// Renders a chain in the response format. Every pre-cue action renders at its
// slot inside <think> (answer-slot actions become conclusion sentences, the
// abandoned line of reasoning stays visible); the final answer comes from the
// replayable path. Direct chains render identically to decode_actions.
inline std::string render_chain(const EnvConfig& cfg, const SynthTask& task, const Chain& chain) {
    const ActionSchema schema = make_schema(cfg);
    if (static_cast<int>(chain.final_path.size()) != schema.slots())
        throw std::invalid_argument("render_chain: path is not a full action sequence");

    std::vector<std::string> parts;
    int slot = 0;
    bool after_cue = false;
    std::size_t suffix_seen = 0;
    std::size_t suffix_len = 0;
    for (std::size_t i = 0; i < chain.steps.size(); ++i) {
        if (chain.steps[i].is_cue) {
            after_cue = true;
            suffix_len = chain.steps.size() - i - 1;
            parts.push_back(kBacktrackCue);
            continue;
        }
        if (after_cue)
            slot = schema.slots() - static_cast<int>(suffix_len) + static_cast<int>(suffix_seen++);
        const int a = chain.steps[i].action;
        if (slot < schema.reasoning_slots) {
            parts.push_back(schema.is_conclusion_token(a)
                                ? conclusion_sentence(schema.conclusion_answer(a))
                                : fact_sentence(cfg, a));
        } else if (slot == schema.answer_slot()) {
            if (chain.kind == ChainKind::corrected)
                parts.push_back(conclusion_sentence(a));
        } else if (a != schema.none_box()) {
            parts.push_back(box_sentence(
                task.candidate_boxes.at(static_cast<std::size_t>(a))));
        }
        if (!after_cue) ++slot;
    }

    std::string think;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) think += ' ';
        think += parts[i];
    }
    const int answer = chain.final_path.at(static_cast<std::size_t>(schema.answer_slot()));
    return "<think>" + think + "</think><answer>" + option_letter(answer) + "</answer>";
}

} // namespace fgrpo
