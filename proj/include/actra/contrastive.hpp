#pragma once

// Contrastive pair construction and the InfoNCE objective.
//
// Positives add small Gaussian noise to the continuous actions of a
// trajectory.  Negatives corrupt exactly one segment family of the anchor:
// its prompt, all of its states, or all of its actions, each taken from a
// donor trajectory of a different task.  The loss contrasts each anchor
// against its own positive and the pooled negatives of the whole batch.

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "actra/autodiff.hpp"
#include "actra/rng.hpp"
#include "actra/trajectory.hpp"

namespace actra {

struct NoiseSpec {
    std::vector<double> sigma;  // per-dimension std, continuous action units

    // 2% of each dimension's range: at 64 bins nearly all perturbed
    // actions stay within one bin of the original.
    static NoiseSpec for_codec(const ActionCodec& codec) {
        NoiseSpec s;
        for (std::size_t n = 0; n < codec.lo.size(); ++n) s.sigma.push_back(0.02 * (codec.hi[n] - codec.lo[n]));
        return s;
    }

    void validate(const ActionCodec& codec) const {
        if (sigma.size() != codec.lo.size())
            throw std::invalid_argument("NoiseSpec covers " + std::to_string(sigma.size()) + " dims, codec has " +
                                        std::to_string(codec.lo.size()));
        for (double s : sigma)
            if (!(s >= 0.0)) throw std::invalid_argument("NoiseSpec sigma must be >= 0");
    }
};

inline Trajectory make_positive(const Trajectory& traj, const ActionCodec& codec, const NoiseSpec& noise, Rng& rng) {
    noise.validate(codec);
    Trajectory out = traj;
    for (auto& step : out.steps)
        for (std::size_t n = 0; n < step.action.size(); ++n)
            step.action[n] = std::clamp(step.action[n] + rng.normal(0.0, noise.sigma[n]), codec.lo[n], codec.hi[n]);
    return out;
}

namespace detail {

inline bool same_geometry(const Trajectory& a, const Trajectory& b) {
    if (a.T() != b.T() || a.steps.empty()) return false;
    const auto& sa = a.steps[0];
    const auto& sb = b.steps[0];
    if (sa.obs.size() != sb.obs.size() || sa.action.size() != sb.action.size()) return false;
    for (std::size_t m = 0; m < sa.obs.size(); ++m)
        if (sa.obs[m].size() != sb.obs[m].size()) return false;
    return true;
}

}  // namespace detail

// One corrupted copy of the anchor per family, where a donor could be found.
struct NegativeSet {
    std::vector<std::pair<std::string, Trajectory>> members;  // family -> trajectory
    std::vector<std::string> warnings;
};

inline NegativeSet make_negatives(const Trajectory& traj, const std::vector<Trajectory>& batch, Rng& rng) {
    std::vector<const Trajectory*> eligible;
    for (const auto& other : batch)
        if (other.task_id != traj.task_id && detail::same_geometry(traj, other)) eligible.push_back(&other);

    NegativeSet out;
    auto pick = [&](const std::vector<const Trajectory*>& pool) { return pool[rng.uniform_int(pool.size())]; };

    std::vector<const Trajectory*> prompt_pool;
    for (const Trajectory* d : eligible)
        if (d->prompt != traj.prompt) prompt_pool.push_back(d);
    if (prompt_pool.empty()) {
        out.warnings.push_back("no donor with a different prompt for task " + traj.task_id + "; prompt negative skipped");
    } else {
        Trajectory neg = traj;
        neg.prompt = pick(prompt_pool)->prompt;
        out.members.emplace_back("prompt", std::move(neg));
    }

    if (eligible.empty()) {
        out.warnings.push_back("no different-task donor for task " + traj.task_id + "; state negative skipped");
        out.warnings.push_back("no different-task donor for task " + traj.task_id + "; action negative skipped");
        return out;
    }

    {
        const Trajectory* d = pick(eligible);
        Trajectory neg = traj;
        for (int t = 0; t < traj.T(); ++t) neg.steps[t].obs = d->steps[t].obs;
        out.members.emplace_back("state", std::move(neg));
    }
    {
        const Trajectory* d = pick(eligible);
        Trajectory neg = traj;
        for (int t = 0; t < traj.T(); ++t) neg.steps[t].action = d->steps[t].action;
        out.members.emplace_back("action", std::move(neg));
    }
    return out;
}

struct ContrastiveBatch {
    std::vector<Trajectory> anchors;
    std::vector<Trajectory> positives;
    std::vector<std::vector<std::pair<std::string, Trajectory>>> negatives;  // per anchor
    std::vector<std::string> warnings;
};

inline ContrastiveBatch make_contrastive_batch(const std::vector<Trajectory>& batch, const ActionCodec& codec,
                                               const NoiseSpec& noise, Rng& rng) {
    ContrastiveBatch out;
    for (const auto& traj : batch) {
        out.anchors.push_back(traj);
        out.positives.push_back(make_positive(traj, codec, noise, rng));
        NegativeSet negs = make_negatives(traj, batch, rng);
        out.negatives.push_back(std::move(negs.members));
        for (auto& w : negs.warnings) out.warnings.push_back(std::move(w));
    }
    return out;
}

// InfoNCE over raw dot products.  Every anchor is scored against its own
// positive and the pooled negatives of the whole batch; the per-anchor
// cross-entropy against class 0 is exactly -log(e^{a.p} / (e^{a.p} + sum_k e^{a.n_k})),
// with the usual max-subtraction guard inside the log-sum-exp.
inline Graph::Var info_nce(Graph& g, const std::vector<Graph::Var>& anchors, const std::vector<Graph::Var>& positives,
                           const std::vector<Graph::Var>& negatives) {
    if (anchors.empty() || anchors.size() != positives.size())
        throw std::invalid_argument("info_nce needs matching non-empty anchor and positive lists");
    std::vector<Graph::Var> losses;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        std::vector<Graph::Var> sims;
        sims.push_back(g.dot(anchors[i], positives[i]));
        for (Graph::Var n : negatives) sims.push_back(g.dot(anchors[i], n));
        losses.push_back(g.cross_entropy_with_logits(g.concat(sims, 0), {0}));
    }
    return g.mean(g.concat(losses, 0));
}

}  // namespace actra
