#pragma once

// Losses, the two-phase schedule, the training loop, and evaluation rollouts.
//
// Training runs contrastive warmup first (alpha=0, beta=1), then behavior
// cloning (alpha=1, beta=0).  Both phases share one AdamW instance.  All
// randomness flows from the config seed, so a run is reproducible down to
// the checkpoint bytes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "actra/adamw.hpp"
#include "actra/contrastive.hpp"
#include "actra/envlab.hpp"
#include "actra/model.hpp"

#include "json.hpp"

namespace actra {

struct TrainConfig {
    ActraConfig model;
    ActionCodec codec = env_codec();
    std::string dataset_path;
    int batch_size = 16;
    int epochs = 10;
    int warmup_epochs = -1;  // -1: 20% of epochs
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::vector<double> sigma;  // empty: NoiseSpec::for_codec default
    std::uint64_t seed = 0;
    int eval_trials = 50;
    bool use_contrastive = true;
    int cl_crop_len = 12;  // contrastive batches share the geometry of their shortest member, capped here
    // BC input jitter: Gaussian sigma on every observation entry, and this
    // fraction of each dimension's range on history actions.  Targets stay
    // clean.  Off by default.
    double bc_noise = 0.0;
    bool drop_neg_prompt = false, drop_neg_state = false, drop_neg_action = false;
    double mix_alpha = -1.0, mix_beta = -1.0;  // both >= 0: constant mixed objective instead of the two phases

    int resolved_warmup() const {
        if (!use_contrastive) return 0;
        return warmup_epochs >= 0 ? warmup_epochs : epochs / 5;
    }

    void validate() const {
        model.validate();
        codec.validate();
        if (codec.bins != model.bins)
            throw std::invalid_argument("codec bins (" + std::to_string(codec.bins) + ") must match model bins (" +
                                        std::to_string(model.bins) + ")");
        if (static_cast<int>(codec.lo.size()) != model.action_dims)
            throw std::invalid_argument("codec dims must match model action dims");
        if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
        if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
        if (resolved_warmup() > epochs) throw std::invalid_argument("warmup epochs must be <= epochs");
        if (use_contrastive && batch_size < 2)
            throw std::invalid_argument("contrastive learning needs batch size >= 2 for donors");
        if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
        if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
        if (!sigma.empty() && sigma.size() != codec.lo.size())
            throw std::invalid_argument("sigma must have one entry per action dimension");
        if (eval_trials < 0) throw std::invalid_argument("eval trials must be >= 0");
        if (cl_crop_len < 1) throw std::invalid_argument("cl_crop_len must be >= 1");
        if (bc_noise < 0.0) throw std::invalid_argument("bc_noise must be >= 0");
    }
};

struct RunMetrics {
    struct Epoch {
        int epoch = 0;
        double alpha = 0.0, beta = 0.0;
        std::optional<double> bc_loss;  // mean per-token cross-entropy
        std::optional<double> cl_loss;  // mean per-batch InfoNCE
    };
    std::vector<Epoch> epochs;
    std::map<std::string, double> success;
    double wall_clock_seconds = 0.0;
};

// L_BC as a plain number: summed per-token -log softmax over a (T, N, K)
// logit block.  This is the independent recomputation that the graph-built
// loss is tested against.
inline double bc_loss(const Tensor& logits, const std::vector<std::vector<int>>& bins) {
    if (logits.rank() != 3) throw std::invalid_argument("bc_loss expects (T, N, K) logits");
    const int T = logits.shape[0], N = logits.shape[1], K = logits.shape[2];
    if (static_cast<int>(bins.size()) != T) throw std::invalid_argument("bc_loss: target rows != T");
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        if (static_cast<int>(bins[t].size()) != N) throw std::invalid_argument("bc_loss: target cols != N");
        for (int n = 0; n < N; ++n) {
            const int bin = bins[t][n];
            if (bin < 0 || bin >= K) throw std::invalid_argument("bc_loss: bin " + std::to_string(bin) + " out of range");
            const double* row = logits.data.data() + (static_cast<std::size_t>(t) * N + n) * K;
            double m = row[0];
            for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += std::exp(row[k] - m);
            total += m + std::log(s) - row[bin];
        }
    }
    return total;
}

inline double total_loss(double bc, double cl, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    return alpha * bc + beta * cl;
}

// (alpha, beta) for one epoch: contrastive during warmup, cloning after.
inline std::pair<double, double> schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= std::max(cfg.epochs, 1)) throw std::invalid_argument("epoch out of range");
    if (cfg.mix_alpha >= 0.0 && cfg.mix_beta >= 0.0) return {cfg.mix_alpha, cfg.mix_beta};
    if (cfg.use_contrastive && epoch < cfg.resolved_warmup()) return {0.0, 1.0};
    return {1.0, 0.0};
}

namespace detail {

inline std::vector<std::vector<int>> target_bins(const Trajectory& traj, const ActionCodec& codec) {
    std::vector<std::vector<int>> bins(traj.T());
    for (int t = 0; t < traj.T(); ++t) bins[t] = codec.discretize_action(traj.steps[t].action);
    return bins;
}

// Perturbed copy of a trajectory for BC jitter: Gaussian noise on every obs
// entry and on the history actions the decoder conditions on.  The caller
// keeps computing targets from the original.
inline Trajectory jittered(const Trajectory& traj, const ActionCodec& codec, double scale, Rng& rng) {
    Trajectory out = traj;
    for (auto& step : out.steps) {
        for (auto& view : step.obs)
            for (double& v : view) v += rng.normal(0.0, scale);
        for (std::size_t n = 0; n < step.action.size(); ++n)
            step.action[n] = std::clamp(step.action[n] + rng.normal(0.0, scale * (codec.hi[n] - codec.lo[n])),
                                        codec.lo[n], codec.hi[n]);
    }
    return out;
}

// Summed cross-entropy over one trajectory's decode, as a graph node.
inline Var bc_root(Graph& g, const DecodeResult& dec, const std::vector<std::vector<int>>& bins) {
    const int N = static_cast<int>(dec.per_dim_logits.size());
    std::vector<Var> parts;
    for (int n = 0; n < N; ++n) {
        std::vector<int> targets(bins.size());
        for (std::size_t t = 0; t < bins.size(); ++t) targets[t] = bins[t][n];
        parts.push_back(g.sum(g.cross_entropy_with_logits(dec.per_dim_logits[n], targets)));
    }
    Var total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = g.add(total, parts[i]);
    return total;
}

inline Trajectory crop(const Trajectory& traj, int len) {
    Trajectory out = traj;
    if (traj.T() > len) out.steps.resize(static_cast<std::size_t>(len));
    return out;
}

struct ClBatchLoss {
    Var loss;
    int negatives = 0;
};

// Contrastive loss over one batch: crop everyone to a shared length so any
// different-task member can donate, then encode anchors, positives, and the
// pooled negatives in one graph.
inline std::optional<ClBatchLoss> cl_root(Graph& g, const std::vector<const Trajectory*>& batch,
                                          const TrainConfig& cfg, ActraParams& params, const NoiseSpec& noise,
                                          Rng& rng) {
    int len = cfg.cl_crop_len;
    for (const Trajectory* t : batch) len = std::min(len, t->T());
    std::vector<Trajectory> cropped;
    for (const Trajectory* t : batch) cropped.push_back(crop(*t, len));

    ContrastiveBatch cb = make_contrastive_batch(cropped, cfg.codec, noise, rng);
    std::vector<Var> anchors, positives, negatives;
    for (std::size_t i = 0; i < cb.anchors.size(); ++i) {
        anchors.push_back(forward_encode(g, cb.anchors[i], params, cfg.model, cfg.codec));
        positives.push_back(forward_encode(g, cb.positives[i], params, cfg.model, cfg.codec));
        for (const auto& [family, neg] : cb.negatives[i]) {
            if (family == "prompt" && cfg.drop_neg_prompt) continue;
            if (family == "state" && cfg.drop_neg_state) continue;
            if (family == "action" && cfg.drop_neg_action) continue;
            negatives.push_back(forward_encode(g, neg, params, cfg.model, cfg.codec));
        }
    }
    if (negatives.empty()) return std::nullopt;
    return ClBatchLoss{info_nce(g, anchors, positives, negatives), static_cast<int>(negatives.size())};
}

}  // namespace detail

struct TrainResult {
    ActraParams params;
    RunMetrics metrics;
};

// Full training run: loads the dataset, runs the schedule, and writes the
// checkpoint plus a JSON Lines metrics file (one record per epoch and a final
// summary; wall-clock goes to stdout only, so reruns are byte-identical).
inline TrainResult train(const TrainConfig& cfg, const std::string& checkpoint_path,
                         const std::string& metrics_path) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Trajectory> data = load_trajectories(cfg.dataset_path);
    if (data.empty()) throw std::runtime_error("dataset " + cfg.dataset_path + " is empty");

    TrainResult out{init_params(cfg.model, cfg.seed), {}};
    ActraParams& params = out.params;
    AdamW::Config oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamW opt(oc);
    for (auto& [name, tensor] : params.named()) opt.add_param(*tensor);

    Rng base(cfg.seed);
    Rng shuffle_rng = base.fork(1);
    Rng cl_rng = base.fork(2);
    Rng aug_rng = base.fork(3);
    const NoiseSpec noise = cfg.sigma.empty() ? NoiseSpec::for_codec(cfg.codec) : NoiseSpec{cfg.sigma};

    std::ofstream metrics_out(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics_out) throw std::runtime_error("cannot write metrics to " + metrics_path);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto [alpha, beta] = schedule(epoch, cfg);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double bc_sum = 0.0, cl_sum = 0.0;
        long long bc_tokens = 0;
        int cl_batches = 0;
        for (std::size_t at = 0, batch_id = 0; at < order.size(); at += cfg.batch_size, ++batch_id) {
            std::vector<const Trajectory*> batch;
            for (std::size_t j = at; j < std::min(at + cfg.batch_size, order.size()); ++j)
                batch.push_back(&data[order[j]]);

            const auto fail = [&](const std::string& what) {
                throw std::runtime_error("training aborted in epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(batch_id) + ": " + what);
            };
            try {
                Graph g;
                std::optional<Var> root;
                if (alpha > 0.0) {
                    Var total = g.constant(Tensor::scalar(0.0));
                    long long tokens = 0;
                    for (const Trajectory* traj : batch) {
                        DecodeResult dec =
                            cfg.bc_noise > 0.0
                                ? forward_decode(g, detail::jittered(*traj, cfg.codec, cfg.bc_noise, aug_rng),
                                                 params, cfg.model, cfg.codec)
                                : forward_decode(g, *traj, params, cfg.model, cfg.codec);
                        total = g.add(total, detail::bc_root(g, dec, detail::target_bins(*traj, cfg.codec)));
                        tokens += static_cast<long long>(traj->T()) * cfg.model.action_dims;
                    }
                    bc_sum += g.value(total).data[0];
                    bc_tokens += tokens;
                    Var per_token = g.scale(total, alpha / static_cast<double>(tokens));
                    root = root ? g.add(*root, per_token) : per_token;
                }
                if (beta > 0.0 && batch.size() >= 2) {
                    auto cl = detail::cl_root(g, batch, cfg, params, noise, cl_rng);
                    if (cl) {
                        cl_sum += g.value(cl->loss).data[0];
                        ++cl_batches;
                        Var weighted = g.scale(cl->loss, beta);
                        root = root ? g.add(*root, weighted) : weighted;
                    }
                }
                if (!root) continue;
                const double loss_value = g.value(*root).data[0];
                if (!std::isfinite(loss_value)) fail("loss value " + std::to_string(loss_value));
                g.backward(*root);
                opt.step();
            } catch (const std::invalid_argument& e) {
                fail(e.what());
            }
        }

        RunMetrics::Epoch rec;
        rec.epoch = epoch;
        rec.alpha = alpha;
        rec.beta = beta;
        if (bc_tokens > 0) rec.bc_loss = bc_sum / static_cast<double>(bc_tokens);
        if (cl_batches > 0) rec.cl_loss = cl_sum / cl_batches;
        out.metrics.epochs.push_back(rec);

        nlohmann::ordered_json j;
        j["epoch"] = rec.epoch;
        j["alpha"] = rec.alpha;
        j["beta"] = rec.beta;
        j["bc_loss"] = rec.bc_loss ? nlohmann::ordered_json(*rec.bc_loss) : nlohmann::ordered_json(nullptr);
        j["cl_loss"] = rec.cl_loss ? nlohmann::ordered_json(*rec.cl_loss) : nlohmann::ordered_json(nullptr);
        metrics_out << j.dump() << "\n";
    }

    save_params(checkpoint_path, params, cfg.model, cfg.codec);

    nlohmann::ordered_json summary;
    summary["summary"] = true;
    summary["epochs"] = cfg.epochs;
    summary["dataset"] = cfg.dataset_path;
    summary["trajectories"] = data.size();
    summary["param_count"] = params.param_count();
    metrics_out << summary.dump() << "\n";
    metrics_out.close();

    out.metrics.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("trained %d epochs in %.1f s\n", cfg.epochs, out.metrics.wall_clock_seconds);
    return out;
}

// One greedy episode under an arbitrary policy; success latches.
inline bool eval_rollout(const TaskSpec& task, std::uint64_t seed,
                         const std::function<ToyAction(const ToyWorldState&)>& policy) {
    ToyWorldState state = reset(task, seed);
    for (int t = 0; t < kHorizon; ++t) {
        if (is_success(state, task)) return true;
        state = step(state, policy(state));
    }
    return is_success(state, task);
}

// Policy closure around model.act: observes, decodes greedily, and feeds its
// own emitted actions back as history.
inline std::function<ToyAction(const ToyWorldState&)> make_model_policy(ActraParams& params,
                                                                        const ActraConfig& cfg,
                                                                        const ActionCodec& codec,
                                                                        const TaskSpec& task) {
    auto history = std::make_shared<std::vector<Trajectory::Step>>();
    const std::vector<int> prompt = make_prompt(task);
    return [&params, &cfg, &codec, prompt, history](const ToyWorldState& state) {
        auto obs = observe(state);
        std::vector<double> a = act(prompt, *history, obs, params, cfg, codec);
        history->push_back({obs, a});
        return ToyAction::from_vector(a);
    };
}

// Success rates for the five standard conditions plus their pooled mean.
// Per-trial seeds are seed + trial index; distractor counts cycle 0..4 in the
// task-split conditions and are pinned in the distractor sweep.
inline std::map<std::string, double> evaluate(ActraParams& params, const ActraConfig& cfg,
                                              const ActionCodec& codec, int trials, std::uint64_t seed) {
    std::map<std::string, double> report;
    if (trials <= 0) return report;
    struct Condition {
        std::string name;
        std::vector<TaskSpec> pool;
        int distractors;  // -1: cycle 0..4
    };
    const std::vector<Condition> conditions = {
        {"seen", seen_tasks(), -1},        {"unseen", unseen_tasks(), -1}, {"distractors0", seen_tasks(), 0},
        {"distractors2", seen_tasks(), 2}, {"distractors4", seen_tasks(), 4},
    };
    int total_wins = 0;
    for (const Condition& cond : conditions) {
        int wins = 0;
        for (int i = 0; i < trials; ++i) {
            TaskSpec task = cond.pool[i % cond.pool.size()];
            task.distractor_count = cond.distractors >= 0 ? cond.distractors : i % 5;
            if (eval_rollout(task, seed + static_cast<std::uint64_t>(i),
                             make_model_policy(params, cfg, codec, task)))
                ++wins;
        }
        report[cond.name] = static_cast<double>(wins) / trials;
        total_wins += wins;
    }
    report["overall"] = static_cast<double>(total_wins) / (trials * static_cast<int>(conditions.size()));
    return report;
}

}  // namespace actra
