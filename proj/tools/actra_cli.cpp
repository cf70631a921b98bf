// Command-line front end: dataset generation, training, evaluation, the
// ablation grid, and attention-mask inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "actra/attention.hpp"
#include "actra/trainer.hpp"

namespace {

std::vector<actra::TaskSpec> task_pool(const std::string& split) {
    if (split == "seen") return actra::seen_tasks();
    if (split == "unseen") return actra::unseen_tasks();
    if (split == "all") return actra::all_tasks();
    throw CLI::ValidationError("--tasks", "must be seen, unseen, or all");
}

void print_report(const std::map<std::string, double>& report) {
    for (const auto& [key, value] : report) std::printf("%-14s %.4f\n", key.c_str(), value);
}

void write_report(const std::string& path, const std::map<std::string, double>& report) {
    if (path.empty()) return;
    nlohmann::ordered_json j;
    for (const auto& [key, value] : report) j[key] = value;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << j.dump() << "\n";
}

struct AblateCell {
    std::string name;
    bool traj_attn, queries, contrastive;
};

// Flat key=value config support for `train`. Keys are the long flag names
// without the leading dashes; values given on the command line win. CLI11's
// own set_config only fires on the root app, so the file is routed by hand
// through the subcommand's option table (which also keeps `--help` accurate:
// every documented key is exactly one flag).
void apply_flat_config(CLI::App* cmd, const std::string& path) {
    const std::vector<CLI::ConfigItem> items = CLI::ConfigINI{}.from_file(path);
    for (const CLI::ConfigItem& item : items) {
        if (!item.parents.empty())
            throw CLI::ValidationError("--config", "keys are flat; found section '" + item.fullname() + "'");
        CLI::Option* opt = cmd->get_option_no_throw("--" + item.name);
        if (opt == nullptr) throw CLI::ValidationError("--config", "unknown key '" + item.name + "'");
        if (opt->count() > 0) continue;
        opt->add_result(item.inputs);
        opt->run_callback();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"actra: trajectory-attention policies on a toy pick-and-place world"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations");
    int gen_n = 1000;
    std::uint64_t gen_seed = 0;
    std::string gen_out = "data.jsonl", gen_tasks = "seen";
    gen->add_option("--n", gen_n, "number of trajectories")->capture_default_str();
    gen->add_option("--seed", gen_seed, "generation seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output JSON Lines path")->capture_default_str();
    gen->add_option("--tasks", gen_tasks, "task split: seen, unseen, or all")->capture_default_str();
    gen->callback([&] {
        actra::gen_dataset(gen_n, task_pool(gen_tasks), gen_seed, gen_out);
        std::printf("wrote %d trajectories to %s (+ %s.manifest)\n", gen_n, gen_out.c_str(), gen_out.c_str());
    });

    // train ------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a policy on a dataset");
    actra::TrainConfig tc;
    std::string tr_config, tr_ckpt = "actra.ckpt", tr_metrics = "metrics.jsonl";
    bool no_traj_attn = false, no_queries = false, no_cl = false;
    tr->add_option("--config", tr_config, "flat key=value file; command-line flags override it");
    tr->add_option("--dataset", tc.dataset_path, "training data (JSON Lines)");
    tr->add_option("--checkpoint", tr_ckpt, "checkpoint output path")->capture_default_str();
    tr->add_option("--metrics", tr_metrics, "metrics JSON Lines output path")->capture_default_str();
    tr->add_option("--layers", tc.model.layers)->capture_default_str();
    tr->add_option("--heads", tc.model.heads)->capture_default_str();
    tr->add_option("--d-model", tc.model.d_model)->capture_default_str();
    tr->add_option("--bins", tc.model.bins)->capture_default_str();
    tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
    tr->add_option("--epochs", tc.epochs)->capture_default_str();
    tr->add_option("--warmup-epochs", tc.warmup_epochs, "-1 picks 20% of epochs")->capture_default_str();
    tr->add_option("--lr", tc.lr)->capture_default_str();
    tr->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
    tr->add_option("--sigma", tc.sigma, "per-dimension positive noise std")->delimiter(',');
    tr->add_option("--seed", tc.seed)->capture_default_str();
    tr->add_option("--cl-crop", tc.cl_crop_len, "contrastive batch length cap")->capture_default_str();
    tr->add_option("--mix-alpha", tc.mix_alpha, "with --mix-beta: constant mixed objective")->capture_default_str();
    tr->add_option("--mix-beta", tc.mix_beta)->capture_default_str();
    tr->add_flag("--no-trajectory-attention", no_traj_attn, "plain causal attention");
    tr->add_flag("--no-action-queries", no_queries, "autoregressive decoding");
    tr->add_flag("--no-contrastive", no_cl, "skip the contrastive warmup");
    tr->add_flag("--drop-neg-prompt", tc.drop_neg_prompt, "drop the prompt negative family");
    tr->add_flag("--drop-neg-state", tc.drop_neg_state, "drop the state negative family");
    tr->add_flag("--drop-neg-action", tc.drop_neg_action, "drop the action negative family");
    tr->callback([&] {
        if (!tr_config.empty()) apply_flat_config(tr, tr_config);
        if (tc.dataset_path.empty()) throw CLI::RequiredError("--dataset");
        tc.model.use_trajectory_attention = !no_traj_attn;
        tc.model.use_action_queries = !no_queries;
        tc.use_contrastive = !no_cl;
        tc.codec = actra::env_codec(tc.model.bins);
        actra::TrainResult r = actra::train(tc, tr_ckpt, tr_metrics);
        std::printf("checkpoint: %s\nmetrics: %s\n", tr_ckpt.c_str(), tr_metrics.c_str());
        if (!r.metrics.epochs.empty() && r.metrics.epochs.back().bc_loss)
            std::printf("final bc loss per token: %.4f\n", *r.metrics.epochs.back().bc_loss);
    });

    // eval -------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "roll out a checkpoint and report success rates");
    std::string ev_ckpt, ev_out;
    int ev_trials = 50;
    std::uint64_t ev_seed = 0;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--trials", ev_trials, "rollouts per condition")->capture_default_str();
    ev->add_option("--seed", ev_seed, "evaluation seed")->capture_default_str();
    ev->add_option("--out", ev_out, "also write the report as JSON");
    ev->callback([&] {
        actra::ActraConfig cfg;
        actra::ActionCodec codec;
        actra::ActraParams params = actra::load_params(ev_ckpt, cfg, codec);
        auto report = actra::evaluate(params, cfg, codec, ev_trials, ev_seed);
        print_report(report);
        write_report(ev_out, report);
    });

    // ablate -----------------------------------------------------------------
    auto* ab = app.add_subcommand("ablate", "train and evaluate the eight architecture cells");
    actra::TrainConfig ac;
    std::string ab_dir = "ablate_out", ab_out;
    int ab_seeds = 1, ab_trials = 25;
    ab->add_option("--dataset", ac.dataset_path, "training data (JSON Lines)")->required();
    ab->add_option("--out-dir", ab_dir, "directory for per-cell checkpoints and metrics")->capture_default_str();
    ab->add_option("--out", ab_out, "also write rows as JSON Lines");
    ab->add_option("--layers", ac.model.layers)->capture_default_str();
    ab->add_option("--heads", ac.model.heads)->capture_default_str();
    ab->add_option("--d-model", ac.model.d_model)->capture_default_str();
    ab->add_option("--bins", ac.model.bins)->capture_default_str();
    ab->add_option("--batch-size", ac.batch_size)->capture_default_str();
    ab->add_option("--epochs", ac.epochs)->capture_default_str();
    ab->add_option("--warmup-epochs", ac.warmup_epochs)->capture_default_str();
    ab->add_option("--lr", ac.lr)->capture_default_str();
    ab->add_option("--seeds", ab_seeds, "seeds averaged per cell")->capture_default_str();
    ab->add_option("--trials", ab_trials, "eval rollouts per condition")->capture_default_str();
    ab->add_option("--seed", ac.seed, "base seed")->capture_default_str();
    ab->add_flag("--drop-neg-prompt", ac.drop_neg_prompt, "drop the prompt negative family in CL cells");
    ab->add_flag("--drop-neg-state", ac.drop_neg_state, "drop the state negative family in CL cells");
    ab->add_flag("--drop-neg-action", ac.drop_neg_action, "drop the action negative family in CL cells");
    ab->callback([&] {
        std::filesystem::create_directories(ab_dir);
        ac.codec = actra::env_codec(ac.model.bins);
        const std::vector<AblateCell> cells = {
            {"full", true, true, true},
            {"wo-CL", true, true, false},
            {"wo-ActQuery", true, false, true},
            {"wo-ActQuery-CL", true, false, false},
            {"wo-TrajAttn", false, true, true},
            {"wo-TrajAttn-CL", false, true, false},
            {"wo-Both", false, false, true},
            {"wo-Both-CL", false, false, false},
        };
        std::ofstream rows;
        if (!ab_out.empty()) rows.open(ab_out, std::ios::binary | std::ios::trunc);
        std::printf("%-16s %-9s %-9s %-11s %-8s %-8s %-8s\n", "cell", "trajattn", "queries", "contrastive",
                    "overall", "seen", "unseen");
        const std::uint64_t base_seed = ac.seed;
        for (const AblateCell& cell : cells) {
            double overall = 0.0, seen = 0.0, unseen = 0.0;
            for (int s = 0; s < ab_seeds; ++s) {
                actra::TrainConfig cc = ac;
                cc.model.use_trajectory_attention = cell.traj_attn;
                cc.model.use_action_queries = cell.queries;
                cc.use_contrastive = cell.contrastive;
                cc.seed = base_seed + static_cast<std::uint64_t>(s);
                const std::string stem = ab_dir + "/" + cell.name + "_s" + std::to_string(cc.seed);
                actra::TrainResult r = actra::train(cc, stem + ".ckpt", stem + ".jsonl");
                auto report = actra::evaluate(r.params, cc.model, cc.codec, ab_trials, cc.seed);
                overall += report.at("overall");
                seen += report.at("seen");
                unseen += report.at("unseen");
            }
            overall /= ab_seeds;
            seen /= ab_seeds;
            unseen /= ab_seeds;
            std::printf("%-16s %-9s %-9s %-11s %-8.4f %-8.4f %-8.4f\n", cell.name.c_str(),
                        cell.traj_attn ? "yes" : "no", cell.queries ? "yes" : "no",
                        cell.contrastive ? "yes" : "no", overall, seen, unseen);
            if (rows.is_open()) {
                nlohmann::ordered_json j;
                j["cell"] = cell.name;
                j["trajectory_attention"] = cell.traj_attn;
                j["action_queries"] = cell.queries;
                j["contrastive"] = cell.contrastive;
                j["seeds"] = ab_seeds;
                j["overall"] = overall;
                j["seen"] = seen;
                j["unseen"] = unseen;
                rows << j.dump() << "\n";
            }
        }
    });

    // inspect-mask -----------------------------------------------------------
    auto* im = app.add_subcommand("inspect-mask", "print an attention mask as a '#'/'.' grid");
    int im_L = 4, im_M = 2, im_N = 3, im_T = 2;
    std::string im_rule = "trajectory";
    bool im_no_queries = false, im_ar = false;
    im->add_option("--L", im_L, "prompt tokens")->capture_default_str();
    im->add_option("--M", im_M, "state tokens per step")->capture_default_str();
    im->add_option("--N", im_N, "action dimensions")->capture_default_str();
    im->add_option("--T", im_T, "timesteps")->capture_default_str();
    im->add_option("--rule", im_rule, "trajectory or causal")->capture_default_str();
    im->add_flag("--no-queries", im_no_queries, "query-free encoding layout");
    im->add_flag("--ar", im_ar, "autoregressive action restriction (query-free only)");
    im->callback([&] {
        if (im_rule != "trajectory" && im_rule != "causal")
            throw CLI::ValidationError("--rule", "must be trajectory or causal");
        const actra::SegmentLayout lay = actra::make_layout(im_L, im_M, im_N, im_T, !im_no_queries);
        actra::MaskCache cache;
        const actra::AttentionMask& mask = cache.get(lay, im_rule == "trajectory", im_ar);
        std::printf("%dx%d %s mask (L=%d M=%d N=%d T=%d%s%s)\n", mask.size, mask.size, im_rule.c_str(), im_L, im_M,
                    im_N, im_T, im_no_queries ? ", no queries" : "", im_ar ? ", ar" : "");
        std::fputs(mask.render().c_str(), stdout);
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
