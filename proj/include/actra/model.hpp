#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "actra/attention.hpp"
#include "actra/autodiff.hpp"
#include "actra/checkpoint.hpp"
#include "actra/rng.hpp"
#include "actra/trajectory.hpp"

namespace actra {

// Desk-scale defaults. The paper-scale family is kept as documented
// constants below; it is far outside a single-core double-precision budget.
struct ActraConfig {
    int layers = 2;
    int heads = 4;
    int d_model = 64;
    int bins = 64;
    int action_dims = 3;
    int state_tokens = 2;
    int l_max = 8;
    int t_max = 50;
    int vocab = 7;
    std::vector<int> view_widths = {34, 88};
    bool use_trajectory_attention = true;
    bool use_action_queries = true;

    void validate() const {
        if (layers < 1 || heads < 1 || d_model < 1 || bins < 2 || action_dims < 1 || state_tokens < 1 || l_max < 1 ||
            t_max < 1 || vocab < 1)
            throw std::invalid_argument("config: all dimensions must be positive");
        if (d_model % heads != 0) throw std::invalid_argument("config: heads must divide d_model");
        if (static_cast<int>(view_widths.size()) != state_tokens)
            throw std::invalid_argument("config: view_widths must have one entry per state token");
    }
};

// Published model family (layers, heads, embed dim): reference points only.
inline constexpr int kActraSmall[3] = {6, 8, 512};    // 19.4M params
inline constexpr int kActraBase[3] = {6, 12, 768};    // 43.3M params
inline constexpr int kActraLarge[3] = {10, 20, 1280};  // 198M params

struct TransformerBlock {
    Tensor ln1_scale, ln1_shift;
    AttentionLayerParams attn;
    Tensor ln2_scale, ln2_shift;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct ActraParams {
    PositionalTables tables;
    std::vector<TransformerBlock> blocks;
    Tensor final_ln_scale, final_ln_shift;
    std::vector<Tensor> head_w;  // N heads, D x K
    std::vector<Tensor> head_b;  // N biases, K

    // Stable name->tensor enumeration; fixes checkpoint layout and the
    // initialization stream order.
    std::vector<std::pair<std::string, Tensor*>> named() {
        std::vector<std::pair<std::string, Tensor*>> out;
        out.emplace_back("tables.segment_kind", &tables.segment_kind);
        out.emplace_back("tables.timestep", &tables.timestep);
        out.emplace_back("tables.prompt_tok", &tables.prompt_tok);
        for (std::size_t n = 0; n < tables.action_bin.size(); ++n)
            out.emplace_back("tables.action_bin." + std::to_string(n), &tables.action_bin[n]);
        for (std::size_t m = 0; m < tables.view_w.size(); ++m) {
            out.emplace_back("tables.view_w." + std::to_string(m), &tables.view_w[m]);
            out.emplace_back("tables.view_b." + std::to_string(m), &tables.view_b[m]);
        }
        out.emplace_back("tables.action_query", &tables.action_query);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "layer" + std::to_string(i) + ".";
            TransformerBlock& b = blocks[i];
            out.emplace_back(p + "ln1.scale", &b.ln1_scale);
            out.emplace_back(p + "ln1.shift", &b.ln1_shift);
            out.emplace_back(p + "attn.wq", &b.attn.wq);
            out.emplace_back(p + "attn.bq", &b.attn.bq);
            out.emplace_back(p + "attn.wk", &b.attn.wk);
            out.emplace_back(p + "attn.bk", &b.attn.bk);
            out.emplace_back(p + "attn.wv", &b.attn.wv);
            out.emplace_back(p + "attn.bv", &b.attn.bv);
            out.emplace_back(p + "attn.wo", &b.attn.wo);
            out.emplace_back(p + "attn.bo", &b.attn.bo);
            out.emplace_back(p + "ln2.scale", &b.ln2_scale);
            out.emplace_back(p + "ln2.shift", &b.ln2_shift);
            out.emplace_back(p + "ffn.w1", &b.ffn_w1);
            out.emplace_back(p + "ffn.b1", &b.ffn_b1);
            out.emplace_back(p + "ffn.w2", &b.ffn_w2);
            out.emplace_back(p + "ffn.b2", &b.ffn_b2);
        }
        out.emplace_back("final_ln.scale", &final_ln_scale);
        out.emplace_back("final_ln.shift", &final_ln_shift);
        for (std::size_t n = 0; n < head_w.size(); ++n) {
            out.emplace_back("head" + std::to_string(n) + ".w", &head_w[n]);
            out.emplace_back("head" + std::to_string(n) + ".b", &head_b[n]);
        }
        return out;
    }

    std::size_t param_count() {
        std::size_t c = 0;
        for (auto& [name, t] : named()) c += t->size();
        return c;
    }
};

// Weights ~ N(0, 0.02^2) truncated at 2 sigma; biases and layer-norm shifts
// zero; layer-norm scales one. One rng stream consumed in named() order.
inline ActraParams init_params(const ActraConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int D = cfg.d_model;
    ActraParams p;
    p.tables.segment_kind = Tensor({4, D});
    p.tables.timestep = Tensor({cfg.t_max + 1, D});
    p.tables.prompt_tok = Tensor({cfg.vocab, D});
    for (int n = 0; n < cfg.action_dims; ++n) p.tables.action_bin.emplace_back(Shape{cfg.bins, D});
    for (int m = 0; m < cfg.state_tokens; ++m) {
        p.tables.view_w.emplace_back(Shape{cfg.view_widths[m], D});
        p.tables.view_b.emplace_back(Shape{D});
    }
    p.tables.action_query = Tensor({cfg.action_dims, D});
    p.blocks.resize(cfg.layers);
    for (TransformerBlock& b : p.blocks) {
        b.ln1_scale = Tensor({D});
        b.ln1_shift = Tensor({D});
        b.attn.heads = cfg.heads;
        b.attn.wq = Tensor({D, D});
        b.attn.bq = Tensor({D});
        b.attn.wk = Tensor({D, D});
        b.attn.bk = Tensor({D});
        b.attn.wv = Tensor({D, D});
        b.attn.bv = Tensor({D});
        b.attn.wo = Tensor({D, D});
        b.attn.bo = Tensor({D});
        b.ln2_scale = Tensor({D});
        b.ln2_shift = Tensor({D});
        b.ffn_w1 = Tensor({D, 4 * D});
        b.ffn_b1 = Tensor({4 * D});
        b.ffn_w2 = Tensor({4 * D, D});
        b.ffn_b2 = Tensor({D});
    }
    p.final_ln_scale = Tensor({D});
    p.final_ln_shift = Tensor({D});
    for (int n = 0; n < cfg.action_dims; ++n) {
        p.head_w.emplace_back(Shape{D, cfg.bins});
        p.head_b.emplace_back(Shape{cfg.bins});
    }

    Rng rng(seed);
    for (auto& [name, t] : p.named()) {
        const bool is_scale = name.ends_with(".scale");
        const bool is_bias = name.ends_with(".shift") || name.ends_with(".b") || name.ends_with(".bq") ||
                             name.ends_with(".bk") || name.ends_with(".bv") || name.ends_with(".bo") ||
                             name.ends_with(".b1") || name.ends_with(".b2") || name.find("view_b") != std::string::npos;
        if (is_scale)
            for (double& v : t->data) v = 1.0;
        else if (is_bias)
            for (double& v : t->data) v = 0.0;
        else
            for (double& v : t->data) v = rng.truncated_normal(0.0, 0.02, 2.0);
    }
    return p;
}

inline MaskCache& global_mask_cache() {
    static MaskCache cache;
    return cache;
}

namespace detail {

inline void validate_traj(const Trajectory& traj, const ActraConfig& cfg) {
    if (traj.T() < 1) throw std::invalid_argument("forward: empty trajectory");
    if (traj.T() > cfg.t_max)
        throw std::invalid_argument("forward: trajectory length " + std::to_string(traj.T()) + " exceeds t_max " +
                                    std::to_string(cfg.t_max));
    if (traj.L() < 1 || traj.L() > cfg.l_max)
        throw std::invalid_argument("forward: prompt length " + std::to_string(traj.L()) + " outside [1," +
                                    std::to_string(cfg.l_max) + "]");
    for (const auto& s : traj.steps) {
        if (static_cast<int>(s.obs.size()) != cfg.state_tokens)
            throw std::invalid_argument("forward: observation views do not match config");
        if (static_cast<int>(s.action.size()) != cfg.action_dims)
            throw std::invalid_argument("forward: action dims do not match config");
    }
}

inline Var layer_norm_p(Graph& g, Var x, Tensor& scale, Tensor& shift) {
    return g.layer_norm(x, g.param(scale), g.param(shift));
}

// Pre-norm transformer stack over an embedded sequence.
inline Var transformer(Graph& g, Var x, ActraParams& params, const AttentionMask& mask) {
    for (TransformerBlock& b : params.blocks) {
        Var a = attention_layer(g, layer_norm_p(g, x, b.ln1_scale, b.ln1_shift), mask, b.attn);
        x = g.add(x, a);
        Var h = layer_norm_p(g, x, b.ln2_scale, b.ln2_shift);
        h = g.gelu(g.add(g.matmul(h, g.param(b.ffn_w1)), g.param(b.ffn_b1)));
        h = g.add(g.matmul(h, g.param(b.ffn_w2)), g.param(b.ffn_b2));
        x = g.add(x, h);
    }
    return layer_norm_p(g, x, params.final_ln_scale, params.final_ln_shift);
}

}  // namespace detail

struct DecodeResult {
    std::vector<Var> per_dim_logits;  // N entries, each T x K, row t
    Var final_embeddings;             // seq_len x D
    SegmentLayout layout;
};

// One forward pass producing logits for every timestep and dimension. With
// action queries, logits (t, n) read query row (t, n): all N dimensions of a
// step decode in parallel from the same pass. Without queries
// (autoregressive variant), logits (t, n) read the embedding of the
// preceding token: the last state token for n=0, action token n-1 otherwise;
// attention within each action segment is additionally restricted to be
// causal in that mode so a predicted dimension never sees its own label.
inline DecodeResult forward_decode(Graph& g, const Trajectory& traj, ActraParams& params, const ActraConfig& cfg,
                                   const ActionCodec& codec) {
    detail::validate_traj(traj, cfg);
    const bool q = cfg.use_action_queries;
    SegmentLayout lay = build_layout(traj, q);
    const AttentionMask& mask = global_mask_cache().get(lay, cfg.use_trajectory_attention, !q);
    Var x = embed(g, traj, lay, params.tables, codec);
    Var y = detail::transformer(g, x, params, mask);

    const int T = lay.T, N = lay.N, M = lay.M;
    std::vector<std::vector<int>> head_rows(N);
    for (int i = 0; i < lay.seq_len(); ++i) {
        const auto& pos = lay.positions[i];
        if (q) {
            if (pos.kind == SegmentKind::Query) head_rows[pos.within].push_back(i);
        } else {
            if (pos.kind == SegmentKind::State && pos.within == M - 1) head_rows[0].push_back(i);
            if (pos.kind == SegmentKind::Action && pos.within < N - 1) head_rows[pos.within + 1].push_back(i);
        }
    }
    DecodeResult out;
    out.final_embeddings = y;
    out.layout = std::move(lay);
    for (int n = 0; n < N; ++n) {
        Var rows = g.gather_rows(y, head_rows[n]);
        out.per_dim_logits.push_back(g.add(g.matmul(rows, g.param(params.head_w[n])), g.param(params.head_b[n])));
    }
    (void)T;
    return out;
}

// Convenience wrapper returning a (T, N, K) logits tensor.
inline Tensor decode_logits(const Trajectory& traj, ActraParams& params, const ActraConfig& cfg,
                            const ActionCodec& codec) {
    Graph g;
    DecodeResult r = forward_decode(g, traj, params, cfg, codec);
    const int T = traj.T(), N = cfg.action_dims, K = cfg.bins;
    Tensor logits({T, N, K});
    for (int n = 0; n < N; ++n) {
        const Tensor& block = g.value(r.per_dim_logits[n]);
        for (int t = 0; t < T; ++t)
            for (int k = 0; k < K; ++k)
                logits.data[(static_cast<std::size_t>(t) * N + n) * K + k] = block.at(t, k);
    }
    return logits;
}

// Whole-trajectory embedding f(tau): query-free pass, then row-wise max-pool
// over the final segment's N output embeddings.
inline Var forward_encode(Graph& g, const Trajectory& traj, ActraParams& params, const ActraConfig& cfg,
                          const ActionCodec& codec) {
    detail::validate_traj(traj, cfg);
    SegmentLayout lay = build_layout(traj, false);
    const AttentionMask& mask = global_mask_cache().get(lay, cfg.use_trajectory_attention, false);
    Var x = embed(g, traj, lay, params.tables, codec);
    Var y = detail::transformer(g, x, params, mask);
    Var last = g.slice(y, 0, lay.seq_len() - lay.N, lay.seq_len());
    return g.max_pool_rows(last);
}

// The attention mask a variant uses over the given layout: the trajectory
// rule when use_trajectory_attention is set, otherwise a plain causal mask
// over the same positions (query columns stay masked either way).
inline AttentionMask variant_mask(const ActraConfig& cfg, const SegmentLayout& lay) {
    if (!cfg.use_trajectory_attention) return causal_mask(lay);
    return lay.include_queries ? decoding_mask(lay) : encoding_mask(lay);
}

// Greedy policy step: append the current observation with a placeholder
// action, decode, take argmax bins at the last step, return bin centers.
// With queries this is a single forward pass (the placeholder is invisible
// to step-T queries); the autoregressive variant re-decodes per dimension,
// feeding each decoded value into the next dimension's input.
inline std::vector<double> act(const std::vector<int>& prompt, const std::vector<Trajectory::Step>& history,
                               const std::vector<std::vector<double>>& current_obs, ActraParams& params,
                               const ActraConfig& cfg, const ActionCodec& codec) {
    if (static_cast<int>(history.size()) + 1 > cfg.t_max)
        throw std::invalid_argument("act: history of " + std::to_string(history.size()) + " steps exceeds t_max " +
                                    std::to_string(cfg.t_max));
    Trajectory traj;
    traj.task_id = "act";
    traj.prompt = prompt;
    traj.steps = history;
    Trajectory::Step cur;
    cur.obs = current_obs;
    cur.action.assign(cfg.action_dims, 0.0);
    for (int n = 0; n < cfg.action_dims; ++n) cur.action[n] = codec.undiscretize(0, n);
    traj.steps.push_back(std::move(cur));
    const int T = traj.T(), N = cfg.action_dims, K = cfg.bins;

    auto argmax_last = [&](Graph& g, const DecodeResult& r, int n) {
        const Tensor& block = g.value(r.per_dim_logits[n]);
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (block.at(T - 1, k) > block.at(T - 1, best)) best = k;
        return best;
    };

    std::vector<double> action(N);
    if (cfg.use_action_queries) {
        Graph g;
        DecodeResult r = forward_decode(g, traj, params, cfg, codec);
        for (int n = 0; n < N; ++n) action[n] = codec.undiscretize(argmax_last(g, r, n), n);
    } else {
        for (int n = 0; n < N; ++n) {
            Graph g;
            DecodeResult r = forward_decode(g, traj, params, cfg, codec);
            action[n] = codec.undiscretize(argmax_last(g, r, n), n);
            traj.steps.back().action[n] = action[n];
        }
    }
    return action;
}

// -- checkpoint + sidecar ----------------------------------------------------

inline std::map<std::string, std::string> config_to_meta(const ActraConfig& cfg, const ActionCodec& codec) {
    std::map<std::string, std::string> m;
    m["layers"] = std::to_string(cfg.layers);
    m["heads"] = std::to_string(cfg.heads);
    m["d_model"] = std::to_string(cfg.d_model);
    m["bins"] = std::to_string(cfg.bins);
    m["action_dims"] = std::to_string(cfg.action_dims);
    m["state_tokens"] = std::to_string(cfg.state_tokens);
    m["l_max"] = std::to_string(cfg.l_max);
    m["t_max"] = std::to_string(cfg.t_max);
    m["vocab"] = std::to_string(cfg.vocab);
    m["use_trajectory_attention"] = cfg.use_trajectory_attention ? "1" : "0";
    m["use_action_queries"] = cfg.use_action_queries ? "1" : "0";
    std::string widths;
    for (std::size_t i = 0; i < cfg.view_widths.size(); ++i) {
        if (i) widths += ",";
        widths += std::to_string(cfg.view_widths[i]);
    }
    m["view_widths"] = widths;
    for (int n = 0; n < codec.dims(); ++n) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g", codec.lo[n], codec.hi[n]);
        m["codec.dim" + std::to_string(n)] = buf;
    }
    return m;
}

inline void meta_to_config(const std::map<std::string, std::string>& m, ActraConfig& cfg, ActionCodec& codec) {
    cfg.layers = std::stoi(m.at("layers"));
    cfg.heads = std::stoi(m.at("heads"));
    cfg.d_model = std::stoi(m.at("d_model"));
    cfg.bins = std::stoi(m.at("bins"));
    cfg.action_dims = std::stoi(m.at("action_dims"));
    cfg.state_tokens = std::stoi(m.at("state_tokens"));
    cfg.l_max = std::stoi(m.at("l_max"));
    cfg.t_max = std::stoi(m.at("t_max"));
    cfg.vocab = std::stoi(m.at("vocab"));
    cfg.use_trajectory_attention = m.at("use_trajectory_attention") == "1";
    cfg.use_action_queries = m.at("use_action_queries") == "1";
    cfg.view_widths.clear();
    std::string widths = m.at("view_widths");
    std::size_t pos = 0;
    while (pos < widths.size()) {
        const std::size_t comma = widths.find(',', pos);
        cfg.view_widths.push_back(std::stoi(widths.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    codec.lo.clear();
    codec.hi.clear();
    codec.bins = cfg.bins;
    for (int n = 0; n < cfg.action_dims; ++n) {
        const std::string v = m.at("codec.dim" + std::to_string(n));
        const std::size_t comma = v.find(',');
        codec.lo.push_back(std::stod(v.substr(0, comma)));
        codec.hi.push_back(std::stod(v.substr(comma + 1)));
    }
    cfg.validate();
    codec.validate();
}

inline void save_params(const std::string& path, ActraParams& params, const ActraConfig& cfg, const ActionCodec& codec) {
    std::vector<std::pair<std::string, const Tensor*>> named;
    for (auto& [name, t] : params.named()) named.emplace_back(name, t);
    save_checkpoint(path, named);
    save_meta(path + ".meta", config_to_meta(cfg, codec));
}

inline ActraParams load_params(const std::string& path, ActraConfig& cfg, ActionCodec& codec) {
    meta_to_config(load_meta(path + ".meta"), cfg, codec);
    ActraParams params = init_params(cfg, 0);
    NamedTensors stored = load_checkpoint(path);
    auto named = params.named();
    if (stored.size() != named.size())
        throw std::runtime_error("checkpoint tensor count " + std::to_string(stored.size()) + " does not match architecture (" +
                                 std::to_string(named.size()) + "): " + path);
    for (std::size_t i = 0; i < named.size(); ++i) {
        if (stored[i].first != named[i].first)
            throw std::runtime_error("checkpoint tensor '" + stored[i].first + "' does not match expected '" +
                                     named[i].first + "': " + path);
        if (stored[i].second.shape != named[i].second->shape)
            throw std::runtime_error("checkpoint tensor '" + stored[i].first + "' shape " +
                                     shape_str(stored[i].second.shape) + " does not match " +
                                     shape_str(named[i].second->shape) + ": " + path);
        named[i].second->data = std::move(stored[i].second.data);
    }
    return params;
}

}  // namespace actra
