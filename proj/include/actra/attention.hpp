#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "actra/autodiff.hpp"
#include "actra/trajectory.hpp"

namespace actra {

// Square boolean attention mask; true = row (destination) may attend to
// column (source). Stored row-major in the exact buffer format masked_fill
// consumes, so one mask instance is shared by every layer of a forward pass.
struct AttentionMask {
    int size = 0;
    std::vector<std::uint8_t> allowed;

    bool at(int r, int c) const { return allowed[static_cast<std::size_t>(r) * size + c] != 0; }
    void set(int r, int c, bool v) { allowed[static_cast<std::size_t>(r) * size + c] = v ? 1 : 0; }

    int count_true() const {
        int n = 0;
        for (std::uint8_t v : allowed) n += v;
        return n;
    }

    // `#` allowed / `.` masked, one line per destination row.
    std::string render() const {
        std::string out;
        out.reserve(static_cast<std::size_t>(size) * (size + 1));
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) out.push_back(at(r, c) ? '#' : '.');
            out.push_back('\n');
        }
        return out;
    }
};

namespace detail {

inline void check_rows_nonempty(const AttentionMask& m) {
    for (int r = 0; r < m.size; ++r) {
        bool any = false;
        for (int c = 0; c < m.size && !any; ++c) any = m.at(r, c);
        if (!any) throw std::invalid_argument("attention mask row " + std::to_string(r) + " has no allowed source");
    }
}

}  // namespace detail

// Trajectory-attention mask over a query-bearing layout. Non-query rows see
// every non-query column of their own or any earlier segment (inter-segment
// causal, intra-segment bidirectional). Query rows at step t see the prompt,
// all of steps < t, and step t's state segment. Query columns are masked
// everywhere: queries are never attention sources.
inline AttentionMask decoding_mask(const SegmentLayout& lay) {
    if (!lay.include_queries) throw std::invalid_argument("decoding_mask needs a layout with queries");
    AttentionMask m;
    m.size = lay.seq_len();
    m.allowed.assign(static_cast<std::size_t>(m.size) * m.size, 0);
    for (int r = 0; r < m.size; ++r) {
        const auto& pr = lay.positions[r];
        for (int c = 0; c < m.size; ++c) {
            const auto& pc = lay.positions[c];
            if (pc.kind == SegmentKind::Query) continue;
            bool ok;
            if (pr.kind == SegmentKind::Query)
                ok = pc.timestep < pr.timestep || (pc.timestep == pr.timestep && pc.kind == SegmentKind::State);
            else
                ok = pc.segment <= pr.segment;
            if (ok) m.set(r, c, true);
        }
    }
    detail::check_rows_nonempty(m);
    return m;
}

// Same rule over the query-free sequence: equals decoding_mask with all
// query rows and columns deleted.
inline AttentionMask encoding_mask(const SegmentLayout& lay) {
    if (lay.include_queries) throw std::invalid_argument("encoding_mask needs a layout without queries");
    AttentionMask m;
    m.size = lay.seq_len();
    m.allowed.assign(static_cast<std::size_t>(m.size) * m.size, 0);
    for (int r = 0; r < m.size; ++r)
        for (int c = 0; c < m.size; ++c)
            if (lay.positions[c].segment <= lay.positions[r].segment) m.set(r, c, true);
    detail::check_rows_nonempty(m);
    return m;
}

// Plain causal mask over the same positions; query columns stay fully
// masked and query rows attend causally to non-query history.
inline AttentionMask causal_mask(const SegmentLayout& lay) {
    AttentionMask m;
    m.size = lay.seq_len();
    m.allowed.assign(static_cast<std::size_t>(m.size) * m.size, 0);
    for (int r = 0; r < m.size; ++r)
        for (int c = 0; c <= r; ++c)
            if (lay.positions[c].kind != SegmentKind::Query) m.set(r, c, true);
    detail::check_rows_nonempty(m);
    return m;
}

// Unmasked entries the trajectory rule adds over the causal baseline among
// non-query positions: one per intra-segment pair that causality forbids.
inline long long extra_entry_count(const SegmentLayout& lay) {
    const long long L = lay.L, M = lay.M, N = lay.N, T = lay.T;
    return L * (L - 1) / 2 + T * (M * (M - 1) / 2 + N * (N - 1) / 2);
}

struct AttentionLayerParams {
    int heads = 1;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // D x D projections, D biases
};

// Masked multi-head self-attention. Masked score entries get exactly zero
// attention weight, so outputs are bit-level independent of masked columns.
inline Var attention_layer(Graph& g, Var x, const AttentionMask& mask, AttentionLayerParams& p) {
    const Tensor& X = g.value(x);
    if (X.rank() != 2 || X.shape[0] != mask.size)
        throw std::invalid_argument("attention_layer: input " + shape_str(X.shape) + " does not match mask size " +
                                    std::to_string(mask.size));
    const int D = X.shape[1];
    if (p.heads < 1 || D % p.heads != 0)
        throw std::invalid_argument("attention_layer: heads must divide embed dim " + std::to_string(D));
    detail::check_rows_nonempty(mask);
    const int dh = D / p.heads;
    Var q = g.add(g.matmul(x, g.param(p.wq)), g.param(p.bq));
    Var k = g.add(g.matmul(x, g.param(p.wk)), g.param(p.bk));
    Var v = g.add(g.matmul(x, g.param(p.wv)), g.param(p.bv));
    std::vector<Var> heads;
    heads.reserve(p.heads);
    for (int h = 0; h < p.heads; ++h) {
        // 1/sqrt(dh) is applied to q before the score product so the scaling
        // pass touches an S x dh block instead of S x S scores.
        Var qh = g.scale(g.slice(q, 1, h * dh, (h + 1) * dh), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var kh = g.slice(k, 1, h * dh, (h + 1) * dh);
        Var vh = g.slice(v, 1, h * dh, (h + 1) * dh);
        Var att = g.masked_softmax(g.matmul(qh, g.transpose(kh)), &mask.allowed);
        heads.push_back(g.matmul(att, vh));
    }
    Var merged = p.heads == 1 ? heads[0] : g.concat(heads, 1);
    return g.add(g.matmul(merged, g.param(p.wo)), g.param(p.bo));
}

// Masks depend only on layout geometry and the variant flags, so they are
// built once and shared across layers and forward passes. References into
// the map stay valid for the cache's lifetime.
class MaskCache {
public:
    const AttentionMask& get(const SegmentLayout& lay, bool trajectory_rule, bool ar_causal_actions) {
        const Key key{lay.L, lay.M, lay.N, lay.T, lay.include_queries, trajectory_rule, ar_causal_actions};
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        AttentionMask m;
        if (!trajectory_rule)
            m = causal_mask(lay);
        else
            m = lay.include_queries ? decoding_mask(lay) : encoding_mask(lay);
        if (ar_causal_actions)
            for (int r = 0; r < m.size; ++r) {
                const auto& pr = lay.positions[r];
                for (int c = 0; c < m.size; ++c) {
                    const auto& pc = lay.positions[c];
                    if (pr.kind == SegmentKind::Action && pc.kind == SegmentKind::Action && pr.segment == pc.segment &&
                        pc.within > pr.within)
                        m.set(r, c, false);
                }
            }
        return cache_.emplace(key, std::move(m)).first->second;
    }

private:
    using Key = std::tuple<int, int, int, int, bool, bool, bool>;
    std::map<Key, AttentionMask> cache_;
};

}  // namespace actra
