#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actra/autodiff.hpp"
#include "actra/tensor.hpp"

namespace actra {

// One language-conditioned demonstration: prompt token ids plus T steps of
// (multi-view observation features, continuous action).
struct Trajectory {
    struct Step {
        std::vector<std::vector<double>> obs;  // M feature vectors
        std::vector<double> action;            // N reals
    };
    std::string task_id;
    std::vector<int> prompt;
    std::vector<Step> steps;

    int L() const { return static_cast<int>(prompt.size()); }
    int T() const { return static_cast<int>(steps.size()); }
};

// Per-dimension uniform binning over [lo, hi].
struct ActionCodec {
    std::vector<double> lo, hi;
    int bins = 64;

    int dims() const { return static_cast<int>(lo.size()); }

    void validate() const {
        if (lo.size() != hi.size()) throw std::invalid_argument("codec lo/hi length mismatch");
        if (bins < 2) throw std::invalid_argument("codec needs at least 2 bins");
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (!(lo[i] < hi[i])) throw std::invalid_argument("codec range must have lo < hi");
    }

    int discretize(double value, int dim) const {
        if (!std::isfinite(value)) throw std::invalid_argument("discretize: non-finite value");
        const double span = hi[dim] - lo[dim];
        const int b = static_cast<int>(std::floor((value - lo[dim]) / span * bins));
        return std::max(0, std::min(bins - 1, b));
    }

    double undiscretize(int bin, int dim) const {
        if (bin < 0 || bin >= bins)
            throw std::invalid_argument("undiscretize: bin " + std::to_string(bin) + " out of [0," + std::to_string(bins) + ")");
        return lo[dim] + (bin + 0.5) * (hi[dim] - lo[dim]) / bins;
    }

    std::vector<int> discretize_action(const std::vector<double>& a) const {
        std::vector<int> out(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = discretize(a[i], static_cast<int>(i));
        return out;
    }
};

enum class SegmentKind : std::uint8_t { Prompt = 0, State = 1, Query = 2, Action = 3 };

inline const char* segment_kind_name(SegmentKind k) {
    switch (k) {
        case SegmentKind::Prompt: return "prompt";
        case SegmentKind::State: return "state";
        case SegmentKind::Query: return "query";
        case SegmentKind::Action: return "action";
    }
    return "?";
}

// The (L, M, N, T) geometry of a tokenized trajectory plus the flattened
// per-position bookkeeping that mask construction and embedding rely on.
// Position order: prompt, then per step t (1-based): State(M), Query(N, only
// when include_queries), Action(N). Prompt positions carry timestep 0.
struct SegmentLayout {
    struct Position {
        SegmentKind kind;
        int timestep;  // 0 for prompt, 1..T for steps
        int within;    // index inside its segment
        int segment;   // ordinal of the segment in sequence order
    };

    int L = 0, M = 0, N = 0, T = 0;
    bool include_queries = true;
    std::vector<Position> positions;

    int seq_len() const { return static_cast<int>(positions.size()); }
};

inline SegmentLayout make_layout(int L, int M, int N, int T, bool include_queries) {
    if (L < 1 || M < 1 || N < 1 || T < 1)
        throw std::invalid_argument("layout dims must be positive, got L=" + std::to_string(L) + " M=" + std::to_string(M) +
                                    " N=" + std::to_string(N) + " T=" + std::to_string(T));
    SegmentLayout lay;
    lay.L = L;
    lay.M = M;
    lay.N = N;
    lay.T = T;
    lay.include_queries = include_queries;
    lay.positions.reserve(L + T * (M + N + (include_queries ? N : 0)));
    int seg = 0;
    for (int i = 0; i < L; ++i) lay.positions.push_back({SegmentKind::Prompt, 0, i, seg});
    for (int t = 1; t <= T; ++t) {
        ++seg;
        for (int m = 0; m < M; ++m) lay.positions.push_back({SegmentKind::State, t, m, seg});
        if (include_queries) {
            ++seg;
            for (int n = 0; n < N; ++n) lay.positions.push_back({SegmentKind::Query, t, n, seg});
        }
        ++seg;
        for (int n = 0; n < N; ++n) lay.positions.push_back({SegmentKind::Action, t, n, seg});
    }
    return lay;
}

inline SegmentLayout build_layout(const Trajectory& traj, bool include_queries) {
    if (traj.steps.empty()) throw std::invalid_argument("build_layout: empty trajectory");
    const int M = static_cast<int>(traj.steps[0].obs.size());
    const int N = static_cast<int>(traj.steps[0].action.size());
    for (const auto& s : traj.steps)
        if (static_cast<int>(s.obs.size()) != M || static_cast<int>(s.action.size()) != N)
            throw std::invalid_argument("build_layout: ragged trajectory (views or action dims vary across steps)");
    return make_layout(traj.L(), M, N, traj.T(), include_queries);
}

// All embedding tables and projections feeding the first transformer layer.
// The action-query table has exactly one row per action dimension; that row
// is the content of q_i at every timestep, so the parameter count here is
// independent of T except for the timestep table.
struct PositionalTables {
    Tensor segment_kind;             // 4 x D
    Tensor timestep;                 // (T_max+1) x D
    Tensor prompt_tok;               // V x D
    std::vector<Tensor> action_bin;  // N tables, K x D
    std::vector<Tensor> view_w;      // M maps, width_m x D
    std::vector<Tensor> view_b;      // M biases, D
    Tensor action_query;             // N x D
};

// Builds the (seq_len x D) input embedding on the graph: each row is content
// + segment-kind + timestep. Query rows take their content from the learned
// query table and consume no trajectory input.
inline Var embed(Graph& g, const Trajectory& traj, const SegmentLayout& lay, PositionalTables& tables,
                 const ActionCodec& codec) {
    const int T = lay.T, M = lay.M, N = lay.N, L = lay.L;
    const int D = tables.segment_kind.shape[1];
    if (T + 1 > tables.timestep.shape[0])
        throw std::invalid_argument("embed: trajectory length " + std::to_string(T) + " exceeds timestep table");
    for (int tok : traj.prompt)
        if (tok < 0 || tok >= tables.prompt_tok.shape[0])
            throw std::invalid_argument("embed: prompt token " + std::to_string(tok) + " outside vocabulary");
    (void)D;

    // Grouped content blocks, later reordered into sequence order by a
    // single gather: prompt rows, per-view projected states, query rows,
    // per-dimension action-bin rows.
    std::vector<Var> blocks;
    blocks.push_back(g.gather_rows(g.param(tables.prompt_tok), traj.prompt));
    for (int m = 0; m < M; ++m) {
        const int w = static_cast<int>(traj.steps[0].obs[m].size());
        if (tables.view_w[m].shape[0] != w)
            throw std::invalid_argument("embed: view " + std::to_string(m) + " width " + std::to_string(w) +
                                        " does not match projection " + shape_str(tables.view_w[m].shape));
        Tensor feats({T, w});
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < w; ++j) feats.at(t, j) = traj.steps[t].obs[m][j];
        blocks.push_back(g.add(g.matmul(g.constant(feats), g.param(tables.view_w[m])), g.param(tables.view_b[m])));
    }
    if (lay.include_queries) blocks.push_back(g.param(tables.action_query));
    for (int n = 0; n < N; ++n) {
        std::vector<int> bins(T);
        for (int t = 0; t < T; ++t) bins[t] = codec.discretize(traj.steps[t].action[n], n);
        blocks.push_back(g.gather_rows(g.param(tables.action_bin[n]), bins));
    }
    Var grouped = g.concat(blocks, 0);

    // Row offsets of each block within `grouped`.
    const int off_prompt = 0;
    const int off_view0 = L;                                     // view m starts at L + m*T
    const int off_query = L + M * T;                             // N rows (when present)
    const int off_action0 = off_query + (lay.include_queries ? N : 0);  // dim n starts at off_action0 + n*T

    std::vector<int> order, kinds, tsteps;
    order.reserve(lay.seq_len());
    for (const auto& p : lay.positions) {
        switch (p.kind) {
            case SegmentKind::Prompt: order.push_back(off_prompt + p.within); break;
            case SegmentKind::State: order.push_back(off_view0 + p.within * T + (p.timestep - 1)); break;
            case SegmentKind::Query: order.push_back(off_query + p.within); break;
            case SegmentKind::Action: order.push_back(off_action0 + p.within * T + (p.timestep - 1)); break;
        }
        kinds.push_back(static_cast<int>(p.kind));
        tsteps.push_back(p.timestep);
    }
    Var content = g.gather_rows(grouped, order);
    Var kind_rows = g.gather_rows(g.param(tables.segment_kind), kinds);
    Var tstep_rows = g.gather_rows(g.param(tables.timestep), tsteps);
    return g.add(g.add(content, kind_rows), tstep_rows);
}

// -- JSON Lines dataset I/O --------------------------------------------------
// One trajectory per line:
//   {"task_id": string, "prompt": [int], "steps": [{"obs": [[real]], "action": [real]}]}

inline nlohmann::ordered_json trajectory_to_json(const Trajectory& traj) {
    nlohmann::ordered_json j;
    j["task_id"] = traj.task_id;
    j["prompt"] = traj.prompt;
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (const auto& s : traj.steps) {
        nlohmann::ordered_json step;
        step["obs"] = s.obs;
        step["action"] = s.action;
        steps.push_back(std::move(step));
    }
    j["steps"] = std::move(steps);
    return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory traj;
    traj.task_id = j.at("task_id").get<std::string>();
    traj.prompt = j.at("prompt").get<std::vector<int>>();
    for (const auto& sj : j.at("steps")) {
        Trajectory::Step s;
        s.obs = sj.at("obs").get<std::vector<std::vector<double>>>();
        s.action = sj.at("action").get<std::vector<double>>();
        traj.steps.push_back(std::move(s));
    }
    if (traj.prompt.empty() || traj.steps.empty()) throw std::runtime_error("trajectory missing prompt or steps");
    return traj;
}

inline void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open dataset for writing: " + path);
    for (const auto& t : trajs) f << trajectory_to_json(t).dump() << "\n";
    if (!f) throw std::runtime_error("dataset write failed: " + path);
}

inline std::vector<Trajectory> load_trajectories(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<Trajectory> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(trajectory_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("bad trajectory at " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace actra
