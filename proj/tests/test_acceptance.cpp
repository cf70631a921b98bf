// Acceptance gates for the library as a whole: ten criteria, one printed
// verdict line each. The later criteria train real models on the toy world,
// so a full run takes minutes, not seconds.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "actra/grad_check.hpp"
#include "actra/trainer.hpp"

using namespace actra;

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void verdict(int criterion, bool ok, const std::string& what) {
    std::printf("criterion %2d: %s  %s\n", criterion, ok ? "PASS" : "FAIL", what.c_str());
    std::fflush(stdout);
    REQUIRE(ok);
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "actra_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- shared model fixtures --------------------------------------------------

ActraConfig tiny_config() {
    ActraConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_model = 8;
    cfg.bins = 4;
    cfg.action_dims = 2;
    cfg.state_tokens = 1;
    cfg.l_max = 4;
    cfg.t_max = 4;
    cfg.vocab = 4;
    cfg.view_widths = {3};
    return cfg;
}

ActionCodec tiny_codec(const ActraConfig& cfg) {
    ActionCodec c;
    c.lo.assign(cfg.action_dims, -1.0);
    c.hi.assign(cfg.action_dims, 1.0);
    c.bins = cfg.bins;
    return c;
}

Trajectory random_traj(const ActraConfig& cfg, int L, int T, Rng& rng) {
    Trajectory traj;
    traj.task_id = "t";
    for (int i = 0; i < L; ++i) traj.prompt.push_back(static_cast<int>(rng.uniform_int(cfg.vocab)));
    for (int t = 0; t < T; ++t) {
        Trajectory::Step s;
        for (int m = 0; m < cfg.state_tokens; ++m) {
            std::vector<double> v(cfg.view_widths[m]);
            for (double& x : v) x = rng.normal();
            s.obs.push_back(std::move(v));
        }
        for (int n = 0; n < cfg.action_dims; ++n) s.action.push_back(rng.uniform(-0.95, 0.95));
        traj.steps.push_back(std::move(s));
    }
    return traj;
}

std::vector<int> nonquery_rows(const SegmentLayout& lay) {
    std::vector<int> out;
    for (int i = 0; i < lay.seq_len(); ++i)
        if (lay.positions[i].kind != SegmentKind::Query) out.push_back(i);
    return out;
}

// --- gradient-check plumbing (criterion 5) ----------------------------------

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

Var weighted_sum(Graph& g, Var x, Rng& rng) {
    Tensor w(g.value(x).shape);
    for (double& v : w.data) v = rng.uniform(0.5, 1.5);
    return g.dot(x, g.constant(w));
}

double check_op(const std::function<double(Graph&, std::vector<Var>&)>& build, std::vector<Tensor>& leaves,
                double epsilon = 1e-5) {
    auto eval = [&]() {
        Graph g;
        std::vector<Var> vars;
        for (Tensor& t : leaves) vars.push_back(g.input(t));
        return build(g, vars);
    };
    Graph g;
    std::vector<Var> vars;
    std::vector<Tensor*> ptrs;
    for (Tensor& t : leaves) {
        t.requires_grad = true;
        vars.push_back(g.input(t));
        ptrs.push_back(&t);
    }
    build(g, vars);
    Var root{static_cast<int>(g.size()) - 1};
    g.backward(root);
    std::vector<Tensor> analytic;
    for (Var v : vars) analytic.push_back(g.grad(v));
    return grad_check(eval, ptrs, analytic, epsilon);
}

// --- rollout helpers (criteria 8 and 9) -------------------------------------

// Success rate on one task pool, distractor counts cycling 0..4, one reset
// seed per trial.
double pool_success(ActraParams& params, const ActraConfig& cfg, const ActionCodec& codec,
                    const std::vector<TaskSpec>& pool, int trials, std::uint64_t seed) {
    int wins = 0;
    for (int i = 0; i < trials; ++i) {
        TaskSpec task = pool[i % pool.size()];
        task.distractor_count = i % 5;
        auto policy = make_model_policy(params, cfg, codec, task);
        if (eval_rollout(task, seed + static_cast<std::uint64_t>(i), policy)) ++wins;
    }
    return static_cast<double>(wins) / trials;
}

// Same-budget training cell for the ablation criterion.
struct CellScore {
    double overall_mean = 0.0;
};

// Desk-run and ablation budgets, pinned once calibration settles. The
// ablation uses a smaller dataset so nine runs stay inside the suite budget.
constexpr int kDeskEpochs = 30;
constexpr int kDeskWarmup = 2;
constexpr double kDeskLr = 2e-3;
constexpr int kDeskBatch = 16;
constexpr int kAblN = 240;
constexpr int kAblEpochs = 25;
constexpr int kAblWarmup = 2;
constexpr double kAblLr = 2e-3;
constexpr int kAblTrials = 15;  // per condition, 5 conditions

}  // namespace

TEST_CASE("01 mask count law") {
    auto t0 = Clock::now();
    Rng rng(101);
    bool ok = true;
    long long checked = 0;
    for (int i = 0; i < 1200 && ok; ++i) {
        const int L = 1 + static_cast<int>(rng.uniform_int(8));
        const int M = 1 + static_cast<int>(rng.uniform_int(4));
        const int N = 1 + static_cast<int>(rng.uniform_int(6));
        const int T = 1 + static_cast<int>(rng.uniform_int(6));
        SegmentLayout lay = make_layout(L, M, N, T, true);
        AttentionMask traj = decoding_mask(lay);
        AttentionMask causal = causal_mask(lay);
        long long extra = 0;
        for (int r = 0; r < traj.size; ++r)
            for (int c = 0; c < traj.size; ++c) {
                if (traj.at(r, c) && !causal.at(r, c)) ++extra;
                if (!traj.at(r, c) && causal.at(r, c)) ok = false;  // trajectory rule only adds
            }
        if (extra != extra_entry_count(lay)) ok = false;
        ++checked;
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 5.0;
    verdict(1, ok,
            "brute-force extra entries == L(L-1)/2 + T(M(M-1)/2 + N(N-1)/2) on " + std::to_string(checked) +
                " random layouts in " + std::to_string(secs).substr(0, 4) + " s");
}

TEST_CASE("02 causal reduction at L=M=N=1") {
    bool ok = true;
    for (int T = 1; T <= 32; ++T) {
        SegmentLayout lay = make_layout(1, 1, 1, T, false);
        if (encoding_mask(lay).allowed != causal_mask(lay).allowed) ok = false;
    }
    verdict(2, ok, "query-free trajectory mask equals the causal mask for all T <= 32");
}

TEST_CASE("03 query invisibility, 100 random models") {
    ActraConfig cfg = tiny_config();
    ActionCodec codec = tiny_codec(cfg);
    Rng rng(103);
    bool ok = true;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        ActraParams p = init_params(cfg, 1000 + trial);
        Trajectory traj =
            random_traj(cfg, 2 + static_cast<int>(rng.uniform_int(3)), 1 + static_cast<int>(rng.uniform_int(4)), rng);
        Graph g1;
        DecodeResult r1 = forward_decode(g1, traj, p, cfg, codec);
        if (trial % 2 == 0)
            for (double& v : p.tables.action_query.data) v = rng.normal(0.0, 5.0);
        else
            for (double& v : p.tables.action_query.data) v = 0.0;
        Graph g2;
        DecodeResult r2 = forward_decode(g2, traj, p, cfg, codec);
        for (int i : nonquery_rows(r1.layout))
            for (int d = 0; d < cfg.d_model; ++d)
                if (g1.value(r1.final_embeddings).at(i, d) != g2.value(r2.final_embeddings).at(i, d)) ok = false;
    }
    verdict(3, ok, "randomized or zeroed query embeddings leave non-query embeddings bit-identical");
}

TEST_CASE("04 encode/decode equivalence, 100 random cases") {
    ActraConfig cfg = tiny_config();
    ActionCodec codec = tiny_codec(cfg);
    Rng rng(104);
    bool ok = true;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        ActraParams p = init_params(cfg, 2000 + trial);
        Trajectory traj = random_traj(cfg, 2, 1 + static_cast<int>(rng.uniform_int(4)), rng);
        Graph gd;
        DecodeResult rd = forward_decode(gd, traj, p, cfg, codec);
        SegmentLayout enc_lay = build_layout(traj, false);
        const AttentionMask& enc_mask = global_mask_cache().get(enc_lay, true, false);
        Graph ge;
        Var x = embed(ge, traj, enc_lay, p.tables, codec);
        Var ye = detail::transformer(ge, x, p, enc_mask);
        const std::vector<int> rows = nonquery_rows(rd.layout);
        for (std::size_t a = 0; a < rows.size(); ++a)
            for (int d = 0; d < cfg.d_model; ++d)
                if (std::abs(gd.value(rd.final_embeddings).at(rows[a], d) -
                             ge.value(ye).at(static_cast<int>(a), d)) >= 1e-9)
                    ok = false;
    }
    verdict(4, ok, "non-query embeddings under the decoding mask match the encoding pass within 1e-9");
}

TEST_CASE("05 gradient suite") {
    auto t0 = Clock::now();
    Rng rng(105);
    double worst = 0.0;
    std::string worst_op = "none";
    auto record = [&](const char* name, double err) {
        if (err > worst) {
            worst = err;
            worst_op = name;
        }
    };

    {
        std::vector<Tensor> leaves = {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)};
        Rng wr(1);
        record("matmul", check_op(
                             [&wr](Graph& g, std::vector<Var>& v) {
                                 Rng w = wr;
                                 return g.value(weighted_sum(g, g.matmul(v[0], v[1]), w)).data[0];
                             },
                             leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
        Rng wr(2);
        record("add", check_op(
                          [&wr](Graph& g, std::vector<Var>& v) {
                              Rng w = wr;
                              return g.value(weighted_sum(g, g.add(v[0], v[1]), w)).data[0];
                          },
                          leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 4}, rng), random_tensor({4}, rng)};
        Rng wr(3);
        record("add_row", check_op(
                              [&wr](Graph& g, std::vector<Var>& v) {
                                  Rng w = wr;
                                  return g.value(weighted_sum(g, g.add(v[0], v[1]), w)).data[0];
                              },
                              leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
        Rng wr(4);
        record("mul", check_op(
                          [&wr](Graph& g, std::vector<Var>& v) {
                              Rng w = wr;
                              return g.value(weighted_sum(g, g.mul(v[0], v[1]), w)).data[0];
                          },
                          leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 6}, rng)};
        Rng wr(5);
        record("softmax", check_op(
                              [&wr](Graph& g, std::vector<Var>& v) {
                                  Rng w = wr;
                                  return g.value(weighted_sum(g, g.softmax(v[0]), w)).data[0];
                              },
                              leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 4}, rng)};
        static const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 0, 1, 1, 1, 0, 0};
        Rng wr(6);
        record("masked_softmax", check_op(
                                     [&wr](Graph& g, std::vector<Var>& v) {
                                         Rng w = wr;
                                         return g.value(weighted_sum(g, g.masked_softmax(v[0], &mask), w)).data[0];
                                     },
                                     leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 4}, rng)};
        static const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 0, 1, 1, 1, 0, 0};
        Rng wr(7);
        record("masked_fill", check_op(
                                  [&wr](Graph& g, std::vector<Var>& v) {
                                      Rng w = wr;
                                      return g.value(weighted_sum(g, g.masked_fill(v[0], &mask, -3.0), w)).data[0];
                                  },
                                  leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 6}, rng), random_tensor({6}, rng, 0.3),
                                      random_tensor({6}, rng, 0.3)};
        Rng wr(8);
        record("layer_norm", check_op(
                                 [&wr](Graph& g, std::vector<Var>& v) {
                                     Rng w = wr;
                                     Var gamma = g.add(v[1], g.constant(Tensor::from({6}, {1, 1, 1, 1, 1, 1})));
                                     return g.value(weighted_sum(g, g.layer_norm(v[0], gamma, v[2]), w)).data[0];
                                 },
                                 leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 5}, rng)};
        Rng wr(9);
        record("gelu", check_op(
                           [&wr](Graph& g, std::vector<Var>& v) {
                               Rng w = wr;
                               return g.value(weighted_sum(g, g.gelu(v[0]), w)).data[0];
                           },
                           leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({6, 4}, rng)};
        Rng wr(10);
        record("gather_rows", check_op(
                                  [&wr](Graph& g, std::vector<Var>& v) {
                                      Rng w = wr;
                                      return g.value(weighted_sum(g, g.gather_rows(v[0], {4, 0, 0, 5}), w)).data[0];
                                  },
                                  leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({5, 4}, rng)};
        Rng wr(11);
        record("max_pool_rows", check_op(
                                    [&wr](Graph& g, std::vector<Var>& v) {
                                        Rng w = wr;
                                        return g.value(weighted_sum(g, g.max_pool_rows(v[0]), w)).data[0];
                                    },
                                    leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 7}, rng, 2.0)};
        record("cross_entropy", check_op(
                                    [](Graph& g, std::vector<Var>& v) {
                                        Var ce = g.cross_entropy_with_logits(v[0], {1, 6, 0, 3});
                                        return g.value(g.sum(ce)).data[0];
                                    },
                                    leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)};
        Rng wr(12);
        record("concat", check_op(
                             [&wr](Graph& g, std::vector<Var>& v) {
                                 Rng w = wr;
                                 return g.value(weighted_sum(g, g.concat({v[0], v[1]}, 0), w)).data[0];
                             },
                             leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 6}, rng)};
        Rng wr(13);
        record("slice", check_op(
                            [&wr](Graph& g, std::vector<Var>& v) {
                                Rng w = wr;
                                return g.value(weighted_sum(g, g.slice(v[0], 1, 2, 5), w)).data[0];
                            },
                            leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 5}, rng)};
        Rng wr(14);
        record("transpose", check_op(
                                [&wr](Graph& g, std::vector<Var>& v) {
                                    Rng w = wr;
                                    return g.value(weighted_sum(g, g.transpose(v[0]), w)).data[0];
                                },
                                leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({3, 5}, rng)};
        Rng wr(15);
        record("scale", check_op(
                            [&wr](Graph& g, std::vector<Var>& v) {
                                Rng w = wr;
                                return g.value(weighted_sum(g, g.scale(v[0], -1.7), w)).data[0];
                            },
                            leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({6}, rng), random_tensor({6}, rng)};
        record("dot", check_op(
                          [](Graph& g, std::vector<Var>& v) {
                              Var y = g.dot(v[0], v[1]);
                              return g.value(y).data[0];
                          },
                          leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 3}, rng)};
        record("sum", check_op(
                          [](Graph& g, std::vector<Var>& v) {
                              Var y = g.sum(v[0]);
                              return g.value(y).data[0];
                          },
                          leaves));
    }
    {
        std::vector<Tensor> leaves = {random_tensor({4, 3}, rng)};
        record("mean", check_op(
                           [](Graph& g, std::vector<Var>& v) {
                               Var y = g.mean(v[0]);
                               return g.value(y).data[0];
                           },
                           leaves));
    }
    const bool ops_ok = worst < 1e-6;

    // full combined objective: per-token BC plus contrastive on a tiny model,
    // assembled the same way the trainer assembles a mixed batch
    double full_err = 1.0;
    {
        TrainConfig tc;
        tc.model = tiny_config();
        tc.codec = tiny_codec(tc.model);
        ActraParams params = init_params(tc.model, 55);
        for (auto& [name, t] : params.named()) t->requires_grad = true;
        Rng drng(56);
        std::vector<Trajectory> batch;
        for (int i = 0; i < 4; ++i) {
            Trajectory t = random_traj(tc.model, 3, 3, drng);
            t.task_id = "task" + std::to_string(i);
            batch.push_back(std::move(t));
        }
        std::vector<const Trajectory*> ptrs;
        for (const Trajectory& t : batch) ptrs.push_back(&t);
        NoiseSpec noise = NoiseSpec::for_codec(tc.codec);
        auto build_loss = [&](Graph& g) {
            Var total = g.constant(Tensor::scalar(0.0));
            long long tokens = 0;
            for (const Trajectory* traj : ptrs) {
                DecodeResult dec = forward_decode(g, *traj, params, tc.model, tc.codec);
                total = g.add(total, detail::bc_root(g, dec, detail::target_bins(*traj, tc.codec)));
                tokens += static_cast<long long>(traj->T()) * tc.model.action_dims;
            }
            Var root = g.scale(total, 1.0 / static_cast<double>(tokens));
            Rng cl_rng(57);
            auto cl = detail::cl_root(g, ptrs, tc, params, noise, cl_rng);
            REQUIRE(cl.has_value());
            return g.add(root, cl->loss);
        };
        auto eval = [&]() {
            Graph g;
            Var root = build_loss(g);
            return g.value(root).data[0];
        };
        Graph g;
        Var root = build_loss(g);
        g.backward(root);
        std::vector<Tensor*> all;
        std::vector<Tensor> analytic;
        for (auto& [name, t] : params.named()) {
            all.push_back(t);
            Tensor grad(t->shape);
            grad.data = t->grad;
            analytic.push_back(std::move(grad));
        }
        // 1e-5 step: wide enough to beat round-off, narrow enough that the
        // encoder's max-pool argmax does not flip inside the difference window
        full_err = grad_check(eval, all, analytic, 1e-5);
    }
    const bool full_ok = full_err < 1e-4;
    const double secs = seconds_since(t0);
    std::ostringstream what;
    what.precision(2);
    what << std::scientific << "worst primitive " << worst_op << " " << worst << ", combined loss " << full_err
         << std::defaultfloat << ", " << secs << " s";
    verdict(5, ops_ok && full_ok && secs < 60.0, what.str());
}

TEST_CASE("06 closed-form losses") {
    bool ok = true;
    // InfoNCE over a batch of B anchors with 3 pooled negatives each and all
    // embeddings equal: every similarity is 0, so each anchor's loss (and the
    // mean) is log(1 + 3B).
    for (int B : {1, 2, 4}) {
        const int D = 8;
        Graph g;
        auto zeros = [&] { return g.input(Tensor({D})); };
        std::vector<Graph::Var> anchors, positives, negatives;
        for (int i = 0; i < B; ++i) {
            anchors.push_back(zeros());
            positives.push_back(zeros());
            for (int k = 0; k < 3; ++k) negatives.push_back(zeros());
        }
        Var loss = info_nce(g, anchors, positives, negatives);
        if (std::abs(g.value(loss).data[0] - std::log(1.0 + 3.0 * B)) >= 1e-9) ok = false;
    }
    // Uniform-logit BC: zero logits over K bins cost T*N*ln K.
    {
        const int T = 5, N = 3, K = 16;
        Tensor logits({T, N, K});
        std::vector<std::vector<int>> bins(T, std::vector<int>(N, 2));
        if (std::abs(bc_loss(logits, bins) - T * N * std::log(static_cast<double>(K))) >= 1e-9) ok = false;
    }
    verdict(6, ok, "InfoNCE log(1+3B) for B in {1,2,4} and uniform BC T*N*ln K, both to 1e-9");
}

TEST_CASE("07 parallel-decode contract") {
    bool ok = true;
    ActraConfig cfg = tiny_config();
    ActionCodec codec = tiny_codec(cfg);
    {
        ActraParams p = init_params(cfg, 77);
        Rng rng(78);
        Trajectory traj = random_traj(cfg, 3, 3, rng);
        Tensor base = decode_logits(traj, p, cfg, codec);
        if (base.shape != Shape{3, cfg.action_dims, cfg.bins}) ok = false;  // all dims, one pass
        Trajectory mod = traj;
        for (int n = 0; n < cfg.action_dims; ++n) mod.steps.back().action[n] = -mod.steps.back().action[n];
        Tensor got = decode_logits(mod, p, cfg, codec);
        for (int n = 0; n < cfg.action_dims && ok; ++n)
            for (int k = 0; k < cfg.bins; ++k) {
                const std::size_t at = (static_cast<std::size_t>(2) * cfg.action_dims + n) * cfg.bins + k;
                if (got.data[at] != base.data[at]) ok = false;
            }
    }
    {
        ActraConfig ar = cfg;
        ar.use_action_queries = false;
        ActraParams p = init_params(ar, 79);
        Rng rng(80);
        Trajectory traj = random_traj(ar, 2, 2, rng);
        Graph g1;
        DecodeResult r1 = forward_decode(g1, traj, p, ar, codec);
        Trajectory mod = traj;
        mod.steps[1].action[0] = -mod.steps[1].action[0];
        Graph g2;
        DecodeResult r2 = forward_decode(g2, mod, p, ar, codec);
        int row_a0 = -1;
        for (int i = 0; i < r1.layout.seq_len(); ++i) {
            const auto& pos = r1.layout.positions[i];
            if (pos.kind == SegmentKind::Action && pos.timestep == 2 && pos.within == 0) row_a0 = i;
        }
        if (row_a0 < 0) ok = false;
        bool emb_differs = false;
        for (int d = 0; d < ar.d_model && row_a0 >= 0; ++d)
            if (g1.value(r1.final_embeddings).at(row_a0, d) != g2.value(r2.final_embeddings).at(row_a0, d))
                emb_differs = true;
        if (!emb_differs) ok = false;
        bool dim1_differs = false;
        for (int k = 0; k < ar.bins; ++k) {
            if (g1.value(r1.per_dim_logits[0]).at(1, k) != g2.value(r2.per_dim_logits[0]).at(1, k)) ok = false;
            if (g1.value(r1.per_dim_logits[1]).at(1, k) != g2.value(r2.per_dim_logits[1]).at(1, k))
                dim1_differs = true;
        }
        if (!dim1_differs) ok = false;
    }
    verdict(7, ok, "one-pass N-dim decode invariant to absent feedback; AR feedback reaches the next head");
}

TEST_CASE("08 desk-scale learning") {
    auto t0 = Clock::now();
    const fs::path data = work_dir() / "desk.jsonl";
    gen_dataset(1000, seen_tasks(), 42, data.string());

    TrainConfig tc;
    tc.dataset_path = data.string();
    tc.codec = env_codec(tc.model.bins);
    tc.batch_size = kDeskBatch;
    tc.epochs = kDeskEpochs;
    tc.warmup_epochs = kDeskWarmup;
    tc.lr = kDeskLr;
    tc.seed = 0;
    tc.eval_trials = 0;
    TrainResult r = train(tc, (work_dir() / "desk.ckpt").string(), (work_dir() / "desk_metrics.jsonl").string());

    const double uniform = std::log(static_cast<double>(tc.model.bins));
    double final_bc = uniform;
    for (auto it = r.metrics.epochs.rbegin(); it != r.metrics.epochs.rend(); ++it)
        if (it->bc_loss) {
            final_bc = *it->bc_loss;
            break;
        }
    const bool loss_ok = final_bc < 0.1 * uniform;

    const double trained = pool_success(r.params, tc.model, tc.codec, seen_tasks(), 100, 7000);
    ActraParams fresh = init_params(tc.model, 123);
    const double random_init = pool_success(fresh, tc.model, tc.codec, seen_tasks(), 100, 7000);
    const double secs = seconds_since(t0);
    const bool ok = loss_ok && trained >= 0.80 && random_init < 0.05 && secs <= 900.0;
    std::ostringstream what;
    what.precision(3);
    what << "final BC " << final_bc << " vs 10% uniform " << 0.1 * uniform << ", seen success " << trained
         << " (random init " << random_init << "), " << static_cast<int>(secs) << " s";
    verdict(8, ok, what.str());
}

TEST_CASE("09 ablation trend") {
    const fs::path data = work_dir() / "ablate.jsonl";
    gen_dataset(kAblN, seen_tasks(), 43, data.string());

    auto run_cell = [&](bool traj_attn, bool queries, bool contrastive, std::uint64_t seed) {
        TrainConfig tc;
        tc.dataset_path = data.string();
        tc.model.use_trajectory_attention = traj_attn;
        tc.model.use_action_queries = queries;
        tc.use_contrastive = contrastive;
        tc.codec = env_codec(tc.model.bins);
        tc.batch_size = kDeskBatch;
        tc.epochs = kAblEpochs;
        tc.warmup_epochs = contrastive ? kAblWarmup : 0;
        tc.lr = kAblLr;
        tc.seed = seed;
        tc.eval_trials = 0;
        const std::string stem =
            (work_dir() / ("cell_" + std::to_string(traj_attn) + std::to_string(queries) + std::to_string(contrastive) +
                           "_" + std::to_string(seed)))
                .string();
        TrainResult r = train(tc, stem + ".ckpt", stem + ".jsonl");
        auto report = evaluate(r.params, tc.model, tc.codec, kAblTrials, 9000 + seed);
        return report.at("overall");
    };

    double full = 0.0, wo_cl = 0.0, wo_both = 0.0;
    const int seeds = 3;
    for (int s = 0; s < seeds; ++s) {
        full += run_cell(true, true, true, 10 + s);
        wo_cl += run_cell(true, true, false, 10 + s);
        wo_both += run_cell(false, false, true, 10 + s);
    }
    full /= seeds;
    wo_cl /= seeds;
    wo_both /= seeds;
    const bool ok = full >= wo_cl && full > wo_both + 0.05;
    std::ostringstream what;
    what.precision(3);
    what << "overall over " << seeds << " seeds: full " << full << ", w/o CL " << wo_cl << ", causal+AR " << wo_both;
    verdict(9, ok, what.str());
}

TEST_CASE("10 CLI determinism") {
    const fs::path dir = work_dir();
    const std::string cli = ACTRA_CLI_PATH;
    auto sh = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    bool ok = true;

    ok = ok && sh("gen-data --n 30 --seed 9 --tasks all --out " + (dir / "da.jsonl").string());
    ok = ok && sh("gen-data --n 30 --seed 9 --tasks all --out " + (dir / "db.jsonl").string());
    ok = ok && file_bytes(dir / "da.jsonl") == file_bytes(dir / "db.jsonl");
    ok = ok && file_bytes(dir / "da.jsonl.manifest") == file_bytes(dir / "db.jsonl.manifest");

    const std::string train_flags = "train --dataset " + (dir / "da.jsonl").string() +
                                    " --layers 1 --heads 2 --d-model 16 --bins 16 --batch-size 4 --epochs 3"
                                    " --warmup-epochs 1 --lr 1e-3 --seed 21";
    ok = ok && sh(train_flags + " --checkpoint " + (dir / "ca.ckpt").string() + " --metrics " + (dir / "ma.jsonl").string());
    ok = ok && sh(train_flags + " --checkpoint " + (dir / "cb.ckpt").string() + " --metrics " + (dir / "mb.jsonl").string());
    ok = ok && file_bytes(dir / "ca.ckpt") == file_bytes(dir / "cb.ckpt");
    ok = ok && file_bytes(dir / "ca.ckpt.meta") == file_bytes(dir / "cb.ckpt.meta");
    ok = ok && file_bytes(dir / "ma.jsonl") == file_bytes(dir / "mb.jsonl");

    const std::string eval_flags = "eval --checkpoint " + (dir / "ca.ckpt").string() + " --trials 3 --seed 4 --out ";
    ok = ok && sh(eval_flags + (dir / "ra.json").string());
    ok = ok && sh(eval_flags + (dir / "rb.json").string());
    ok = ok && file_bytes(dir / "ra.json") == file_bytes(dir / "rb.json");

    verdict(10, ok, "gen-data, train, and eval reruns are byte-identical");
}
