#pragma once

// A deterministic 2D language-conditioned pick-and-place world.
//
// The arena is the unit square.  Each episode places one target object, a few
// same-shaped distractors, and two containers (yellow and purple), all at
// least 0.1 apart.  The agent moves a point gripper, closes it to grasp the
// target object within 0.05, and succeeds once the object is released within
// 0.05 of the prompted container.  A scripted expert solves every episode
// well inside the 50-step horizon and supplies the training data.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "actra/checkpoint.hpp"
#include "actra/rng.hpp"
#include "actra/trajectory.hpp"

namespace actra {

inline constexpr double kStepCap = 0.1;         // max |dx|, |dy| per step
inline constexpr double kGraspRadius = 0.05;    // closing this close to the target grabs it
inline constexpr double kSuccessRadius = 0.05;  // release distance that counts as placed
inline constexpr double kExpertThreshold = 0.04;
inline constexpr double kMinSpacing = 0.1;
inline constexpr double kPlacementLo = 0.1;
inline constexpr double kPlacementHi = 0.9;
inline constexpr int kPlacementBudget = 1000;
inline constexpr int kHorizon = 50;
inline constexpr int kMaxObjects = 9;  // one target plus up to eight distractors
inline constexpr int kNumColors = 5;

// Colors 0..4; objects use 0..2, containers 3..4.
inline const char* color_name(int color) {
    static const char* names[] = {"red", "green", "blue", "yellow", "purple"};
    if (color < 0 || color >= kNumColors) throw std::invalid_argument("bad color id " + std::to_string(color));
    return names[color];
}

// Vocabulary: 0 "pick", 1 "place", 2..6 the color words.
inline const char* vocab_name(int token) {
    if (token == 0) return "pick";
    if (token == 1) return "place";
    return color_name(token - 2);
}

struct TaskSpec {
    int target_color = 0;     // red, green, or blue
    int container_color = 3;  // yellow or purple
    int distractor_count = 0;

    void validate() const {
        if (target_color < 0 || target_color > 2)
            throw std::invalid_argument("target color must be red, green, or blue");
        if (container_color != 3 && container_color != 4)
            throw std::invalid_argument("container color must be yellow or purple");
        if (distractor_count < 0 || distractor_count > kMaxObjects - 1)
            throw std::invalid_argument("distractor count must be 0.." + std::to_string(kMaxObjects - 1));
    }
};

inline std::string task_name(const TaskSpec& task) {
    return std::string(color_name(task.target_color)) + "-" + color_name(task.container_color);
}

inline TaskSpec task_from_name(const std::string& name, int distractors = 0) {
    const auto dash = name.find('-');
    if (dash == std::string::npos) throw std::invalid_argument("task name must look like red-yellow: " + name);
    TaskSpec t;
    t.distractor_count = distractors;
    const std::string a = name.substr(0, dash), b = name.substr(dash + 1);
    t.target_color = t.container_color = -1;
    for (int c = 0; c < kNumColors; ++c) {
        if (a == color_name(c)) t.target_color = c;
        if (b == color_name(c)) t.container_color = c;
    }
    t.validate();
    return t;
}

inline std::vector<int> make_prompt(const TaskSpec& task) {
    return {0, 2 + task.target_color, 1, 2 + task.container_color};
}

// All six target x container pairs, in a fixed order.
inline std::vector<TaskSpec> all_tasks() {
    std::vector<TaskSpec> out;
    for (int t = 0; t < 3; ++t)
        for (int c = 3; c <= 4; ++c) out.push_back({t, c, 0});
    return out;
}

// Training holds out green-yellow and blue-purple; every color still appears
// somewhere in the seen split, so the unseen pairs test recombination only.
inline std::vector<TaskSpec> seen_tasks() {
    return {{0, 3, 0}, {0, 4, 0}, {1, 4, 0}, {2, 3, 0}};
}

inline std::vector<TaskSpec> unseen_tasks() { return {{1, 3, 0}, {2, 4, 0}}; }

struct ToyAction {
    double dx = 0.0, dy = 0.0, grip = 0.0;

    std::vector<double> to_vector() const { return {dx, dy, grip}; }
    static ToyAction from_vector(const std::vector<double>& v) {
        if (v.size() != 3) throw std::invalid_argument("ToyAction needs 3 components");
        return {v[0], v[1], v[2]};
    }
};

inline ActionCodec env_codec(int bins = 64) {
    ActionCodec c;
    c.lo = {-kStepCap, -kStepCap, -1.0};
    c.hi = {kStepCap, kStepCap, 1.0};
    c.bins = bins;
    return c;
}

struct ToyWorldState {
    struct Item {
        int color = 0;
        double x = 0.0, y = 0.0;
    };

    TaskSpec task;
    double gripper_x = 0.5, gripper_y = 0.5;
    bool holding = false;
    bool gripper_closed = false;
    std::vector<Item> objects;     // target plus distractors, shuffled order
    std::vector<Item> containers;  // always [yellow, purple]
    int steps = 0;

    int target_index() const {
        for (std::size_t i = 0; i < objects.size(); ++i)
            if (objects[i].color == task.target_color) return static_cast<int>(i);
        throw std::logic_error("state has no target-colored object");
    }

    const Item& container_of(int color) const {
        for (const Item& c : containers)
            if (c.color == color) return c;
        throw std::logic_error("state has no container of color " + std::string(color_name(color)));
    }
};

namespace detail {

inline double dist2d(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

}  // namespace detail

inline ToyWorldState reset(const TaskSpec& task, std::uint64_t seed) {
    task.validate();
    Rng base(seed);
    Rng rng = base.fork(static_cast<std::uint64_t>(task.target_color) * 64 +
                        static_cast<std::uint64_t>(task.container_color) * 8 +
                        static_cast<std::uint64_t>(task.distractor_count));

    std::vector<int> colors = {task.target_color};
    std::vector<int> others;
    for (int c = 0; c < 3; ++c)
        if (c != task.target_color) others.push_back(c);
    for (int k = 0; k < task.distractor_count; ++k) colors.push_back(others[rng.uniform_int(others.size())]);
    for (std::size_t i = colors.size(); i > 1; --i) std::swap(colors[i - 1], colors[rng.uniform_int(i)]);

    ToyWorldState s;
    s.task = task;
    std::vector<std::pair<double, double>> placed;
    int budget = kPlacementBudget;
    auto place = [&]() {
        while (budget > 0) {
            --budget;
            const double x = rng.uniform(kPlacementLo, kPlacementHi);
            const double y = rng.uniform(kPlacementLo, kPlacementHi);
            bool ok = true;
            for (const auto& [px, py] : placed)
                if (detail::dist2d(x, y, px, py) < kMinSpacing) ok = false;
            if (ok) {
                placed.emplace_back(x, y);
                return std::pair<double, double>{x, y};
            }
        }
        throw std::runtime_error("could not place items after " + std::to_string(kPlacementBudget) + " samples");
    };
    for (int c : colors) {
        auto [x, y] = place();
        s.objects.push_back({c, x, y});
    }
    for (int c : {3, 4}) {
        auto [x, y] = place();
        s.containers.push_back({c, x, y});
    }
    return s;
}

inline ToyWorldState step(const ToyWorldState& state, const ToyAction& action) {
    ToyWorldState n = state;
    const double dx = std::clamp(action.dx, -kStepCap, kStepCap);
    const double dy = std::clamp(action.dy, -kStepCap, kStepCap);
    const double grip = std::clamp(action.grip, -1.0, 1.0);

    n.gripper_x = std::clamp(state.gripper_x + dx, 0.0, 1.0);
    n.gripper_y = std::clamp(state.gripper_y + dy, 0.0, 1.0);
    if (n.holding) {
        auto& held = n.objects[n.target_index()];
        held.x = n.gripper_x;
        held.y = n.gripper_y;
    }

    const bool closed = grip > 0.0;
    if (closed && !state.gripper_closed && !n.holding) {
        auto& obj = n.objects[n.target_index()];
        if (detail::dist2d(n.gripper_x, n.gripper_y, obj.x, obj.y) <= kGraspRadius) {
            n.holding = true;
            obj.x = n.gripper_x;
            obj.y = n.gripper_y;
        }
    }
    if (!closed) n.holding = false;
    n.gripper_closed = closed;
    ++n.steps;
    return n;
}

inline bool is_success(const ToyWorldState& state, const TaskSpec& task) {
    if (state.holding) return false;
    const auto& obj = state.objects[state.target_index()];
    const auto& cont = state.container_of(task.container_color);
    return detail::dist2d(obj.x, obj.y, cont.x, cont.y) <= kSuccessRadius;
}

// Two camera-like views.
//   View 0 (egocentric, width 34): nine object slots and two container slots
//   of (dx, dy, present) relative to the gripper, then the holding flag.
//   View 1 (absolute, width 88): eleven slots of (x, y, present, color one-hot).
inline std::vector<std::vector<double>> observe(const ToyWorldState& state) {
    std::vector<double> ego;
    ego.reserve(34);
    auto push_rel = [&](const ToyWorldState::Item* it) {
        if (it) {
            ego.push_back(it->x - state.gripper_x);
            ego.push_back(it->y - state.gripper_y);
            ego.push_back(1.0);
        } else {
            ego.insert(ego.end(), {0.0, 0.0, 0.0});
        }
    };
    for (int i = 0; i < kMaxObjects; ++i)
        push_rel(i < static_cast<int>(state.objects.size()) ? &state.objects[i] : nullptr);
    for (int i = 0; i < 2; ++i) push_rel(&state.containers[i]);
    ego.push_back(state.holding ? 1.0 : 0.0);

    std::vector<double> abs;
    abs.reserve(88);
    auto push_abs = [&](const ToyWorldState::Item* it) {
        if (it) {
            abs.push_back(it->x);
            abs.push_back(it->y);
            abs.push_back(1.0);
            for (int c = 0; c < kNumColors; ++c) abs.push_back(c == it->color ? 1.0 : 0.0);
        } else {
            abs.insert(abs.end(), 8, 0.0);
        }
    };
    for (int i = 0; i < kMaxObjects; ++i)
        push_abs(i < static_cast<int>(state.objects.size()) ? &state.objects[i] : nullptr);
    for (int i = 0; i < 2; ++i) push_abs(&state.containers[i]);

    return {std::move(ego), std::move(abs)};
}

// Scripted demonstrator: walk to the target, close, carry, open.
inline ToyAction expert(const ToyWorldState& state, const TaskSpec& task) {
    auto toward = [&](double tx, double ty, double grip) {
        double dx = tx - state.gripper_x, dy = ty - state.gripper_y;
        const double d = std::hypot(dx, dy);
        if (d > kStepCap) {
            dx *= kStepCap / d;
            dy *= kStepCap / d;
        }
        return ToyAction{dx, dy, grip};
    };
    if (!state.holding) {
        const auto& obj = state.objects[state.target_index()];
        if (detail::dist2d(state.gripper_x, state.gripper_y, obj.x, obj.y) <= kExpertThreshold)
            return {0.0, 0.0, 1.0};
        return toward(obj.x, obj.y, -1.0);
    }
    const auto& cont = state.container_of(task.container_color);
    if (detail::dist2d(state.gripper_x, state.gripper_y, cont.x, cont.y) <= kExpertThreshold) return {0.0, 0.0, -1.0};
    return toward(cont.x, cont.y, 1.0);
}

// One full expert episode; empty steps with success=false means the expert
// ran out of horizon (which the dataset generator treats as fatal).
struct RolloutResult {
    Trajectory trajectory;
    bool success = false;
};

inline RolloutResult expert_rollout(const TaskSpec& task, std::uint64_t seed) {
    ToyWorldState state = reset(task, seed);
    RolloutResult out;
    out.trajectory.task_id = task_name(task);
    out.trajectory.prompt = make_prompt(task);
    for (int t = 0; t < kHorizon; ++t) {
        if (is_success(state, task)) break;
        const ToyAction a = expert(state, task);
        out.trajectory.steps.push_back({observe(state), a.to_vector()});
        state = step(state, a);
    }
    out.success = is_success(state, task);
    return out;
}

// n expert rollouts cycling through the task pool, with the distractor count
// redrawn per episode.  Writes JSON Lines plus a key=value manifest that
// records everything needed to regenerate or replay the file.
inline void gen_dataset(int n, const std::vector<TaskSpec>& pool, std::uint64_t seed, const std::string& path) {
    if (n < 0) throw std::invalid_argument("dataset size must be >= 0");
    if (pool.empty()) throw std::invalid_argument("task pool is empty");
    Rng gen(seed);
    std::vector<Trajectory> trajs;
    std::map<std::string, int> counts;
    for (int i = 0; i < n; ++i) {
        TaskSpec task = pool[i % pool.size()];
        task.distractor_count = static_cast<int>(gen.uniform_int(5));
        RolloutResult r = expert_rollout(task, seed + static_cast<std::uint64_t>(i));
        if (!r.success)
            throw std::runtime_error("expert failed on episode " + std::to_string(i) + " of task " + task_name(task));
        counts[r.trajectory.task_id]++;
        trajs.push_back(std::move(r.trajectory));
    }
    save_trajectories(path, trajs);

    std::map<std::string, std::string> meta;
    meta["count"] = std::to_string(n);
    meta["seed"] = std::to_string(seed);
    meta["horizon"] = std::to_string(kHorizon);
    std::string names;
    for (std::size_t i = 0; i < pool.size(); ++i) names += (i ? "," : "") + task_name(pool[i]);
    meta["tasks"] = names;
    const ActionCodec codec = env_codec();
    auto join = [](const std::vector<double>& v) {
        std::string s;
        char buf[32];
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", v[i]);
            s += (i ? "," : "") + std::string(buf);
        }
        return s;
    };
    meta["codec.lo"] = join(codec.lo);
    meta["codec.hi"] = join(codec.hi);
    meta["success"] = "all";
    for (const auto& [name, k] : counts) meta["task." + name] = std::to_string(k);
    save_meta(path + ".manifest", meta);
}

// Re-derives every episode from the manifest and checks that the stored file
// replays through the simulator: observations match bit-exactly and every
// episode ends in success.
inline bool verify_dataset(const std::string& path) {
    const std::map<std::string, std::string> meta = load_meta(path + ".manifest");
    const int n = std::stoi(meta.at("count"));
    const std::uint64_t seed = std::stoull(meta.at("seed"));
    std::vector<TaskSpec> pool;
    const std::string& names = meta.at("tasks");
    for (std::size_t at = 0; at <= names.size();) {
        std::size_t comma = names.find(',', at);
        if (comma == std::string::npos) comma = names.size();
        pool.push_back(task_from_name(names.substr(at, comma - at)));
        at = comma + 1;
    }
    const std::vector<Trajectory> trajs = load_trajectories(path);
    if (static_cast<int>(trajs.size()) != n) return false;

    Rng gen(seed);
    for (int i = 0; i < n; ++i) {
        TaskSpec task = pool[i % pool.size()];
        task.distractor_count = static_cast<int>(gen.uniform_int(5));
        const Trajectory& traj = trajs[i];
        if (traj.task_id != task_name(task) || traj.prompt != make_prompt(task)) return false;
        ToyWorldState state = reset(task, seed + static_cast<std::uint64_t>(i));
        for (const auto& st : traj.steps) {
            if (observe(state) != st.obs) return false;
            state = step(state, ToyAction::from_vector(st.action));
        }
        if (!is_success(state, task)) return false;
    }
    return true;
}

}  // namespace actra
