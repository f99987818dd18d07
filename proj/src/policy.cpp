#include "cprl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cprl/simulator.hpp"

namespace cprl {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

int sample_categorical(const Eigen::VectorXd& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return static_cast<int>(probs.size()) - 1;
}

int argmax_index(const Eigen::VectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

GoalCatalog make_goal_catalog(const CausalGraph& graph, const SkillPartition& partition,
                              const Eigen::VectorXd& basal,
                              const std::vector<TargetLevels>& targets) {
    GoalCatalog catalog;
    for (std::size_t sub = 0; sub < partition.subsystems.size(); ++sub) {
        const auto& nodes = partition.subsystems[sub];
        // collect the level lists of nodes inside this subsystem
        std::vector<std::pair<int, std::vector<double>>> listed;  // (position, levels)
        for (std::size_t pos = 0; pos < nodes.size(); ++pos) {
            for (const auto& t : targets) {
                if (graph.nodes[nodes[pos]].id == t.node && !t.levels.empty()) {
                    listed.emplace_back(static_cast<int>(pos), t.levels);
                }
            }
        }
        Eigen::VectorXd base_goal(nodes.size());
        for (std::size_t pos = 0; pos < nodes.size(); ++pos) base_goal[pos] = basal[nodes[pos]];
        if (listed.empty()) {
            HighLevelAction a;
            a.subsystem = static_cast<int>(sub);
            a.goal = base_goal;
            a.catalog_index = static_cast<int>(catalog.entries.size());
            catalog.entries.push_back(std::move(a));
            continue;
        }
        // cartesian product over the listed nodes' level lists
        std::vector<Eigen::VectorXd> goals = {base_goal};
        for (const auto& [pos, levels] : listed) {
            std::vector<Eigen::VectorXd> expanded;
            for (const auto& g : goals) {
                for (double level : levels) {
                    Eigen::VectorXd g2 = g;
                    g2[pos] = level;
                    expanded.push_back(std::move(g2));
                }
            }
            goals = std::move(expanded);
        }
        for (auto& g : goals) {
            HighLevelAction a;
            a.subsystem = static_cast<int>(sub);
            a.goal = std::move(g);
            a.catalog_index = static_cast<int>(catalog.entries.size());
            catalog.entries.push_back(std::move(a));
        }
    }
    return catalog;
}

double high_reward(const std::vector<double>& low_rewards, double gamma, int C) {
    if (static_cast<int>(low_rewards.size()) != C) {
        throw std::invalid_argument("high_reward: expected " + std::to_string(C) +
                                    " low rewards, got " + std::to_string(low_rewards.size()));
    }
    double acc = 0.0;
    double g = 1.0;
    for (int i = 1; i <= C; ++i) {
        g *= gamma;
        acc += g * low_rewards[static_cast<std::size_t>(i - 1)];
    }
    return acc / static_cast<double>(C);
}

double low_reward(const Eigen::VectorXd& s_next_restricted, const Eigen::VectorXd& goal) {
    if (s_next_restricted.size() != goal.size()) {
        throw std::invalid_argument("low_reward: state/goal dimension mismatch");
    }
    return -(s_next_restricted - goal).squaredNorm();
}

Skill& SkillLibrary::ensure(std::uint64_t signature, int subsystem, int input_dim, int actions,
                            int hidden, Rng& rng) {
    auto it = skills_.find(signature);
    if (it != skills_.end()) return it->second;
    Skill skill;
    skill.signature = signature;
    skill.subsystem = subsystem;
    skill.actor = Mlp({input_dim, hidden, actions}, rng);
    skill.critic = Mlp({input_dim, hidden, 1}, rng);
    return skills_.emplace(signature, std::move(skill)).first->second;
}

Skill& SkillLibrary::at(std::uint64_t signature) {
    auto it = skills_.find(signature);
    if (it == skills_.end()) throw std::out_of_range("SkillLibrary: unknown signature");
    return it->second;
}

const Skill& SkillLibrary::at(std::uint64_t signature) const {
    auto it = skills_.find(signature);
    if (it == skills_.end()) throw std::out_of_range("SkillLibrary: unknown signature");
    return it->second;
}

bool SkillLibrary::contains(std::uint64_t signature) const {
    return skills_.count(signature) > 0;
}

HierarchicalPolicy::HierarchicalPolicy(const CausalGraph& graph, SkillPartition partition,
                                       GoalCatalog catalog, PolicyConfig config,
                                       std::uint64_t seed)
    : graph_(&graph),
      partition_(std::move(partition)),
      catalog_(std::move(catalog)),
      config_(std::move(config)) {
    if (catalog_.entries.empty()) throw std::invalid_argument("policy needs a non-empty catalog");
    if (config_.C < 1) throw std::invalid_argument("PolicyConfig: C must be >= 1");
    if (config_.gamma < 0.0 || config_.gamma > 1.0) {
        throw std::invalid_argument("PolicyConfig: gamma must be in [0, 1]");
    }
    Rng rng(seed);
    const Eigen::VectorXd basal = steady_state(graph, graph.base_theta());
    scales_ = basal.cwiseAbs().cwiseMax(1.0);
    const int n = graph.node_count();
    high_actor_ = Mlp({n, config_.hidden, static_cast<int>(catalog_.entries.size())}, rng);
    high_critic_ = Mlp({n, config_.hidden, 1}, rng);
    for (std::size_t sub = 0; sub < partition_.subsystems.size(); ++sub) {
        const auto sig = partition_.signature(graph, static_cast<int>(sub));
        const int input_dim = 2 * static_cast<int>(partition_.subsystems[sub].size());
        library_.ensure(sig, static_cast<int>(sub), input_dim,
                        static_cast<int>(config_.action_grid.size()), config_.hidden, rng);
    }
    downstream_.assign(partition_.subsystems.size(), {});
    for (const auto& [src, dst] : partition_.cascade_edges) {
        const int a = partition_.subsystem_of(src);
        const int b = partition_.subsystem_of(dst);
        if (a >= 0 && b >= 0 && a != b) {
            auto& list = downstream_[static_cast<std::size_t>(a)];
            if (std::find(list.begin(), list.end(), b) == list.end()) list.push_back(b);
        }
    }
}

Eigen::VectorXd HierarchicalPolicy::high_features(const Eigen::VectorXd& s) const {
    return s.cwiseQuotient(scales_);
}

Eigen::VectorXd HierarchicalPolicy::high_logits(const Eigen::VectorXd& s) const {
    return high_actor_.forward(high_features(s));
}

HighLevelAction HierarchicalPolicy::high_act(const Eigen::VectorXd& s, Rng* explore) const {
    const Eigen::VectorXd logits = high_logits(s);
    const int index =
        explore ? sample_categorical(softmax(logits), *explore) : argmax_index(logits);
    return catalog_.entries[static_cast<std::size_t>(index)];
}

Eigen::VectorXd HierarchicalPolicy::skill_features(const Eigen::VectorXd& s,
                                                   const HighLevelAction& a) const {
    const auto& nodes = partition_.subsystems[static_cast<std::size_t>(a.subsystem)];
    Eigen::VectorXd f(2 * nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        f[static_cast<Eigen::Index>(i)] = s[nodes[i]] / scales_[nodes[i]];
        f[static_cast<Eigen::Index>(nodes.size() + i)] = a.goal[static_cast<Eigen::Index>(i)] / scales_[nodes[i]];
    }
    return f;
}

double HierarchicalPolicy::low_act(const Skill& skill, const Eigen::VectorXd& s,
                                   const HighLevelAction& a, Rng* explore,
                                   int* action_index) const {
    const Eigen::VectorXd logits = skill.actor.forward(skill_features(s, a));
    const int index =
        explore ? sample_categorical(softmax(logits), *explore) : argmax_index(logits);
    if (action_index) *action_index = index;
    const double raw = config_.action_grid[static_cast<std::size_t>(index)];
    return std::clamp(raw, config_.action_lo, config_.action_hi);
}

double HierarchicalPolicy::act(PolicyRuntime& rt, const Eigen::VectorXd& s, Rng* explore,
                               int* action_index) {
    if (!rt.initialized || rt.steps_left <= 0) {
        if (rt.initialized) rt.prev_subsystem = rt.current.subsystem;
        rt.current = high_act(s, explore);
        rt.steps_left = config_.C;
        rt.initialized = true;
    }
    --rt.steps_left;
    return low_act(skill_for(rt.current.subsystem), s, rt.current, explore, action_index);
}

Skill& HierarchicalPolicy::skill_for(int subsystem) {
    return library_.at(partition_.signature(*graph_, subsystem));
}

const Skill& HierarchicalPolicy::skill_for(int subsystem) const {
    return library_.at(partition_.signature(*graph_, subsystem));
}

Eigen::VectorXd HierarchicalPolicy::reuse_prior(int prev_subsystem) const {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(catalog_.entries.size());
    if (prev_subsystem >= 0) {
        const auto& down = downstream_[static_cast<std::size_t>(prev_subsystem)];
        for (std::size_t i = 0; i < catalog_.entries.size(); ++i) {
            const int sub = catalog_.entries[i].subsystem;
            if (std::find(down.begin(), down.end(), sub) != down.end()) {
                w[static_cast<Eigen::Index>(i)] += 1.0;
            }
        }
    }
    return w / w.sum();
}

namespace {

// Shared actor-critic step over generic (features, action, return) triples.
struct AcBatch {
    std::vector<const Eigen::VectorXd*> features;
    std::vector<int> actions;
    std::vector<double> returns;
};

UpdateStats actor_critic_step(Mlp& actor, Mlp& critic, const AcBatch& batch, double lr,
                              double entropy_bonus, const Eigen::VectorXd* prior,
                              double prior_weight) {
    const auto n = static_cast<int>(batch.features.size());
    UpdateStats stats;
    Eigen::VectorXd advantages(n);
    for (int i = 0; i < n; ++i) {
        advantages[i] = batch.returns[static_cast<std::size_t>(i)] -
                        critic.forward(*batch.features[static_cast<std::size_t>(i)])[0];
    }
    stats.mean_advantage = advantages.mean();
    // Batch-normalized advantages; a lone sample keeps its raw sign so a
    // positive-advantage action still becomes more likely.
    const double center = n > 1 ? stats.mean_advantage : 0.0;
    const double spread =
        n > 1 ? std::max(1e-8, std::sqrt((advantages.array() - center).square().mean())) : 1.0;
    Eigen::VectorXd actor_grad = Eigen::VectorXd::Zero(actor.param_count());
    Eigen::VectorXd critic_grad = Eigen::VectorXd::Zero(critic.param_count());
    for (int i = 0; i < n; ++i) {
        const auto& f = *batch.features[static_cast<std::size_t>(i)];
        const Eigen::VectorXd logits = actor.forward(f);
        const Eigen::VectorXd probs = softmax(logits);
        const int a = batch.actions[static_cast<std::size_t>(i)];
        const double adv = (advantages[i] - center) / spread;

        // dL/dlogits for L = -adv*log pi(a) - entropy_bonus*H + prior_weight*CE(pi, prior)
        Eigen::VectorXd dlogits = adv * probs;
        dlogits[a] -= adv;
        stats.policy_loss += -adv * std::log(std::max(probs[a], 1e-12));
        double entropy = 0.0;
        for (int j = 0; j < probs.size(); ++j) {
            entropy -= probs[j] * std::log(std::max(probs[j], 1e-12));
        }
        stats.entropy += entropy;
        if (entropy_bonus > 0) {
            // dH/dlogits = -probs .* (log probs + H)
            for (int j = 0; j < probs.size(); ++j) {
                dlogits[j] += entropy_bonus * probs[j] *
                              (std::log(std::max(probs[j], 1e-12)) + entropy);
            }
        }
        if (prior && prior_weight > 0) {
            // CE(prior, pi) = -sum prior log pi; gradient = pi - prior
            dlogits += prior_weight * (probs - *prior);
            double ce = 0.0;
            for (int j = 0; j < probs.size(); ++j) {
                ce -= (*prior)[j] * std::log(std::max(probs[j], 1e-12));
            }
            stats.reuse_loss += ce;
        }
        actor.backward(f, dlogits, actor_grad);

        const double v = critic.forward(f)[0];
        const double verr = v - batch.returns[static_cast<std::size_t>(i)];
        stats.value_loss += verr * verr;
        Eigen::VectorXd dv(1);
        dv[0] = 2.0 * verr;
        critic.backward(f, dv, critic_grad);
    }
    actor_grad /= n;
    critic_grad /= n;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.reuse_loss /= n;
    sgd_step(actor.params(), actor_grad, lr);
    sgd_step(critic.params(), critic_grad, lr);
    return stats;
}

}  // namespace

UpdateStats HierarchicalPolicy::update_high(const std::vector<HighStep>& buffer,
                                            double fcr_weight, double lr) {
    if (buffer.empty()) throw std::invalid_argument("update_high: empty buffer");
    AcBatch batch;
    std::vector<Eigen::VectorXd> priors;
    priors.reserve(buffer.size());
    Eigen::VectorXd mean_prior = Eigen::VectorXd::Zero(catalog_.entries.size());
    for (const auto& step : buffer) {
        batch.features.push_back(&step.features);
        batch.actions.push_back(step.catalog_index);
        batch.returns.push_back(step.window_return);
        mean_prior += reuse_prior(step.prev_subsystem);
    }
    mean_prior /= static_cast<double>(buffer.size());
    return actor_critic_step(high_actor_, high_critic_, batch, lr, config_.entropy_bonus,
                             fcr_weight > 0 ? &mean_prior : nullptr, fcr_weight);
}

UpdateStats HierarchicalPolicy::update_low(int subsystem, const std::vector<LowWindow>& buffer,
                                           double lr) {
    if (buffer.empty()) throw std::invalid_argument("update_low: empty buffer");
    AcBatch batch;
    std::vector<double> returns_storage;
    // discounted suffix returns inside each window
    std::size_t total = 0;
    for (const auto& w : buffer) total += w.steps.size();
    returns_storage.reserve(total);
    for (const auto& w : buffer) {
        if (w.subsystem != subsystem) {
            throw std::invalid_argument("update_low: window belongs to another subsystem");
        }
        double g = 0.0;
        std::vector<double> rets(w.steps.size());
        for (int i = static_cast<int>(w.steps.size()) - 1; i >= 0; --i) {
            g = w.steps[static_cast<std::size_t>(i)].reward + config_.gamma * g;
            rets[static_cast<std::size_t>(i)] = g;
        }
        for (std::size_t i = 0; i < w.steps.size(); ++i) {
            batch.features.push_back(&w.steps[i].features);
            batch.actions.push_back(w.steps[i].action_index);
            returns_storage.push_back(rets[i]);
        }
    }
    batch.returns = returns_storage;
    Skill& skill = skill_for(subsystem);
    return actor_critic_step(skill.actor, skill.critic, batch, lr, config_.entropy_bonus, nullptr,
                             0.0);
}

void HierarchicalPolicy::save(const std::string& path, std::uint64_t graph_hash) const {
    Checkpoint ckpt;
    ckpt.seed = graph_hash;
    // payload: config scalars, partition layout, catalog, then all net params
    auto& x = ckpt.extra;
    x.push_back(config_.C);
    x.push_back(config_.gamma);
    x.push_back(config_.fcr_weight);
    x.push_back(config_.action_lo);
    x.push_back(config_.action_hi);
    x.push_back(config_.hidden);
    x.push_back(config_.entropy_bonus);
    x.push_back(static_cast<double>(config_.action_grid.size()));
    for (double a : config_.action_grid) x.push_back(a);
    x.push_back(static_cast<double>(partition_.subsystems.size()));
    for (const auto& sub : partition_.subsystems) {
        x.push_back(static_cast<double>(sub.size()));
        for (int v : sub) x.push_back(v);
    }
    x.push_back(static_cast<double>(catalog_.entries.size()));
    for (const auto& e : catalog_.entries) {
        x.push_back(e.subsystem);
        x.push_back(static_cast<double>(e.goal.size()));
        for (int i = 0; i < e.goal.size(); ++i) x.push_back(e.goal[i]);
    }
    std::vector<double> params;
    auto append = [&](const Eigen::VectorXd& p) {
        params.insert(params.end(), p.data(), p.data() + p.size());
    };
    append(high_actor_.params());
    append(high_critic_.params());
    for (const auto& [sig, skill] : library_.storage()) {
        (void)sig;
        append(skill.actor.params());
        append(skill.critic.params());
    }
    ckpt.values = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
    save_checkpoint(ckpt, path);
}

HierarchicalPolicy HierarchicalPolicy::load(const CausalGraph& graph, const std::string& path,
                                            std::uint64_t expected_graph_hash) {
    const Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.seed != expected_graph_hash) {
        throw std::runtime_error("policy checkpoint was built against a different graph spec");
    }
    std::size_t i = 0;
    auto next = [&] { return ckpt.extra.at(i++); };
    PolicyConfig cfg;
    cfg.C = static_cast<int>(next());
    cfg.gamma = next();
    cfg.fcr_weight = next();
    cfg.action_lo = next();
    cfg.action_hi = next();
    cfg.hidden = static_cast<int>(next());
    cfg.entropy_bonus = next();
    cfg.action_grid.clear();
    const int grid = static_cast<int>(next());
    for (int k = 0; k < grid; ++k) cfg.action_grid.push_back(next());
    std::vector<std::vector<int>> subsystems(static_cast<std::size_t>(next()));
    for (auto& sub : subsystems) {
        sub.resize(static_cast<std::size_t>(next()));
        for (auto& v : sub) v = static_cast<int>(next());
    }
    GoalCatalog catalog;
    const int entries = static_cast<int>(next());
    for (int e = 0; e < entries; ++e) {
        HighLevelAction a;
        a.subsystem = static_cast<int>(next());
        a.goal.resize(static_cast<Eigen::Index>(next()));
        for (int k = 0; k < a.goal.size(); ++k) a.goal[k] = next();
        a.catalog_index = e;
        catalog.entries.push_back(std::move(a));
    }
    HierarchicalPolicy policy(graph, make_partition(graph, std::move(subsystems)),
                              std::move(catalog), cfg, /*seed=*/0);
    Eigen::Index off = 0;
    auto restore = [&](Eigen::VectorXd& p) {
        p = ckpt.values.segment(off, p.size());
        off += p.size();
    };
    restore(policy.high_actor_.params());
    restore(policy.high_critic_.params());
    for (auto& [sig, skill] : policy.library_.storage()) {
        (void)sig;
        restore(skill.actor.params());
        restore(skill.critic.params());
    }
    if (off != ckpt.values.size()) throw std::runtime_error("policy checkpoint size mismatch");
    return policy;
}

}  // namespace cprl
