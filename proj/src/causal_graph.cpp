#include "cprl/causal_graph.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

#include "cprl/rng.hpp"

namespace cprl {

std::vector<int> CausalKnowledge::source_nodes() const {
    std::vector<int> out;
    for (const auto& t : terms) {
        if (std::find(out.begin(), out.end(), t.source) == out.end()) {
            out.push_back(t.source);
        }
    }
    return out;
}

int CausalGraph::node_index(std::string_view id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].id == id) return static_cast<int>(i);
    }
    return -1;
}

int CausalGraph::channel_index(std::string_view name) const {
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int CausalGraph::slot_index(std::string_view name) const {
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

std::vector<int> CausalGraph::observed_nodes() const {
    std::vector<int> out;
    for (int i = 0; i < node_count(); ++i) {
        if (nodes[i].observed) out.push_back(i);
    }
    return out;
}

std::vector<int> CausalGraph::latent_nodes() const {
    std::vector<int> out;
    for (int i = 0; i < node_count(); ++i) {
        if (!nodes[i].observed) out.push_back(i);
    }
    return out;
}

Eigen::VectorXd CausalGraph::base_theta() const {
    Eigen::VectorXd theta(param_slot_count());
    for (int k = 0; k < param_slot_count(); ++k) theta[k] = slots[k].base;
    return theta;
}

Eigen::MatrixXd CausalGraph::system_matrix(const Eigen::VectorXd& theta) const {
    const int n = node_count();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (const auto& k : knowledge) {
        for (const auto& t : k.terms) {
            const double coeff = t.is_slot ? theta[t.slot] : t.constant;
            a(k.target, t.source) += t.scale * coeff;
        }
    }
    return a;
}

Eigen::MatrixXd CausalGraph::input_matrix(const Eigen::VectorXd& theta) const {
    const int n = node_count();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, static_cast<int>(channels.size()));
    for (const auto& k : knowledge) {
        if (!k.input) continue;
        const auto& in = *k.input;
        const double gain = in.is_slot ? theta[in.slot] : in.constant;
        b(k.target, in.channel) += in.scale * gain;
    }
    return b;
}

Eigen::MatrixXd CausalGraph::constant_state_matrix() const {
    const int n = node_count();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (const auto& k : knowledge) {
        for (const auto& t : k.terms) {
            if (!t.is_slot) a(k.target, t.source) += t.scale * t.constant;
        }
    }
    return a;
}

Eigen::MatrixXd CausalGraph::constant_input_matrix() const {
    const int n = node_count();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, static_cast<int>(channels.size()));
    for (const auto& k : knowledge) {
        if (k.input && !k.input->is_slot) {
            b(k.target, k.input->channel) += k.input->scale * k.input->constant;
        }
    }
    return b;
}

Eigen::MatrixXd CausalGraph::slot_state_matrix(int k) const {
    const int n = node_count();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
    for (const auto& kn : knowledge) {
        for (const auto& t : kn.terms) {
            if (t.is_slot && t.slot == k) g(kn.target, t.source) += t.scale;
        }
    }
    return g;
}

Eigen::MatrixXd CausalGraph::slot_input_matrix(int k) const {
    const int n = node_count();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, static_cast<int>(channels.size()));
    for (const auto& kn : knowledge) {
        if (kn.input && kn.input->is_slot && kn.input->slot == k) {
            g(kn.target, kn.input->channel) += kn.input->scale;
        }
    }
    return g;
}

std::vector<int> antecedents(const CausalGraph& graph, int node) {
    std::vector<int> out;
    for (const auto& k : graph.knowledge) {
        if (k.target != node) continue;
        for (int s : k.source_nodes()) {
            if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

ValidationReport validate_cgd(const CausalGraph& graph) {
    ValidationReport report;
    for (int v = 0; v < graph.node_count(); ++v) {
        const auto ante = antecedents(graph, v);
        if (static_cast<int>(ante.size()) > graph.bound_b) {
            report.issues.push_back(
                {ValidationIssue::Kind::BoundExceeded, v,
                 "node '" + graph.nodes[v].id + "' has " + std::to_string(ante.size()) +
                     " antecedents, bound is " + std::to_string(graph.bound_b)});
        }
    }
    for (int v : graph.latent_nodes()) {
        bool targeted = false;
        for (const auto& k : graph.knowledge) {
            if (k.target == v) {
                targeted = true;
                break;
            }
        }
        if (!targeted) {
            report.issues.push_back({ValidationIssue::Kind::UnreachableLatent, v,
                                     "latent node '" + graph.nodes[v].id +
                                         "' is never the target of a knowledge entry"});
        }
    }
    return report;
}

namespace {

// Undirected adjacency bitmasks over the mechanism arrows (self-loops dropped).
std::vector<std::uint32_t> adjacency_masks(const CausalGraph& graph) {
    std::vector<std::uint32_t> adj(graph.node_count(), 0);
    for (const auto& k : graph.knowledge) {
        for (int s : k.source_nodes()) {
            if (s == k.target) continue;
            adj[s] |= 1u << k.target;
            adj[k.target] |= 1u << s;
        }
    }
    return adj;
}

bool mask_connected(std::uint32_t mask, const std::vector<std::uint32_t>& adj) {
    if (mask == 0) return false;
    const std::uint32_t start = mask & (~mask + 1);
    std::uint32_t seen = start;
    std::uint32_t frontier = start;
    while (frontier != 0) {
        std::uint32_t next = 0;
        std::uint32_t f = frontier;
        while (f != 0) {
            const int v = std::countr_zero(f);
            f &= f - 1;
            next |= adj[v] & mask & ~seen;
        }
        seen |= next;
        frontier = next;
    }
    return seen == mask;
}

}  // namespace

std::vector<int> neighborhood(const CausalGraph& graph, int node, int radius) {
    if (node < 0 || node >= graph.node_count()) {
        throw std::invalid_argument("neighborhood: unknown node index " + std::to_string(node));
    }
    if (radius < 0) throw std::invalid_argument("neighborhood: radius must be >= 0");
    const auto adj = adjacency_masks(graph);
    std::uint32_t seen = 1u << node;
    std::uint32_t frontier = seen;
    for (int hop = 0; hop < radius && frontier != 0; ++hop) {
        std::uint32_t next = 0;
        std::uint32_t f = frontier;
        while (f != 0) {
            const int v = std::countr_zero(f);
            f &= f - 1;
            next |= adj[v] & ~seen;
        }
        seen |= next;
        frontier = next;
    }
    std::vector<int> out;
    for (int v = 0; v < graph.node_count(); ++v) {
        if (seen & (1u << v)) out.push_back(v);
    }
    return out;
}

int SkillPartition::subsystem_of(int node) const {
    for (std::size_t i = 0; i < subsystems.size(); ++i) {
        if (std::find(subsystems[i].begin(), subsystems[i].end(), node) != subsystems[i].end()) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::uint64_t SkillPartition::signature(const CausalGraph& graph, int subsystem) const {
    // FNV-1a over the sorted node ids; stable across environments sharing the graph.
    std::uint64_t h = 1469598103934665603ull;
    for (int v : subsystems[subsystem]) {
        for (char c : graph.nodes[v].id) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        h ^= '|';
        h *= 1099511628211ull;
    }
    return h;
}

SkillPartition make_partition(const CausalGraph& graph,
                              std::vector<std::vector<int>> subsystems) {
    SkillPartition p;
    for (auto& s : subsystems) std::sort(s.begin(), s.end());
    p.subsystems = std::move(subsystems);
    for (const auto& k : graph.knowledge) {
        for (int s : k.source_nodes()) {
            if (s == k.target) continue;
            if (p.subsystem_of(s) != p.subsystem_of(k.target)) {
                p.cascade_edges.emplace_back(s, k.target);
            }
        }
    }
    return p;
}

std::vector<SkillPartition> enumerate_partitions(const CausalGraph& graph, int m,
                                                 std::size_t cap, std::uint64_t seed) {
    const int n = graph.node_count();
    if (m < 1 || m > n) {
        throw std::invalid_argument("enumerate_partitions: m must be in [1, node count]");
    }
    const auto adj = adjacency_masks(graph);

    std::vector<std::vector<std::vector<int>>> found;
    std::vector<std::uint32_t> parts;
    parts.reserve(m);

    // Canonical restricted-growth assignment: node i joins an existing part or
    // opens the next one, so each set partition is produced exactly once.
    auto recurse = [&](auto&& self, int node) -> void {
        if (node == n) {
            if (static_cast<int>(parts.size()) != m) return;
            for (const auto mask : parts) {
                if (!mask_connected(mask, adj)) return;
            }
            std::vector<std::vector<int>> subsystems;
            for (const auto mask : parts) {
                std::vector<int> nodes_in;
                for (int v = 0; v < n; ++v) {
                    if (mask & (1u << v)) nodes_in.push_back(v);
                }
                subsystems.push_back(std::move(nodes_in));
            }
            found.push_back(std::move(subsystems));
            return;
        }
        // Remaining nodes must still be able to fill up to m parts.
        if (static_cast<int>(parts.size()) + (n - node) < m) return;
        for (auto& mask : parts) {
            mask |= 1u << node;
            self(self, node + 1);
            mask &= ~(1u << node);
        }
        if (static_cast<int>(parts.size()) < m) {
            parts.push_back(1u << node);
            self(self, node + 1);
            parts.pop_back();
        }
    };
    recurse(recurse, 0);

    if (found.size() > cap) {
        Rng rng(seed);
        // Seeded reservoir subsample, order preserved.
        std::vector<std::size_t> keep(cap);
        std::iota(keep.begin(), keep.end(), 0);
        for (std::size_t i = cap; i < found.size(); ++i) {
            const std::size_t j = rng.uniform_index(i + 1);
            if (j < cap) keep[j] = i;
        }
        std::sort(keep.begin(), keep.end());
        std::vector<std::vector<std::vector<int>>> sampled;
        sampled.reserve(cap);
        for (std::size_t idx : keep) sampled.push_back(std::move(found[idx]));
        found = std::move(sampled);
    }

    std::vector<SkillPartition> out;
    out.reserve(found.size());
    for (auto& subsystems : found) out.push_back(make_partition(graph, std::move(subsystems)));
    return out;
}

}  // namespace cprl
