#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cprl {

// A node of the causal prompt. Observed nodes are emitted to the agent,
// latent ones are reconstructed through the knowledge formulas. A node with
// a `hold` channel is pinned to that channel's event magnitude whenever the
// channel fires and follows its knowledge ODE otherwise.
struct NodeDecl {
    std::string id;
    std::string unit;
    bool observed = false;
    std::string hold_channel;  // empty when the node is a plain state

    bool is_hold() const { return !hold_channel.empty(); }
};

// One [MASK] slot of the prompt. `base` is the canonical value the shipped
// preset was calibrated with; per-environment values replace it.
struct SlotDecl {
    std::string name;
    double base = 0.0;
};

// One additive term of a knowledge formula: scale * coeff * value(source),
// where coeff is either a hidden-parameter slot or a literal constant.
struct KnowledgeTerm {
    double scale = 1.0;
    bool is_slot = false;
    int slot = -1;
    double constant = 0.0;
    int source = -1;  // node index
};

// Optional exogenous drive of a knowledge entry: scale * gain * channel(t).
struct InputTerm {
    int channel = -1;
    double scale = 1.0;
    bool is_slot = false;
    int slot = -1;
    double constant = 1.0;
};

// A piece of causal knowledge: one directed mechanism arrow contributing
// additively to the target node's derivative.
struct CausalKnowledge {
    std::string label;
    int target = -1;
    std::vector<KnowledgeTerm> terms;
    std::optional<InputTerm> input;

    // Distinct source node indices in first-appearance order.
    std::vector<int> source_nodes() const;
};

struct CausalGraph {
    std::string name;
    std::vector<std::string> channels;  // channel 0 is conventionally "const"
    std::vector<NodeDecl> nodes;
    std::vector<SlotDecl> slots;
    std::vector<CausalKnowledge> knowledge;
    int radius_r = 2;
    int bound_b = 8;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int param_slot_count() const { return static_cast<int>(slots.size()); }
    int knowledge_count() const { return static_cast<int>(knowledge.size()); }

    int node_index(std::string_view id) const;       // -1 when absent
    int channel_index(std::string_view name) const;  // -1 when absent
    int slot_index(std::string_view name) const;     // -1 when absent

    std::vector<int> observed_nodes() const;
    std::vector<int> latent_nodes() const;

    // Canonical base parameter vector (slot declaration order).
    Eigen::VectorXd base_theta() const;

    // Linear assembly of the derivative:  sdot = A(theta) * s + B(theta) * u
    // with u the channel vector. `slot_state_matrix(k)` is dA/dtheta_k and
    // `slot_input_matrix(k)` is dB/dtheta_k; both are theta-independent.
    Eigen::MatrixXd system_matrix(const Eigen::VectorXd& theta) const;
    Eigen::MatrixXd input_matrix(const Eigen::VectorXd& theta) const;
    Eigen::MatrixXd constant_state_matrix() const;
    Eigen::MatrixXd constant_input_matrix() const;
    Eigen::MatrixXd slot_state_matrix(int k) const;
    Eigen::MatrixXd slot_input_matrix(int k) const;
};

// Structured parse failure with a 1-based line position.
struct GraphParseError : std::runtime_error {
    GraphParseError(int line_arg, const std::string& what_arg)
        : std::runtime_error("line " + std::to_string(line_arg) + ": " + what_arg),
          line(line_arg) {}
    int line;
};

CausalGraph parse_graph_spec(const std::string& text);
CausalGraph load_graph_file(const std::string& path);
std::string serialize_graph(const CausalGraph& graph);  // byte-stable
void save_graph_file(const CausalGraph& graph, const std::string& path);
std::uint64_t graph_hash(const CausalGraph& graph);

// The 13-node / 37-knowledge / 35-slot glucose-insulin prompt.
const CausalGraph& glucose_insulin_preset();
std::string glucose_insulin_preset_text();

struct ValidationIssue {
    enum class Kind { BoundExceeded, UnreachableLatent };
    Kind kind;
    int node;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool passed() const { return issues.empty(); }
};

// Checks boundedness (|antecedent set| <= bound_b for every node) and that
// every latent node is the target of at least one knowledge entry.
ValidationReport validate_cgd(const CausalGraph& graph);

// Antecedent set a(v): distinct source nodes across entries targeting v.
std::vector<int> antecedents(const CausalGraph& graph, int node);

// Nodes reachable from `node` within `radius` undirected hops, sorted.
std::vector<int> neighborhood(const CausalGraph& graph, int node, int radius);

struct SkillPartition {
    std::vector<std::vector<int>> subsystems;            // sorted node indices
    std::vector<std::pair<int, int>> cascade_edges;      // (source, target) arrows crossing

    int subsystem_of(int node) const;
    std::uint64_t signature(const CausalGraph& graph, int subsystem) const;
};

// All partitions of the graph into exactly m connected, disjoint, covering
// subsystems, in canonical order. When more than `cap` exist a seeded uniform
// subsample of size `cap` is returned (deterministic given the seed).
std::vector<SkillPartition> enumerate_partitions(const CausalGraph& graph, int m,
                                                 std::size_t cap = 200000,
                                                 std::uint64_t seed = 0);

// Builds the partition's cascade edges from the graph (arrows whose endpoints
// lie in different subsystems, in knowledge order).
SkillPartition make_partition(const CausalGraph& graph,
                              std::vector<std::vector<int>> subsystems);

}  // namespace cprl
