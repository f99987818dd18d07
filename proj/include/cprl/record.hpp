#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cprl {

// The three observed dimensions o = [o1, o2, o3].
struct EnvObservation {
    double glucose_mgdl = 0.0;
    double meal_carbs_g = 0.0;
    double prev_insulin_U = 0.0;
};

// One offline quadruple (o, a, o', r) with provenance. Line format:
//   env_id,t,o1,o2,o3,a,o1',o2',o3',r[,exercise_carbs_g]
// Numbers are printed with %.17g so save/load round-trips exactly.
struct TransitionRecord {
    int env_id = 0;
    double timestamp_min = 0.0;
    EnvObservation o;
    double action_U = 0.0;
    EnvObservation o_next;
    double reward = 0.0;
    std::optional<double> exercise_carbs_g;
};

std::string format_record(const TransitionRecord& rec);
bool parse_record(const std::string& line, TransitionRecord& out, std::string& error);

// One numeric transition for model learning; observations are in the graph's
// observed-node order (width 3 for the glucose preset, arbitrary otherwise).
struct Transition {
    Eigen::VectorXd o;
    double action = 0.0;
    Eigen::VectorXd o_next;
    double timestamp = 0.0;
};

// Ordered per-environment trajectories. A timestamp that does not increase
// marks an episode boundary (latent carries reset there).
struct EnvData {
    int env_label = 0;
    std::vector<Transition> steps;
};
using MultiEnvData = std::vector<EnvData>;

Eigen::Vector3d obs_to_vector(const EnvObservation& obs);
Transition record_to_transition(const TransitionRecord& rec);

}  // namespace cprl
