#include "cprl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace cprl {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const CausalGraph& graph_for(const ExperimentConfig& cfg, std::unique_ptr<CausalGraph>& holder) {
    if (cfg.graph_path.empty()) return glucose_insulin_preset();
    holder = std::make_unique<CausalGraph>(load_graph_file(cfg.graph_path));
    return *holder;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors_arg)
    : std::runtime_error("invalid experiment config (" + std::to_string(errors_arg.size()) +
                         " problems)"),
      errors(std::move(errors_arg)) {}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> errors;
    const std::vector<std::string> modes = {"simulate",      "train-dynamics", "train-policy",
                                            "evaluate",      "analyze-noise",  "export-graph"};
    if (std::find(modes.begin(), modes.end(), cfg.mode) == modes.end()) {
        errors.push_back("unknown mode '" + cfg.mode + "'");
        return errors;
    }
    const bool stochastic = cfg.mode == "simulate" || cfg.mode == "train-dynamics" ||
                            cfg.mode == "train-policy" || cfg.mode == "evaluate";
    if (stochastic && !cfg.seed.has_value()) {
        errors.push_back("mode '" + cfg.mode + "' requires an explicit --seed");
    }
    if ((cfg.mode == "train-dynamics" || cfg.mode == "train-policy" ||
         cfg.mode == "analyze-noise") &&
        cfg.dataset_path.empty()) {
        errors.push_back("mode '" + cfg.mode + "' requires --data");
    }
    if (cfg.mode == "train-policy" && cfg.online && cfg.patients < 1) {
        errors.push_back("online training needs --patients >= 1");
    }
    if (cfg.mode == "simulate") {
        if (cfg.patients < 1) errors.push_back("--patients must be >= 1");
        if (cfg.episodes < 1) errors.push_back("--episodes must be >= 1");
        if (cfg.horizon < 0 || cfg.horizon > kEpisodeMinutes) {
            errors.push_back("--horizon must be in [0, 1440]");
        }
        if (cfg.behavior != "heuristic" && cfg.behavior != "random" && cfg.behavior != "zero") {
            errors.push_back("--behavior must be heuristic, random or zero");
        }
    }
    if (cfg.mode == "train-dynamics" && cfg.variant != "hip_bcpd" && cfg.variant != "mlp" &&
        cfg.variant != "rnn") {
        errors.push_back("--variant must be hip_bcpd, mlp or rnn");
    }
    if (cfg.mode == "evaluate") {
        if (cfg.policy_kind == "trained") {
            if (cfg.policy_path.empty()) errors.push_back("evaluate trained needs --policy");
            if (cfg.model_path.empty()) errors.push_back("evaluate trained needs --model");
        } else if (cfg.policy_kind != "random" && cfg.policy_kind != "zero" &&
                   cfg.policy_kind != "basal") {
            errors.push_back("--policy-kind must be trained, random, zero or basal");
        }
        if (cfg.eval_seeds < 1) errors.push_back("--eval-seeds must be >= 1");
    }
    if (cfg.mode == "export-graph" && cfg.partition_m < 1) {
        errors.push_back("--partition-m must be >= 1");
    }
    if (cfg.epochs < 0) errors.push_back("--epochs must be >= 0");
    if (cfg.lr <= 0) errors.push_back("--lr must be > 0");
    if (cfg.members < 1) errors.push_back("--members must be >= 1");
    return errors;
}

std::vector<MethodSummary> EvalReport::summaries() const {
    std::vector<MethodSummary> out;
    std::vector<std::string> methods;
    for (const auto& row : rows) {
        if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) {
            methods.push_back(row.method);
        }
    }
    for (const auto& method : methods) {
        MethodSummary s;
        s.method = method;
        double sum = 0.0, tir = 0.0;
        int n = 0;
        for (const auto& row : rows) {
            if (row.method != method) continue;
            sum += row.mean_step_reward;
            tir += row.time_in_range;
            ++n;
        }
        s.average = sum / n;
        s.mean_tir = tir / n;
        double dev = 0.0;
        for (const auto& row : rows) {
            if (row.method == method) dev += std::abs(row.mean_step_reward - s.average);
        }
        s.avedev = dev / n;
        out.push_back(s);
    }
    return out;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "method,env_id,mean_step_reward,time_in_range\n";
    for (const auto& row : rows) {
        out << row.method << ',' << row.env_id << ',' << fmt(row.mean_step_reward) << ','
            << fmt(row.time_in_range) << '\n';
    }
    for (const auto& s : summaries()) {
        out << s.method << ",average," << fmt(s.average) << ',' << fmt(s.mean_tir) << '\n';
        out << s.method << ",avedev," << fmt(s.avedev) << ",\n";
    }
    return out.str();
}

std::string export_graph(const CausalGraph& graph, const SkillPartition& partition,
                         const Eigen::VectorXd* theta) {
    for (int v = 0; v < graph.node_count(); ++v) {
        if (partition.subsystem_of(v) < 0) {
            throw std::invalid_argument("export_graph: partition does not cover node '" +
                                        graph.nodes[v].id + "'");
        }
    }
    for (const auto& sub : partition.subsystems) {
        for (int v : sub) {
            if (v < 0 || v >= graph.node_count()) {
                throw std::invalid_argument("export_graph: partition references unknown node");
            }
        }
    }
    std::ostringstream out;
    out << "digraph " << graph.name << " {\n";
    if (theta) {
        for (int k = 0; k < graph.param_slot_count(); ++k) {
            out << "  // slot " << graph.slots[k].name << " = " << fmt((*theta)[k]) << "\n";
        }
    }
    for (std::size_t sub = 0; sub < partition.subsystems.size(); ++sub) {
        out << "  subgraph cluster_" << sub << " {\n";
        out << "    label=\"skill_" << sub << "\";\n";
        for (int v : partition.subsystems[sub]) {
            out << "    " << graph.nodes[v].id << " [unit=\"" << graph.nodes[v].unit << "\"];\n";
        }
        out << "  }\n";
    }
    for (const auto& k : graph.knowledge) {
        for (int s : k.source_nodes()) {
            out << "  " << graph.nodes[s].id << " -> " << graph.nodes[k.target].id << " [label=\""
                << k.label << "\"];\n";
        }
    }
    out << "}\n";
    return out.str();
}

std::string CurveTable::to_csv() const {
    std::ostringstream out;
    out << "epoch";
    for (const auto& v : variants) out << ',' << v;
    out << '\n';
    for (std::size_t e = 0; e < loss_by_epoch.size(); ++e) {
        out << e;
        for (double loss : loss_by_epoch[e]) {
            out << ',';
            if (std::isfinite(loss)) out << fmt(loss);  // missing epochs stay blank
        }
        out << '\n';
    }
    return out.str();
}

CurveTable learning_curves(const std::string& log_dir) {
    CurveTable table;
    std::vector<fs::path> files;
    if (fs::exists(log_dir)) {
        for (const auto& entry : fs::directory_iterator(log_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("loss_", 0) == 0 && entry.path().extension() == ".csv") {
                files.push_back(entry.path());
            }
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw std::runtime_error("learning_curves: no loss_<variant>.csv files in " + log_dir);
    }
    std::vector<std::map<int, double>> curves;
    std::size_t max_epoch = 0;
    for (const auto& path : files) {
        table.variants.push_back(path.stem().string().substr(5));
        std::ifstream in(path);
        std::map<int, double> curve;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line.rfind("epoch", 0) == 0) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            const int epoch = std::stoi(line.substr(0, comma));
            curve[epoch] = std::stod(line.substr(comma + 1));
            max_epoch = std::max(max_epoch, static_cast<std::size_t>(epoch) + 1);
        }
        curves.push_back(std::move(curve));
    }
    table.loss_by_epoch.assign(max_epoch,
                               std::vector<double>(table.variants.size(),
                                                   std::numeric_limits<double>::quiet_NaN()));
    for (std::size_t c = 0; c < curves.size(); ++c) {
        for (const auto& [epoch, loss] : curves[c]) {
            table.loss_by_epoch[static_cast<std::size_t>(epoch)][c] = loss;
        }
    }
    return table;
}

Eigen::VectorXd steady_state_with_infusion(const CausalGraph& graph, const Eigen::VectorXd& theta,
                                           const std::string& channel, double rate) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<int>(graph.channels.size()));
    const int cc = graph.channel_index("const");
    const int ic = graph.channel_index(channel);
    if (ic < 0) throw std::invalid_argument("steady_state_with_infusion: unknown channel");
    if (cc >= 0) u[cc] = 1.0;
    u[ic] = rate;
    const Eigen::MatrixXd a = graph.system_matrix(theta);
    const Eigen::VectorXd b = graph.input_matrix(theta) * u;
    return a.fullPivLu().solve(-b);
}

double infusion_for_target(const CausalGraph& graph, const Eigen::VectorXd& theta,
                           const std::string& node, double target) {
    const int v = graph.node_index(node);
    if (v < 0) throw std::invalid_argument("infusion_for_target: unknown node '" + node + "'");
    const double g0 = steady_state_with_infusion(graph, theta, "infusion", 0.0)[v];
    const double g1 = steady_state_with_infusion(graph, theta, "infusion", 1.0)[v];
    const double slope = g1 - g0;
    if (std::abs(slope) < 1e-12) {
        throw std::runtime_error("infusion_for_target: node does not respond to the drive");
    }
    return (target - g0) / slope;
}

std::vector<TargetLevels> glucose_target_levels(const CausalGraph& graph) {
    const Eigen::VectorXd theta = graph.base_theta();
    const double u120 = infusion_for_target(graph, theta, "G_sc", 120.0);
    const Eigen::VectorXd treated = steady_state_with_infusion(graph, theta, "infusion", u120);
    const double ip_ref = std::max(1e-6, treated[graph.node_index("I_p")]);
    const double depot_ref = std::max(1e-6, treated[graph.node_index("I_sc1")]);
    return {
        {"G_sc", {100.0, 120.0, 140.0}},
        {"I_p", {0.5 * ip_ref, ip_ref, 2.0 * ip_ref}},
        {"I_sc1", {depot_ref, 2.0 * depot_ref}},
    };
}

ActionFn make_behavior_policy(const std::string& kind, double max_action, std::uint64_t seed) {
    if (kind == "zero") {
        return [](const EnvObservation&, int) { return 0.0; };
    }
    if (kind == "random") {
        auto rng = std::make_shared<Rng>(seed);
        return [rng, max_action](const EnvObservation&, int) {
            return rng->uniform(0.0, max_action);
        };
    }
    if (kind != "heuristic") throw std::invalid_argument("unknown behavior policy '" + kind + "'");
    // Noisy basal-bolus dosing: a drifting basal rate plus a spread-out meal
    // bolus at a jittered carb ratio. Suboptimal on purpose; it exists to
    // excite the dynamics, not to control well.
    struct State {
        Rng rng;
        double basal;
        double bolus_rate = 0.0;
        int bolus_left = 0;
        explicit State(std::uint64_t s) : rng(s), basal(0.004 + 0.006 * Rng(s ^ 0x5eedull).uniform()) {}
    };
    auto st = std::make_shared<State>(seed);
    return [st, max_action](const EnvObservation& obs, int) {
        if (obs.meal_carbs_g > 1.0) {
            const double carb_ratio = st->rng.uniform(10.0, 16.0);  // g per U
            const int spread = 30;
            st->bolus_rate = obs.meal_carbs_g / carb_ratio / spread;
            st->bolus_left = spread;
        }
        st->basal = std::clamp(st->basal + st->rng.uniform(-3e-4, 3e-4), 0.002, 0.012);
        double a = st->basal * st->rng.uniform(0.6, 1.4);
        if (st->bolus_left > 0) {
            a += st->bolus_rate * st->rng.uniform(0.8, 1.2);
            --st->bolus_left;
        }
        return std::clamp(a, 0.0, max_action);
    };
}

namespace {

EvalReport do_simulate(const ExperimentConfig& cfg, const CausalGraph& graph) {
    fs::create_directories(cfg.output_dir);
    const auto cohort = synthetic_cohort(graph, cfg.patients, cfg.cohort_seed);
    Rng rng(*cfg.seed);
    std::vector<TransitionRecord> records;
    EnvConfig env_cfg;
    for (const auto& patient : cohort) {
        for (int ep = 0; ep < cfg.episodes; ++ep) {
            const std::uint64_t ep_seed = rng.split(patient.id * 1000 + ep).bits();
            auto behavior = make_behavior_policy(cfg.behavior, env_cfg.max_action_U, ep_seed);
            auto ro = rollout(behavior, graph, patient, cfg.horizon, ep_seed, env_cfg);
            records.insert(records.end(), ro.records.begin(), ro.records.end());
        }
    }
    const std::string clean_path = cfg.output_dir + "/dataset.csv";
    save_dataset(records, clean_path);
    if (!cfg.noise.is_zero()) {
        NoiseSpec spec = cfg.noise;
        if (spec.seed == 0) spec.seed = *cfg.seed;
        const auto corrupted = inject_noise(records, spec);
        save_dataset(corrupted.records, cfg.output_dir + "/dataset_noisy.csv");
        save_manifest(corrupted.manifest, cfg.output_dir + "/dataset_noisy.manifest");
    }
    return {};
}

EvalReport do_train_dynamics(const ExperimentConfig& cfg, const CausalGraph& graph) {
    fs::create_directories(cfg.output_dir);
    const OfflineDataset ds = load_dataset(cfg.dataset_path);
    const MultiEnvData data = ds.to_env_data();
    DynamicsModel model =
        cfg.variant == "hip_bcpd"
            ? make_hip_bcpd(graph, static_cast<int>(data.size()), HipBcpdConfig{}, *cfg.seed)
            : make_baseline(cfg.variant, static_cast<int>(graph.observed_nodes().size()),
                            *cfg.seed);
    FitConfig fit;
    fit.epochs = cfg.epochs;
    fit.lr = cfg.lr;
    fit.seed = *cfg.seed;
    const FitResult result = fit_dynamics(model, data, fit);
    std::ostringstream curve;
    curve << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
        curve << e << ',' << fmt(result.loss_curve[e]) << '\n';
    }
    write_text(cfg.output_dir + "/loss_" + cfg.variant + ".csv", curve.str());
    save_dynamics_checkpoint(model, graph_hash(graph),
                             cfg.output_dir + "/dynamics_" + cfg.variant + ".ckpt");
    return {};
}

TrainerConfig trainer_config_for(const ExperimentConfig& cfg, const CausalGraph& graph) {
    TrainerConfig tc;
    tc.members = cfg.members;
    tc.outer_iters = cfg.outer_iters;
    tc.inner_iters = cfg.inner_iters;
    tc.seed = *cfg.seed;
    tc.targets = glucose_target_levels(graph);
    tc.reward_obs_dim = 0;
    tc.meal_obs_dim = 1;
    tc.fict_meals = default_meal_plan();
    return tc;
}

EvalReport do_train_policy(const ExperimentConfig& cfg, const CausalGraph& graph) {
    fs::create_directories(cfg.output_dir);
    TrainResult result;
    if (cfg.online) {
        const auto cohort = synthetic_cohort(graph, cfg.patients, cfg.cohort_seed);
        result = train_online(graph, cohort, trainer_config_for(cfg, graph));
    } else {
        const OfflineDataset ds = load_dataset(cfg.dataset_path);
        result = train_offline(graph, ds.to_env_data(), trainer_config_for(cfg, graph));
    }
    result.policy.save(cfg.output_dir + "/policy.ckpt", graph_hash(graph));
    save_dynamics_checkpoint(result.ensemble.members.front(), graph_hash(graph),
                             cfg.output_dir + "/dynamics_member0.ckpt");
    save_train_log(result.log, cfg.output_dir + "/train_log.csv");
    if (!result.warnings.empty()) {
        std::ostringstream w;
        for (const auto& line : result.warnings) w << line << '\n';
        write_text(cfg.output_dir + "/warnings.txt", w.str());
    }
    return {};
}

EvalReport do_evaluate(const ExperimentConfig& cfg, const CausalGraph& graph) {
    fs::create_directories(cfg.output_dir);
    const auto cohort = synthetic_cohort(graph, cfg.patients, cfg.cohort_seed);
    EnvConfig env_cfg;
    EvalReport report;

    std::optional<HierarchicalPolicy> policy;
    std::optional<DynamicsModel> recon;
    if (cfg.policy_kind == "trained") {
        policy = HierarchicalPolicy::load(graph, cfg.policy_path, graph_hash(graph));
        recon = load_dynamics_checkpoint(graph, cfg.model_path, graph_hash(graph));
    }
    double basal_rate = 0.0;
    if (cfg.policy_kind == "basal") {
        // steady per-minute dose whose spread profile reproduces the target
        // infusion rate
        basal_rate = infusion_for_target(graph, graph.base_theta(), env_cfg.glucose_node, 120.0) /
                     env_cfg.action_unit;
    }

    Rng rng(*cfg.seed);
    for (std::size_t label = 0; label < cohort.size(); ++label) {
        double reward_sum = 0.0, tir_sum = 0.0;
        for (int s = 0; s < cfg.eval_seeds; ++s) {
            const std::uint64_t episode_seed = rng.split(label * 100 + s).bits();
            ActionFn fn;
            if (cfg.policy_kind == "trained") {
                HiddenParams hp;
                if (const auto* hip = std::get_if<HipBcpd>(&recon->impl)) {
                    hp = hip->infer_theta(static_cast<int>(label));
                }
                fn = make_model_policy(*policy, *recon, hp);
            } else if (cfg.policy_kind == "basal") {
                fn = [basal_rate](const EnvObservation&, int) { return basal_rate; };
            } else {
                fn = make_behavior_policy(cfg.policy_kind, env_cfg.max_action_U, episode_seed);
            }
            const auto ro = rollout(fn, graph, cohort[label], cfg.horizon, episode_seed, env_cfg);
            reward_sum += ro.mean_reward;
            tir_sum += ro.time_in_range;
        }
        EvalRow row;
        row.method = cfg.policy_kind;
        row.env_id = cohort[label].id;
        row.mean_step_reward = reward_sum / cfg.eval_seeds;
        row.time_in_range = tir_sum / cfg.eval_seeds;
        report.rows.push_back(row);
    }
    write_text(cfg.output_dir + "/report.csv", report.to_csv());
    return report;
}

EvalReport do_analyze_noise(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    const OfflineDataset ds = load_dataset(cfg.dataset_path);
    std::vector<IsfGroupStats> all;
    for (int env_id : ds.env_ids()) {
        const auto result = rough_isf(ds.for_env(env_id));
        all.insert(all.end(), result.groups.begin(), result.groups.end());
    }
    write_text(cfg.output_dir + "/isf_report.csv", format_isf_report(all));
    return {};
}

EvalReport do_export_graph(const ExperimentConfig& cfg, const CausalGraph& graph) {
    fs::create_directories(cfg.output_dir);
    const auto partitions = enumerate_partitions(graph, cfg.partition_m, 50000, 0);
    if (partitions.empty()) throw std::runtime_error("no connected partition for requested m");
    // Most balanced candidate, canonical tie-break (same rule as training).
    std::size_t best = 0;
    double best_spread = 1e18;
    for (std::size_t i = 0; i < partitions.size(); ++i) {
        double lo = 1e18, hi = 0;
        for (const auto& sub : partitions[i].subsystems) {
            lo = std::min(lo, static_cast<double>(sub.size()));
            hi = std::max(hi, static_cast<double>(sub.size()));
        }
        if (hi - lo < best_spread) {
            best_spread = hi - lo;
            best = i;
        }
    }
    const Eigen::VectorXd theta = graph.base_theta();
    write_text(cfg.output_dir + "/graph.dot", export_graph(graph, partitions[best], &theta));
    return {};
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& cfg) {
    auto errors = validate_config(cfg);
    if (!errors.empty()) throw ConfigError(std::move(errors));
    std::unique_ptr<CausalGraph> holder;
    const CausalGraph& graph = graph_for(cfg, holder);
    if (cfg.mode == "simulate") return do_simulate(cfg, graph);
    if (cfg.mode == "train-dynamics") return do_train_dynamics(cfg, graph);
    if (cfg.mode == "train-policy") return do_train_policy(cfg, graph);
    if (cfg.mode == "evaluate") return do_evaluate(cfg, graph);
    if (cfg.mode == "analyze-noise") return do_analyze_noise(cfg);
    return do_export_graph(cfg, graph);
}

}  // namespace cprl
