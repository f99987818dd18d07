// Command-line front end: every mode of the experiment runner as a
// subcommand, flags for every config field, optional JSON config file with
// flag overrides. Exit code 0 on success; on config errors a JSON list of
// problems goes to stderr.
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cprl/experiment.hpp"

using nlohmann::json;

namespace {

void apply_config_file(cprl::ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    in >> j;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("graph", cfg.graph_path);
    get("data", cfg.dataset_path);
    get("out", cfg.output_dir);
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    get("patients", cfg.patients);
    get("episodes", cfg.episodes);
    get("horizon", cfg.horizon);
    get("cohort_seed", cfg.cohort_seed);
    get("behavior", cfg.behavior);
    get("variant", cfg.variant);
    get("epochs", cfg.epochs);
    get("lr", cfg.lr);
    get("members", cfg.members);
    get("outer_iters", cfg.outer_iters);
    get("inner_iters", cfg.inner_iters);
    get("online", cfg.online);
    get("policy_kind", cfg.policy_kind);
    get("policy", cfg.policy_path);
    get("model", cfg.model_path);
    get("eval_seeds", cfg.eval_seeds);
    get("partition_m", cfg.partition_m);
    if (j.contains("noise")) {
        const auto& n = j["noise"];
        if (n.contains("missing_frac")) cfg.noise.missing_frac = n["missing_frac"].get<double>();
        if (n.contains("misplaced_frac")) {
            cfg.noise.misplaced_frac = n["misplaced_frac"].get<double>();
        }
        if (n.contains("seed")) cfg.noise.seed = n["seed"].get<std::uint64_t>();
        if (n.contains("value_error")) {
            cprl::ValueErrorSpec ve;
            const auto& v = n["value_error"];
            if (v.contains("field")) ve.field = v["field"].get<std::string>();
            if (v.contains("frac")) ve.frac = v["frac"].get<double>();
            if (v.contains("factor_lo")) ve.factor_lo = v["factor_lo"].get<double>();
            if (v.contains("factor_hi")) ve.factor_hi = v["factor_hi"].get<double>();
            cfg.noise.value_error = ve;
        }
    }
}

void add_common(CLI::App* cmd, cprl::ExperimentConfig& cfg, std::string& config_file,
                std::uint64_t& seed_value, bool& seed_given) {
    cmd->add_option("--config", config_file, "JSON config file; flags override its fields");
    cmd->add_option("--graph", cfg.graph_path, "graph-spec file (default: builtin preset)");
    cmd->add_option("--out", cfg.output_dir, "output directory");
    cmd->add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t v) { seed_value = v; seed_given = true; },
           "explicit random seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal-prompt offline RL laboratory"};
    app.require_subcommand(1);

    cprl::ExperimentConfig cfg;
    std::string config_file;
    std::uint64_t seed_value = 0;
    bool seed_given = false;

    auto* sim = app.add_subcommand("simulate", "generate offline datasets from the simulator");
    add_common(sim, cfg, config_file, seed_value, seed_given);
    sim->add_option("--patients", cfg.patients);
    sim->add_option("--episodes", cfg.episodes);
    sim->add_option("--horizon", cfg.horizon);
    sim->add_option("--cohort-seed", cfg.cohort_seed);
    sim->add_option("--behavior", cfg.behavior, "heuristic | random | zero");
    sim->add_option("--noise-missing", cfg.noise.missing_frac);
    sim->add_option("--noise-misplaced", cfg.noise.misplaced_frac);
    sim->add_option("--noise-seed", cfg.noise.seed);
    double vfac_lo = 0.0, vfac_hi = 0.0;
    std::string vfield = "meal";
    sim->add_option("--noise-value-lo", vfac_lo, "value-error factor lower bound");
    sim->add_option("--noise-value-hi", vfac_hi, "value-error factor upper bound");
    sim->add_option("--noise-value-field", vfield, "meal | glucose | insulin");

    auto* td = app.add_subcommand("train-dynamics", "fit a dynamics model on a dataset");
    add_common(td, cfg, config_file, seed_value, seed_given);
    td->add_option("--data", cfg.dataset_path)->required();
    td->add_option("--variant", cfg.variant, "hip_bcpd | mlp | rnn");
    td->add_option("--epochs", cfg.epochs);
    td->add_option("--lr", cfg.lr);

    auto* tp = app.add_subcommand("train-policy", "ensemble-gated policy optimization");
    add_common(tp, cfg, config_file, seed_value, seed_given);
    tp->add_option("--data", cfg.dataset_path);
    tp->add_option("--members", cfg.members);
    tp->add_option("--outer-iters", cfg.outer_iters);
    tp->add_option("--inner-iters", cfg.inner_iters);
    tp->add_flag("--online", cfg.online, "collect from the simulator (Alg-1 loop)");
    tp->add_option("--patients", cfg.patients);
    tp->add_option("--cohort-seed", cfg.cohort_seed);

    auto* ev = app.add_subcommand("evaluate", "run a policy on the simulator cohort");
    add_common(ev, cfg, config_file, seed_value, seed_given);
    ev->add_option("--policy-kind", cfg.policy_kind, "trained | random | zero | basal");
    ev->add_option("--policy", cfg.policy_path);
    ev->add_option("--model", cfg.model_path);
    ev->add_option("--patients", cfg.patients);
    ev->add_option("--cohort-seed", cfg.cohort_seed);
    ev->add_option("--eval-seeds", cfg.eval_seeds);
    ev->add_option("--horizon", cfg.horizon);

    auto* an = app.add_subcommand("analyze-noise", "Rough-ISF box-plot audit of a dataset");
    add_common(an, cfg, config_file, seed_value, seed_given);
    an->add_option("--data", cfg.dataset_path)->required();

    auto* ex = app.add_subcommand("export-graph", "DOT export with skill clusters");
    add_common(ex, cfg, config_file, seed_value, seed_given);
    ex->add_option("--partition-m", cfg.partition_m);

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        // subcommand name is the mode; flags already sit in cfg
        cfg.mode = app.get_subcommands().front()->get_name();
        if (seed_given) cfg.seed = seed_value;
        if (cfg.mode == "simulate" && (vfac_lo != 0.0 || vfac_hi != 0.0)) {
            cprl::ValueErrorSpec ve;
            ve.field = vfield;
            ve.factor_lo = vfac_lo;
            ve.factor_hi = vfac_hi;
            cfg.noise.value_error = ve;
        }
        const auto errors = cprl::validate_config(cfg);
        if (!errors.empty()) {
            json out = json::array();
            for (const auto& e : errors) out.push_back(e);
            std::cerr << out.dump() << "\n";
            return 2;
        }
        const auto report = cprl::run_experiment(cfg);
        if (!report.rows.empty()) std::cout << report.to_csv();
        return 0;
    } catch (const cprl::ConfigError& e) {
        json out = json::array();
        for (const auto& msg : e.errors) out.push_back(msg);
        std::cerr << out.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        json out = json::array();
        out.push_back(e.what());
        std::cerr << out.dump() << "\n";
        return 1;
    }
}
