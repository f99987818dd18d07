// Scratch calibration harness (not part of the deliverable CLI): prints the
// preset's fixed point, basal-rate sweep, bolus response and meal excursion.
#include <cstdio>

#include "cprl/causal_graph.hpp"
#include "cprl/simulator.hpp"

using namespace cprl;

int main() {
    const CausalGraph& g = glucose_insulin_preset();
    std::printf("nodes=%d knowledge=%d slots=%d\n", g.node_count(), g.knowledge_count(),
                g.param_slot_count());
    PatientParams p = base_patient(g);
    for (int i = 0; i < g.node_count(); ++i) {
        std::printf("  basal %-8s = %10.4f %s\n", g.nodes[i].id.c_str(), p.basal_state[i],
                    g.nodes[i].unit.c_str());
    }

    // fasting, constant basal sweep (no meals)
    EnvConfig cfg;
    cfg.meals_enabled = false;
    for (double u : {0.0, 0.004, 0.006, 0.008, 0.01, 0.012, 0.016, 0.025}) {
        auto r = rollout([&](const EnvObservation&, int) { return u; }, g, p, 1440, 1, cfg);
        std::printf("basal u=%.4f U/min -> G(end)=%8.2f mean_r=%7.3f tir=%.2f\n", u,
                    r.records.back().o_next.glucose_mgdl, r.mean_reward, r.time_in_range);
    }

    // 1 U bolus from a treated steady state: dose 1U spread as profile at t=0
    {
        EnvConfig c2 = cfg;
        c2.max_action_U = 1.0;
        const double basal = 0.008;
        // settle to treated steady state first
        GraphEnv env(g, p, c2);
        env.reset(2);
        for (int t = 0; t < 2000 && !env.failed(); ++t) env.step(basal);
        const double g0 = env.observe().glucose_mgdl;
        GraphEnv env2 = env;
        double g180 = 0;
        for (int t = 0; t < 180; ++t) {
            const double a = (t == 0) ? basal + 1.0 : basal;
            auto s = env2.step(a);
            if (t == 179) g180 = s.obs.glucose_mgdl;
        }
        std::printf("bolus: G0=%.2f G180=%.2f drop=%.2f mg/dL per U (carb equiv %.1f g @3.5)\n",
                    g0, g180, g0 - g180, (g0 - g180) / 3.5);
    }

    // meal excursion without insulin cover from treated ss
    {
        GraphEnv env(g, p, cfg);
        env.reset(3);
        for (int t = 0; t < 2000 && !env.failed(); ++t) env.step(0.008);
        const double g0 = env.observe().glucose_mgdl;
        // inject a 50 g meal by pinning the meal node (simulate event)
        EnvConfig c3 = cfg;
        c3.meals_enabled = true;
        PatientParams p3 = p;
        p3.meals.slots = {{5, 5, 50.0}};
        p3.meals.noise_enabled = false;
        GraphEnv env3(g, p3, c3);
        env3.reset(4);
        // hack: start from treated state
        double peak = 0, gend = 0;
        GraphEnv envm = env3;
        for (int t = 0; t < 360; ++t) {
            auto s = envm.step(0.008);
            peak = std::max(peak, s.obs.glucose_mgdl);
            gend = s.obs.glucose_mgdl;
        }
        std::printf("meal 50g from untreated: G0(basal)=%.2f peak=%.2f end(6h)=%.2f\n", g0, peak,
                    gend);
    }
    return 0;
}
