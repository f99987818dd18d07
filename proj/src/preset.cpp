#include "cprl/causal_graph.hpp"

namespace cprl {

namespace {

// Canonical glucose-insulin prompt: 13 nodes, 37 mechanism arrows, 35 slots.
// G_sc, D_meal and U_prev are the three observed dimensions; the insulin
// exchange between liver and plasma carries the m1..m4 patient parameters.
// Slot bases are calibrated so the zero-input fixed point sits in the low
// 200s mg/dL (untreated fasting hyperglycemia) and roughly one unit of
// rapid-acting insulin covers 13 g of carbohydrate.
constexpr const char* kGlucoseInsulinSpec = R"(graph glucose_insulin
radius 2
bound 8
channel const
channel meal
channel infusion
channel dose
node G_sc unit=mg/dL observed
node Q_sto1 unit=mg latent
node Q_sto2 unit=mg latent
node Q_gut unit=mg latent
node G_p unit=mg/dL latent
node G_t unit=mg/dL latent
node I_l unit=pmol/kg latent
node I_p unit=pmol/kg latent
node I_sc1 unit=pmol/kg latent
node I_sc2 unit=pmol/kg latent
node D_meal unit=g observed hold=meal
node X unit=pmol/L latent
node U_prev unit=U observed hold=dose
slot k_cnv base=30
slot k_gri base=0.055
slot k_empt base=0.035
slot k_abs base=0.057
slot k_loss base=0.005
slot k_ra base=0.0002
slot k_1 base=0.065
slot k_2 base=0.079
slot k_e base=0.002
slot k_p1 base=2
slot k_p2 base=0.0035
slot k_p3 base=1
slot k_u base=0.004
slot k_ux base=1
slot p_2 base=0.025
slot p_3 base=0.01
slot m_1 base=0.19
slot m_2 base=0.484
slot m_3 base=0.285
slot m_4 base=0.194
slot k_a1 base=0.006
slot k_a2 base=0.022
slot k_d1 base=0.0164
slot k_deg1 base=0.002
slot k_deg2 base=0.002
slot k_iu base=0.05
slot k_fa base=0.02
slot k_li base=0.07
slot k_pi base=0.03
slot k_ti base=0.03
slot k_dmeal base=0.03
slot k_uprev base=0.25
slot k_sc base=0.1
slot k_ts base=0.02
slot k_sd base=0.12
knowledge meal-signal-decay target=D_meal
  term -1 slot:k_dmeal D_meal
  input meal gain=const:1
end
knowledge ingestion target=Q_sto1
  term 1 slot:k_cnv D_meal
end
knowledge grinding-out target=Q_sto1
  term -1 slot:k_gri Q_sto1
end
knowledge grinding-in target=Q_sto2
  term 1 slot:k_gri Q_sto1
end
knowledge emptying-out target=Q_sto2
  term -1 slot:k_empt Q_sto2
end
knowledge emptying-in target=Q_gut
  term 1 slot:k_empt Q_sto2
end
knowledge gut-clearance target=Q_gut
  term -1 slot:k_abs Q_gut
  term -1 slot:k_loss Q_gut
end
knowledge appearance target=G_p
  term 1 slot:k_ra Q_gut
end
knowledge plasma-transfer-out target=G_p
  term -1 slot:k_1 G_p
end
knowledge tissue-return target=G_p
  term 1 slot:k_2 G_t
end
knowledge renal-clearance target=G_p
  term -1 slot:k_e G_p
end
knowledge endogenous-production target=G_p
  term -1 slot:k_p2 G_p
  input const gain=slot:k_p1
end
knowledge production-action-suppression target=G_p
  term -1 slot:k_p3 X
end
knowledge tissue-uptake target=G_t
  term 1 slot:k_1 G_p
end
knowledge tissue-return-out target=G_t
  term -1 slot:k_2 G_t
end
knowledge basal-utilization target=G_t
  term -1 slot:k_u G_t
end
knowledge action-utilization target=G_t
  term -1 slot:k_ux X
end
knowledge action-decay target=X
  term -1 slot:p_2 X
end
knowledge action-gain target=X
  term 1 slot:p_3 I_p
end
knowledge liver-insulin-use target=I_l
  term -1 slot:m_1 I_l
  term -1 slot:m_3 I_l
end
knowledge plasma-to-liver target=I_l
  term 1 slot:m_2 I_p
end
knowledge plasma-insulin-out target=I_p
  term -1 slot:m_2 I_p
  term -1 slot:m_4 I_p
end
knowledge liver-to-plasma target=I_p
  term 1 slot:m_1 I_l
end
knowledge depot1-absorption target=I_p
  term 1 slot:k_a1 I_sc1
end
knowledge depot2-absorption target=I_p
  term 1 slot:k_a2 I_sc2
end
knowledge depot1-out target=I_sc1
  term -1 slot:k_d1 I_sc1
  term -1 slot:k_a1 I_sc1
  term -1 slot:k_deg1 I_sc1
  input infusion gain=const:1
end
knowledge depot-transfer target=I_sc2
  term 1 slot:k_d1 I_sc1
end
knowledge depot2-out target=I_sc2
  term -1 slot:k_a2 I_sc2
  term -1 slot:k_deg2 I_sc2
end
knowledge dose-memory target=U_prev
  term -1 slot:k_uprev U_prev
  input dose gain=const:1
end
knowledge dose-uptake target=I_sc1
  term 1 slot:k_iu U_prev
end
knowledge direct-absorption target=I_p
  term 1 slot:k_fa U_prev
end
knowledge production-liver-suppression target=G_p
  term -1 slot:k_li I_l
end
knowledge plasma-insulin-disposal target=G_p
  term -1 slot:k_pi I_p
end
knowledge tissue-insulin-uptake target=G_t
  term -1 slot:k_ti I_p
end
knowledge plasma-sensing target=G_sc
  term 1 slot:k_sc G_p
end
knowledge tissue-sensing target=G_sc
  term 1 slot:k_ts G_t
end
knowledge sensor-decay target=G_sc
  term -1 slot:k_sd G_sc
end
)";

}  // namespace

std::string glucose_insulin_preset_text() { return kGlucoseInsulinSpec; }

const CausalGraph& glucose_insulin_preset() {
    static const CausalGraph graph = parse_graph_spec(kGlucoseInsulinSpec);
    return graph;
}

}  // namespace cprl
