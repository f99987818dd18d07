#include "cprl/record.hpp"

#include <cstdio>
#include <sstream>
#include <vector>

namespace cprl {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string format_record(const TransitionRecord& rec) {
    std::ostringstream out;
    out << rec.env_id << ',' << fmt(rec.timestamp_min) << ',' << fmt(rec.o.glucose_mgdl) << ','
        << fmt(rec.o.meal_carbs_g) << ',' << fmt(rec.o.prev_insulin_U) << ',' << fmt(rec.action_U)
        << ',' << fmt(rec.o_next.glucose_mgdl) << ',' << fmt(rec.o_next.meal_carbs_g) << ','
        << fmt(rec.o_next.prev_insulin_U) << ',' << fmt(rec.reward);
    if (rec.exercise_carbs_g) out << ',' << fmt(*rec.exercise_carbs_g);
    return out.str();
}

bool parse_record(const std::string& line, TransitionRecord& out, std::string& error) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    if (fields.size() != 10 && fields.size() != 11) {
        error = "expected 10 or 11 comma-separated fields, got " + std::to_string(fields.size());
        return false;
    }
    auto num = [&](int i, double& v) {
        try {
            std::size_t used = 0;
            v = std::stod(fields[i], &used);
            if (used != fields[i].size()) throw std::invalid_argument(fields[i]);
            return true;
        } catch (const std::exception&) {
            error = "field " + std::to_string(i + 1) + " is not a number: '" + fields[i] + "'";
            return false;
        }
    };
    double env_id = 0.0;
    TransitionRecord rec;
    if (!num(0, env_id) || !num(1, rec.timestamp_min) || !num(2, rec.o.glucose_mgdl) ||
        !num(3, rec.o.meal_carbs_g) || !num(4, rec.o.prev_insulin_U) || !num(5, rec.action_U) ||
        !num(6, rec.o_next.glucose_mgdl) || !num(7, rec.o_next.meal_carbs_g) ||
        !num(8, rec.o_next.prev_insulin_U) || !num(9, rec.reward)) {
        return false;
    }
    rec.env_id = static_cast<int>(env_id);
    if (fields.size() == 11) {
        double ex = 0.0;
        if (!num(10, ex)) return false;
        rec.exercise_carbs_g = ex;
    }
    if (rec.timestamp_min < 0) {
        error = "timestamp must be >= 0";
        return false;
    }
    if (rec.action_U < 0) {
        error = "insulin action must be >= 0";
        return false;
    }
    out = rec;
    return true;
}

Eigen::Vector3d obs_to_vector(const EnvObservation& obs) {
    return {obs.glucose_mgdl, obs.meal_carbs_g, obs.prev_insulin_U};
}

Transition record_to_transition(const TransitionRecord& rec) {
    Transition tr;
    tr.o = obs_to_vector(rec.o);
    tr.action = rec.action_U;
    tr.o_next = obs_to_vector(rec.o_next);
    tr.timestamp = rec.timestamp_min;
    return tr;
}

}  // namespace cprl
