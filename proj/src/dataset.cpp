#include "cprl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cprl/rng.hpp"
#include "cprl/simulator.hpp"

namespace cprl {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool record_order(const TransitionRecord& a, const TransitionRecord& b) {
    if (a.env_id != b.env_id) return a.env_id < b.env_id;
    return a.timestamp_min < b.timestamp_min;
}

}  // namespace

std::vector<int> OfflineDataset::env_ids() const {
    std::vector<int> ids;
    for (const auto& r : records) {
        if (std::find(ids.begin(), ids.end(), r.env_id) == ids.end()) ids.push_back(r.env_id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<TransitionRecord> OfflineDataset::for_env(int env_id) const {
    std::vector<TransitionRecord> out;
    for (const auto& r : records) {
        if (r.env_id == env_id) out.push_back(r);
    }
    return out;
}

MultiEnvData OfflineDataset::to_env_data() const {
    MultiEnvData data;
    const auto ids = env_ids();
    for (std::size_t label = 0; label < ids.size(); ++label) {
        EnvData env;
        env.env_label = static_cast<int>(label);
        for (const auto& r : records) {
            if (r.env_id == ids[label]) env.steps.push_back(record_to_transition(r));
        }
        data.push_back(std::move(env));
    }
    return data;
}

OfflineDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    OfflineDataset ds;
    std::string line;
    int line_no = 0;
    int total_rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        ++total_rows;
        TransitionRecord rec;
        std::string error;
        if (parse_record(line, rec, error)) {
            ds.records.push_back(rec);
        } else {
            ds.rejects.push_back({line_no, error, line});
        }
    }
    if (total_rows > 0 && ds.rejects.size() * 2 > static_cast<std::size_t>(total_rows)) {
        throw std::runtime_error("dataset " + path + ": " + std::to_string(ds.rejects.size()) +
                                 " of " + std::to_string(total_rows) + " rows rejected");
    }
    std::stable_sort(ds.records.begin(), ds.records.end(), record_order);
    return ds;
}

std::string serialize_records(const std::vector<TransitionRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records) out << format_record(r) << '\n';
    return out.str();
}

void save_dataset(const std::vector<TransitionRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    out << serialize_records(records);
}

namespace {

double* field_of(TransitionRecord& rec, const std::string& field) {
    if (field == "meal") return &rec.o.meal_carbs_g;
    if (field == "glucose") return &rec.o.glucose_mgdl;
    if (field == "insulin") return &rec.action_U;
    throw std::invalid_argument("value_error field must be meal, glucose or insulin");
}

// Seeded choice of k distinct rows out of n, ascending.
std::vector<std::size_t> pick_rows(std::size_t n, double frac, Rng& rng) {
    const auto k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(all[i], all[j]);
    }
    all.resize(std::min(k, n));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

CorruptedDataset inject_noise(const std::vector<TransitionRecord>& records,
                              const NoiseSpec& spec) {
    if (spec.missing_frac < 0 || spec.missing_frac >= 1 || spec.misplaced_frac < 0 ||
        spec.misplaced_frac >= 1) {
        throw std::invalid_argument("inject_noise: fractions must be in [0, 1)");
    }
    if (spec.shift_range_min <= 0) {
        throw std::invalid_argument("inject_noise: shift range must be positive");
    }
    CorruptedDataset out;
    const std::size_t n = records.size();
    Rng rng(spec.seed);

    Rng missing_rng = rng.split(1);
    Rng value_rng = rng.split(2);
    Rng misplaced_rng = rng.split(3);

    std::vector<bool> removed(n, false);
    for (std::size_t row : pick_rows(n, spec.missing_frac, missing_rng)) {
        removed[row] = true;
        CorruptionEvent ev;
        ev.kind = CorruptionEvent::Kind::Missing;
        ev.original_row = row;
        ev.original = records[row];
        out.manifest.events.push_back(std::move(ev));
    }

    // survivors keep their relative order
    std::vector<std::size_t> survivor_rows;
    for (std::size_t i = 0; i < n; ++i) {
        if (!removed[i]) {
            survivor_rows.push_back(i);
            out.records.push_back(records[i]);
        }
    }

    if (spec.value_error) {
        const auto& ve = *spec.value_error;
        if (ve.frac < 0 || ve.frac > 1) {
            throw std::invalid_argument("inject_noise: value-error fraction must be in [0, 1]");
        }
        for (std::size_t pos : pick_rows(out.records.size(), ve.frac, value_rng)) {
            const double factor = value_rng.uniform(ve.factor_lo, ve.factor_hi);
            CorruptionEvent ev;
            ev.kind = CorruptionEvent::Kind::Value;
            ev.original_row = survivor_rows[pos];
            ev.original = out.records[pos];
            ev.field = ve.field;
            ev.factor = factor;
            *field_of(out.records[pos], ve.field) *= factor;
            out.manifest.events.push_back(std::move(ev));
        }
    }

    for (std::size_t pos : pick_rows(out.records.size(), spec.misplaced_frac, misplaced_rng)) {
        CorruptionEvent ev;
        ev.kind = CorruptionEvent::Kind::Misplaced;
        ev.original_row = survivor_rows[pos];
        ev.original = out.records[pos];
        // beyond the anticipated horizon
        out.records[pos].timestamp_min =
            kEpisodeMinutes + misplaced_rng.uniform(0.0, spec.shift_range_min);
        out.manifest.events.push_back(std::move(ev));
    }
    return out;
}

std::vector<TransitionRecord> invert_noise(const std::vector<TransitionRecord>& corrupted,
                                           const CorruptionManifest& manifest) {
    // Which original rows were removed, in ascending order.
    std::vector<std::size_t> missing_rows;
    for (const auto& ev : manifest.events) {
        if (ev.kind == CorruptionEvent::Kind::Missing) missing_rows.push_back(ev.original_row);
    }
    std::sort(missing_rows.begin(), missing_rows.end());
    const std::size_t original_n = corrupted.size() + missing_rows.size();

    // survivor original rows -> position in the corrupted array
    std::vector<TransitionRecord> restored(original_n);
    std::vector<bool> filled(original_n, false);
    {
        std::size_t pos = 0;
        std::size_t next_missing = 0;
        for (std::size_t row = 0; row < original_n; ++row) {
            if (next_missing < missing_rows.size() && missing_rows[next_missing] == row) {
                ++next_missing;
                continue;
            }
            restored[row] = corrupted.at(pos++);
            filled[row] = true;
        }
    }
    // undo in-place mutations and reinsert missing rows
    for (const auto& ev : manifest.events) {
        restored[ev.original_row] = ev.original;
        filled[ev.original_row] = true;
    }
    for (bool f : filled) {
        if (!f) throw std::runtime_error("invert_noise: manifest does not cover all rows");
    }
    return restored;
}

namespace {

const char* kind_name(CorruptionEvent::Kind k) {
    switch (k) {
        case CorruptionEvent::Kind::Missing: return "missing";
        case CorruptionEvent::Kind::Value: return "value";
        case CorruptionEvent::Kind::Misplaced: return "misplaced";
    }
    return "?";
}

}  // namespace

void save_manifest(const CorruptionManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& ev : manifest.events) {
        out << kind_name(ev.kind) << '|' << ev.original_row << '|' << ev.field << '|'
            << fmt(ev.factor) << '|' << format_record(ev.original) << '\n';
    }
}

CorruptionManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    CorruptionManifest manifest;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> parts;
        std::string cur;
        for (char c : line) {
            if (c == '|') {
                parts.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        parts.push_back(cur);
        if (parts.size() != 5) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": bad format");
        }
        CorruptionEvent ev;
        if (parts[0] == "missing") {
            ev.kind = CorruptionEvent::Kind::Missing;
        } else if (parts[0] == "value") {
            ev.kind = CorruptionEvent::Kind::Value;
        } else if (parts[0] == "misplaced") {
            ev.kind = CorruptionEvent::Kind::Misplaced;
        } else {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": unknown kind '" + parts[0] + "'");
        }
        ev.original_row = std::stoull(parts[1]);
        ev.field = parts[2];
        ev.factor = std::stod(parts[3]);
        std::string error;
        if (!parse_record(parts[4], ev.original, error)) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + error);
        }
        manifest.events.push_back(std::move(ev));
    }
    return manifest;
}

Quartiles tukey_quartiles(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("tukey_quartiles: empty sample");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    auto median_of = [&](std::size_t lo, std::size_t hi) {  // [lo, hi)
        const std::size_t len = hi - lo;
        const std::size_t mid = lo + len / 2;
        return len % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    };
    Quartiles q;
    q.median = median_of(0, n);
    // inclusive halves: an odd sample keeps the median element in both
    const std::size_t half = n / 2 + (n % 2);
    q.q1 = median_of(0, half);
    q.q3 = median_of(n - half, n);
    return q;
}

IsfResult rough_isf(const std::vector<TransitionRecord>& env_records, IsfOptions options) {
    IsfResult result;
    std::vector<TransitionRecord> sorted = env_records;
    std::stable_sort(sorted.begin(), sorted.end(), record_order);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& rec = sorted[i];
        if (rec.action_U <= 0.0) {
            ++result.skipped_zero_insulin;
            continue;
        }
        // first record at or beyond the attribution window
        const double t_target = rec.timestamp_min + options.window_min;
        const TransitionRecord* later = nullptr;
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            if (sorted[j].env_id != rec.env_id) break;
            if (sorted[j].timestamp_min >= t_target) {
                later = &sorted[j];
                break;
            }
        }
        if (!later) continue;  // no window endpoint in the data
        const double drop = rec.o.glucose_mgdl - later->o.glucose_mgdl;
        const double net_carbs =
            rec.o.meal_carbs_g - rec.exercise_carbs_g.value_or(0.0);
        const double corrected = drop + options.carb_rise_mgdl_per_g * net_carbs;
        const double isf = corrected / rec.action_U;
        result.rough_isf.push_back(isf);
        result.carbs_per_unit.push_back(isf / options.carb_rise_mgdl_per_g);
    }
    const int env_id = sorted.empty() ? 0 : sorted.front().env_id;
    for (std::size_t start = 0; start < result.rough_isf.size();
         start += static_cast<std::size_t>(options.group_size)) {
        const std::size_t stop =
            std::min(result.rough_isf.size(), start + static_cast<std::size_t>(options.group_size));
        std::vector<double> group(result.rough_isf.begin() + static_cast<std::ptrdiff_t>(start),
                                  result.rough_isf.begin() + static_cast<std::ptrdiff_t>(stop));
        const Quartiles q = tukey_quartiles(group);
        IsfGroupStats stats;
        stats.env_id = env_id;
        stats.group_index = static_cast<int>(start / static_cast<std::size_t>(options.group_size));
        stats.n = static_cast<int>(group.size());
        stats.q1 = q.q1;
        stats.median = q.median;
        stats.q3 = q.q3;
        stats.min = *std::min_element(group.begin(), group.end());
        stats.max = *std::max_element(group.begin(), group.end());
        result.groups.push_back(stats);
    }
    return result;
}

std::string format_isf_report(const std::vector<IsfGroupStats>& groups) {
    std::ostringstream out;
    out << "env_id,group,q1,median,q3,min,max,n\n";
    for (const auto& g : groups) {
        out << g.env_id << ',' << g.group_index << ',' << fmt(g.q1) << ',' << fmt(g.median) << ','
            << fmt(g.q3) << ',' << fmt(g.min) << ',' << fmt(g.max) << ',' << g.n << '\n';
    }
    return out.str();
}

}  // namespace cprl
