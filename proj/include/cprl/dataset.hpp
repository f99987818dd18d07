#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cprl/record.hpp"

namespace cprl {

struct RejectedRow {
    int line = 0;  // 1-based
    std::string reason;
    std::string text;
};

// Records are kept in canonical (env_id, timestamp) order; malformed rows go
// to the reject report, never silently dropped.
struct OfflineDataset {
    std::vector<TransitionRecord> records;
    std::vector<RejectedRow> rejects;

    std::vector<int> env_ids() const;            // distinct, ascending
    std::vector<TransitionRecord> for_env(int env_id) const;
    MultiEnvData to_env_data() const;            // env labels by ascending env id
};

OfflineDataset load_dataset(const std::string& path);
void save_dataset(const std::vector<TransitionRecord>& records, const std::string& path);
std::string serialize_records(const std::vector<TransitionRecord>& records);

struct ValueErrorSpec {
    std::string field = "meal";  // meal | glucose | insulin
    double frac = 1.0;           // fraction of rows mutated
    double factor_lo = 1.0;      // multiplicative factor ~ U[lo, hi]
    double factor_hi = 1.0;
};

struct NoiseSpec {
    double missing_frac = 0.0;           // in [0, 1)
    std::optional<ValueErrorSpec> value_error;
    double misplaced_frac = 0.0;         // in [0, 1)
    double shift_range_min = 240.0;      // extra shift beyond the episode horizon
    std::uint64_t seed = 0;

    bool is_zero() const {
        return missing_frac == 0.0 && misplaced_frac == 0.0 && !value_error.has_value();
    }
};

struct CorruptionEvent {
    enum class Kind { Missing, Value, Misplaced };
    Kind kind;
    std::size_t original_row = 0;  // index in the pre-corruption record order
    TransitionRecord original;     // full pre-mutation record
    std::string field;             // value errors only
    double factor = 1.0;           // value errors only
};

struct CorruptionManifest {
    std::vector<CorruptionEvent> events;
};

struct CorruptedDataset {
    std::vector<TransitionRecord> records;  // survivor order preserved, not re-sorted
    CorruptionManifest manifest;
};

// Seeded-deterministic corruption: missing rows are removed, value errors
// multiply the chosen field, misplaced rows get timestamps beyond the episode
// horizon. The manifest lists every mutation.
CorruptedDataset inject_noise(const std::vector<TransitionRecord>& records,
                              const NoiseSpec& spec);

// Exact inverse of inject_noise given its manifest.
std::vector<TransitionRecord> invert_noise(const std::vector<TransitionRecord>& corrupted,
                                           const CorruptionManifest& manifest);

void save_manifest(const CorruptionManifest& manifest, const std::string& path);
CorruptionManifest load_manifest(const std::string& path);

struct IsfGroupStats {
    int env_id = 0;
    int group_index = 0;
    int n = 0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct IsfOptions {
    double window_min = 180.0;          // glucose-drop attribution window
    double carb_rise_mgdl_per_g = 3.3;  // meal correction factor
    int group_size = 20;
};

struct IsfResult {
    std::vector<double> rough_isf;        // per usable bolus record, time order
    std::vector<double> carbs_per_unit;   // rough_isf / carb_rise factor
    std::vector<IsfGroupStats> groups;
    int skipped_zero_insulin = 0;
};

// Rough ISF for one environment's records: meal-and-exercise-corrected
// glucose drop over the attribution window per unit of insulin, chunked into
// consecutive groups with Tukey-hinge quartiles.
IsfResult rough_isf(const std::vector<TransitionRecord>& env_records, IsfOptions options = {});

// Inclusive-median (Tukey hinge) quartiles of an unsorted sample.
struct Quartiles {
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
};
Quartiles tukey_quartiles(std::vector<double> values);

// One line per group: env_id,group,q1,median,q3,min,max,n
std::string format_isf_report(const std::vector<IsfGroupStats>& groups);

}  // namespace cprl
