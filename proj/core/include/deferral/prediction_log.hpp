#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace deferral {

enum class Task { classification, generation };
enum class Split { calibration, evaluation };

std::string_view to_string(Task task);
std::string_view to_string(Split split);
std::optional<Task> task_from_string(std::string_view name);
std::optional<Split> split_from_string(std::string_view name);

// One sampled alternative output. `output_key` is a caller-computed canonical
// key (e.g. a hash of the normalized output); equal keys count as agreement.
struct SampleRecord {
  std::vector<double> token_logprobs;  // nonempty, each finite and <= 0
  std::string output_key;              // nonempty

  bool operator==(const SampleRecord&) const = default;
};

// One logged model prediction. Exactly one of `logits` / `token_logprobs`
// is populated, matching `task`.
struct PredictionRecord {
  std::string id;
  Task task = Task::classification;
  std::optional<Split> split;
  std::vector<double> logits;          // classification only
  std::optional<int> predicted_class;  // defaulted to the smallest argmax index
  std::vector<double> token_logprobs;  // generation only, each <= 0
  std::vector<SampleRecord> samples;
  bool label_correct = false;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  // Pipeline augmentations (`score` / `apply` stages). Keyed by metric name.
  std::map<std::string, double> uncertainty_raw;
  std::map<std::string, double> uncertainty_confidence;
  std::optional<double> calibrated_probability;

  // meta["failure_mode"] when present and a string; used for tool routing.
  std::optional<std::string> failure_mode() const;

  bool operator==(const PredictionRecord&) const = default;
};

struct Dataset {
  std::vector<PredictionRecord> records;  // file order

  bool has_splits() const;    // any record carries a split field
  bool fully_split() const;   // every record carries a split field
  std::vector<std::string> calibration_ids() const;
  std::vector<std::string> evaluation_ids() const;
  std::vector<PredictionRecord> split_records(Split split) const;
};

// Parses one JSONL record line. `line_number` (1-based) is attached to error
// messages when > 0. The reserved header id "__header__" is rejected here;
// unknown fields are fatal.
PredictionRecord parse_record(std::string_view line, int line_number = 0);

// One JSON line, no trailing newline. parse_record(serialize_record(r)) == r.
std::string serialize_record(const PredictionRecord& record);

// Loads a JSONL log. Blank lines are ignored; an optional first line
// {"id":"__header__","version":1} is validated and dropped. Duplicate ids
// report both line numbers; a file with no data records is an error.
Dataset load_log(const std::string& path);

// Writes header line + one line per record, atomically.
void save_log(const Dataset& dataset, const std::string& path);

// Deterministic pseudo-random partition: round(fraction*N) records (clamped
// to [1, N-1]) become the calibration split. Records must not already carry
// split fields. Same (dataset, fraction, seed) gives the identical partition
// on every platform.
Dataset assign_splits(const Dataset& dataset, double calibration_fraction,
                      std::uint64_t seed);

struct ValidationReport {
  std::size_t n_records = 0;
  std::size_t n_classification = 0;
  std::size_t n_generation = 0;
  std::size_t n_calibration = 0;
  std::size_t n_evaluation = 0;
  std::size_t n_unsplit = 0;
  std::size_t n_correct = 0;
  double label_balance = 0.0;        // n_correct / n_records
  double sample_availability = 0.0;  // fraction of records with K >= 2 samples
  std::vector<std::string> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
  nlohmann::ordered_json to_json() const;
};

// Never throws on content: invariant violations land in the report.
ValidationReport validate_dataset(const Dataset& dataset);

}  // namespace deferral
