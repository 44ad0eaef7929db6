#include "deferral/prediction_log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "deferral/errors.hpp"
#include "deferral/io.hpp"
#include "deferral/version.hpp"

namespace deferral {

namespace {

constexpr std::string_view kHeaderId = "__header__";

const char* const kKnownFields[] = {
    "id",      "task",          "split", "logits",      "predicted_class",
    "token_logprobs", "samples", "label_correct", "meta", "uncertainty",
    "calibrated_probability"};

[[noreturn]] void fail(int line, const std::string& msg) { throw ParseError(msg, line); }

double require_finite_number(const nlohmann::json& v, const std::string& where, int line) {
  if (!v.is_number()) fail(line, where + " is not a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(line, where + " is not finite");
  return d;
}

std::vector<double> number_array(const nlohmann::json& v, const std::string& field, int line) {
  if (!v.is_array()) fail(line, "field '" + field + "' is not an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(
        require_finite_number(v[i], field + "[" + std::to_string(i) + "]", line));
  }
  return out;
}

std::map<std::string, double> score_map(const nlohmann::json& v, const std::string& field,
                                        int line) {
  if (!v.is_object()) fail(line, "field '" + field + "' is not an object");
  std::map<std::string, double> out;
  for (const auto& [key, value] : v.items()) {
    if (key.empty()) fail(line, "empty metric name in '" + field + "'");
    out[key] = require_finite_number(value, field + "." + key, line);
  }
  return out;
}

int smallest_argmax(const std::vector<double>& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

// Uniform integer in [0, n) from the raw 64-bit stream, by rejection; keeps
// assign_splits byte-identical across standard libraries.
std::uint64_t bounded_uniform(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

}  // namespace

std::string_view to_string(Task task) {
  return task == Task::classification ? "classification" : "generation";
}

std::string_view to_string(Split split) {
  return split == Split::calibration ? "calibration" : "evaluation";
}

std::optional<Task> task_from_string(std::string_view name) {
  if (name == "classification") return Task::classification;
  if (name == "generation") return Task::generation;
  return std::nullopt;
}

std::optional<Split> split_from_string(std::string_view name) {
  if (name == "calibration") return Split::calibration;
  if (name == "evaluation") return Split::evaluation;
  return std::nullopt;
}

std::optional<std::string> PredictionRecord::failure_mode() const {
  const auto it = meta.find("failure_mode");
  if (it == meta.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

bool Dataset::has_splits() const {
  return std::any_of(records.begin(), records.end(),
                     [](const PredictionRecord& r) { return r.split.has_value(); });
}

bool Dataset::fully_split() const {
  return std::all_of(records.begin(), records.end(),
                     [](const PredictionRecord& r) { return r.split.has_value(); });
}

std::vector<std::string> Dataset::calibration_ids() const {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (r.split == Split::calibration) out.push_back(r.id);
  return out;
}

std::vector<std::string> Dataset::evaluation_ids() const {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (r.split == Split::evaluation) out.push_back(r.id);
  return out;
}

std::vector<PredictionRecord> Dataset::split_records(Split split) const {
  std::vector<PredictionRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

PredictionRecord parse_record(std::string_view line, int line_number) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(line_number, "record is not a JSON object");

  PredictionRecord rec;

  if (!doc.contains("id") || !doc["id"].is_string())
    fail(line_number, "missing or non-string field 'id'");
  rec.id = doc["id"].get<std::string>();
  if (rec.id.empty()) fail(line_number, "field 'id' is empty");
  if (rec.id == kHeaderId)
    fail(line_number, "reserved id '__header__' used as a data id");

  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (std::find(std::begin(kKnownFields), std::end(kKnownFields), key) ==
        std::end(kKnownFields)) {
      fail(line_number, "unknown field '" + key + "'");
    }
  }

  if (!doc.contains("task") || !doc["task"].is_string())
    fail(line_number, "missing or non-string field 'task'");
  const auto task = task_from_string(doc["task"].get<std::string>());
  if (!task)
    fail(line_number, "unknown task '" + doc["task"].get<std::string>() + "'");
  rec.task = *task;

  if (doc.contains("split")) {
    if (!doc["split"].is_string()) fail(line_number, "field 'split' is not a string");
    const auto split = split_from_string(doc["split"].get<std::string>());
    if (!split)
      fail(line_number, "unknown split '" + doc["split"].get<std::string>() + "'");
    rec.split = *split;
  }

  const bool has_logits = doc.contains("logits");
  const bool has_token_lps = doc.contains("token_logprobs");
  if (rec.task == Task::classification) {
    if (!has_logits) fail(line_number, "classification record without 'logits'");
    if (has_token_lps)
      fail(line_number, "'token_logprobs' present on a classification record");
    rec.logits = number_array(doc["logits"], "logits", line_number);
    if (rec.logits.empty()) fail(line_number, "field 'logits' is empty");
  } else {
    if (!has_token_lps) fail(line_number, "generation record without 'token_logprobs'");
    if (has_logits) fail(line_number, "'logits' present on a generation record");
    rec.token_logprobs = number_array(doc["token_logprobs"], "token_logprobs", line_number);
    if (rec.token_logprobs.empty()) fail(line_number, "field 'token_logprobs' is empty");
    for (std::size_t i = 0; i < rec.token_logprobs.size(); ++i) {
      if (rec.token_logprobs[i] > 0.0)
        fail(line_number, "token_logprobs[" + std::to_string(i) + "] > 0");
    }
  }

  if (doc.contains("predicted_class")) {
    if (rec.task != Task::classification)
      fail(line_number, "'predicted_class' present on a generation record");
    if (!doc["predicted_class"].is_number_integer())
      fail(line_number, "field 'predicted_class' is not an integer");
    const auto pc = doc["predicted_class"].get<long long>();
    if (pc < 0 || pc >= static_cast<long long>(rec.logits.size()))
      fail(line_number, "predicted_class " + std::to_string(pc) + " out of range [0, " +
                            std::to_string(rec.logits.size()) + ")");
    rec.predicted_class = static_cast<int>(pc);
  } else if (rec.task == Task::classification) {
    rec.predicted_class = smallest_argmax(rec.logits);
  }

  if (doc.contains("samples")) {
    if (!doc["samples"].is_array()) fail(line_number, "field 'samples' is not an array");
    for (std::size_t k = 0; k < doc["samples"].size(); ++k) {
      const auto& s = doc["samples"][k];
      const std::string where = "samples[" + std::to_string(k) + "]";
      if (!s.is_object()) fail(line_number, where + " is not an object");
      for (const auto& [key, value] : s.items()) {
        (void)value;
        if (key != "token_logprobs" && key != "output_key")
          fail(line_number, "unknown field '" + key + "' in " + where);
      }
      SampleRecord sample;
      if (!s.contains("token_logprobs"))
        fail(line_number, where + " missing 'token_logprobs'");
      sample.token_logprobs =
          number_array(s["token_logprobs"], where + ".token_logprobs", line_number);
      if (sample.token_logprobs.empty())
        fail(line_number, where + ".token_logprobs is empty");
      for (std::size_t i = 0; i < sample.token_logprobs.size(); ++i) {
        if (sample.token_logprobs[i] > 0.0)
          fail(line_number,
               where + ".token_logprobs[" + std::to_string(i) + "] > 0");
      }
      if (!s.contains("output_key") || !s["output_key"].is_string())
        fail(line_number, where + " missing or non-string 'output_key'");
      sample.output_key = s["output_key"].get<std::string>();
      if (sample.output_key.empty()) fail(line_number, where + ".output_key is empty");
      rec.samples.push_back(std::move(sample));
    }
  }

  if (!doc.contains("label_correct") || !doc["label_correct"].is_boolean())
    fail(line_number, "missing or non-boolean field 'label_correct'");
  rec.label_correct = doc["label_correct"].get<bool>();

  if (doc.contains("meta")) {
    if (!doc["meta"].is_object()) fail(line_number, "field 'meta' is not an object");
    rec.meta = doc["meta"];
  }

  if (doc.contains("uncertainty")) {
    const auto& u = doc["uncertainty"];
    if (!u.is_object() || !u.contains("raw") || !u.contains("confidence"))
      fail(line_number, "field 'uncertainty' must carry 'raw' and 'confidence'");
    rec.uncertainty_raw = score_map(u["raw"], "uncertainty.raw", line_number);
    rec.uncertainty_confidence =
        score_map(u["confidence"], "uncertainty.confidence", line_number);
    if (rec.uncertainty_raw.size() != rec.uncertainty_confidence.size() ||
        !std::equal(rec.uncertainty_raw.begin(), rec.uncertainty_raw.end(),
                    rec.uncertainty_confidence.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; }))
      fail(line_number, "uncertainty raw/confidence key sets differ");
  }

  if (doc.contains("calibrated_probability")) {
    const double p = require_finite_number(doc["calibrated_probability"],
                                           "calibrated_probability", line_number);
    if (p < 0.0 || p > 1.0)
      fail(line_number, "calibrated_probability outside [0,1]");
    rec.calibrated_probability = p;
  }

  return rec;
}

std::string serialize_record(const PredictionRecord& record) {
  nlohmann::ordered_json doc;
  doc["id"] = record.id;
  doc["task"] = to_string(record.task);
  if (record.split) doc["split"] = to_string(*record.split);
  if (record.task == Task::classification) {
    doc["logits"] = record.logits;
    if (record.predicted_class) doc["predicted_class"] = *record.predicted_class;
  } else {
    doc["token_logprobs"] = record.token_logprobs;
  }
  if (!record.samples.empty()) {
    auto samples = nlohmann::ordered_json::array();
    for (const auto& s : record.samples) {
      nlohmann::ordered_json sj;
      sj["token_logprobs"] = s.token_logprobs;
      sj["output_key"] = s.output_key;
      samples.push_back(std::move(sj));
    }
    doc["samples"] = std::move(samples);
  }
  doc["label_correct"] = record.label_correct;
  if (!record.meta.empty()) doc["meta"] = record.meta;
  if (!record.uncertainty_raw.empty() || !record.uncertainty_confidence.empty()) {
    doc["uncertainty"] = {{"raw", record.uncertainty_raw},
                          {"confidence", record.uncertainty_confidence}};
  }
  if (record.calibrated_probability)
    doc["calibrated_probability"] = *record.calibrated_probability;
  return doc.dump();
}

Dataset load_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  Dataset ds;
  std::unordered_map<std::string, int> first_line_of_id;
  std::string line;
  int line_no = 0;
  bool seen_content = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    if (!seen_content) {
      seen_content = true;
      nlohmann::json probe;
      try {
        probe = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        probe = nullptr;
      }
      if (probe.is_object() && probe.contains("id") && probe["id"].is_string() &&
          probe["id"].get<std::string>() == kHeaderId) {
        if (!probe.contains("version") || !probe["version"].is_number_integer())
          throw ParseError("header line missing integer 'version'", line_no);
        const auto version = probe["version"].get<long long>();
        if (version != kFormatVersion)
          throw ParseError("unsupported log version " + std::to_string(version),
                           line_no);
        for (const auto& [key, value] : probe.items()) {
          (void)value;
          if (key != "id" && key != "version")
            throw ParseError("unknown header field '" + key + "'", line_no);
        }
        continue;
      }
    }

    PredictionRecord rec = parse_record(line, line_no);
    const auto [it, inserted] = first_line_of_id.emplace(rec.id, line_no);
    if (!inserted) {
      throw ParseError("duplicate id '" + rec.id + "' (lines " +
                           std::to_string(it->second) + " and " +
                           std::to_string(line_no) + ")",
                       line_no);
    }
    ds.records.push_back(std::move(rec));
  }
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  if (ds.records.empty()) throw ParseError("empty dataset in '" + path + "'");
  return ds;
}

void save_log(const Dataset& dataset, const std::string& path) {
  std::string out;
  out += "{\"id\":\"__header__\",\"version\":" + std::to_string(kFormatVersion) + "}\n";
  for (const auto& rec : dataset.records) {
    out += serialize_record(rec);
    out += '\n';
  }
  write_file_atomic(path, out);
}

Dataset assign_splits(const Dataset& dataset, double calibration_fraction,
                      std::uint64_t seed) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0))
    throw InputError("calibration fraction must be in (0,1)");
  for (const auto& rec : dataset.records) {
    if (rec.split)
      throw InputError("record '" + rec.id +
                       "' already carries a split field; refusing to mix explicit "
                       "and assigned splits");
  }
  const std::size_t n = dataset.records.size();
  if (n < 2) throw InputError("need at least 2 records to split");

  auto n_cal = static_cast<std::size_t>(
      std::llround(calibration_fraction * static_cast<double>(n)));
  n_cal = std::clamp<std::size_t>(n_cal, 1, n - 1);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(bounded_uniform(rng, i + 1));
    std::swap(order[i], order[j]);
  }

  Dataset out = dataset;
  for (std::size_t k = 0; k < n; ++k) {
    out.records[order[k]].split =
        k < n_cal ? Split::calibration : Split::evaluation;
  }
  return out;
}

ValidationReport validate_dataset(const Dataset& dataset) {
  ValidationReport rep;
  rep.n_records = dataset.records.size();

  std::unordered_set<std::string> seen;
  std::size_t with_usable_samples = 0;

  for (const auto& rec : dataset.records) {
    if (!seen.insert(rec.id).second)
      rep.violations.push_back("record '" + rec.id + "': duplicate id");

    if (rec.task == Task::classification) {
      ++rep.n_classification;
      if (rec.logits.size() < 2)
        rep.violations.push_back("record '" + rec.id + "': logits length " +
                                 std::to_string(rec.logits.size()) + " (C < 2)");
      if (rec.predicted_class &&
          (*rec.predicted_class < 0 ||
           *rec.predicted_class >= static_cast<int>(rec.logits.size())))
        rep.violations.push_back("record '" + rec.id + "': predicted_class out of range");
    } else {
      ++rep.n_generation;
      if (rec.token_logprobs.empty())
        rep.violations.push_back("record '" + rec.id + "': empty token_logprobs");
      for (double lp : rec.token_logprobs) {
        if (lp > 0.0) {
          rep.violations.push_back("record '" + rec.id + "': token log-prob > 0");
          break;
        }
      }
    }

    if (!rec.samples.empty() && rec.samples.size() < 2)
      rep.violations.push_back("record '" + rec.id + "': only 1 sample (K < 2)");
    if (rec.samples.size() >= 2) ++with_usable_samples;

    if (!rec.split) ++rep.n_unsplit;
    else if (*rec.split == Split::calibration) ++rep.n_calibration;
    else ++rep.n_evaluation;

    if (rec.label_correct) ++rep.n_correct;
  }

  if (rep.n_records > 0) {
    rep.label_balance = static_cast<double>(rep.n_correct) /
                        static_cast<double>(rep.n_records);
    rep.sample_availability = static_cast<double>(with_usable_samples) /
                              static_cast<double>(rep.n_records);
    if (rep.n_correct == rep.n_records)
      rep.warnings.push_back("degenerate labels: all correct");
    if (rep.n_correct == 0)
      rep.warnings.push_back("degenerate labels: all incorrect");
  }
  return rep;
}

nlohmann::ordered_json ValidationReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["n_records"] = n_records;
  doc["counts"] = {{"classification", n_classification},
                   {"generation", n_generation},
                   {"calibration", n_calibration},
                   {"evaluation", n_evaluation},
                   {"unsplit", n_unsplit}};
  doc["label_balance"] = label_balance;
  doc["sample_availability"] = sample_availability;
  doc["violations"] = violations;
  doc["warnings"] = warnings;
  doc["ok"] = ok();
  return doc;
}

}  // namespace deferral
