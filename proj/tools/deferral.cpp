// deferral: calibration and selective-abstention pipeline for prediction logs.
//
// Subcommands: validate | score | fit | apply | eval | decide | recover | report
// Exit codes: 0 success, 1 input/validation error, 2 internal invariant breach.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deferral/abstain.hpp"
#include "deferral/calibrate.hpp"
#include "deferral/errors.hpp"
#include "deferral/eval_metrics.hpp"
#include "deferral/io.hpp"
#include "deferral/prediction_log.hpp"
#include "deferral/recover.hpp"
#include "deferral/uncertainty.hpp"
#include "deferral/version.hpp"

namespace {

using nlohmann::ordered_json;

// Every subcommand echoes its parsed configuration to stderr as one JSON
// line, so artifacts can always be tied back to the exact invocation.
void echo_config(const ordered_json& config) {
  std::cerr << config.dump() << "\n";
}

void emit(const std::string& output_path, const std::string& content) {
  if (output_path.empty()) {
    std::cout << content;
  } else {
    deferral::write_file_atomic(output_path, content);
  }
}

deferral::MetricSelector parse_metric_selector(const std::string& spec) {
  if (spec.empty() || spec == "all-applicable")
    return deferral::MetricSelector::all_applicable();
  std::set<deferral::MetricId> ids;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string name =
        spec.substr(start, comma == std::string::npos ? spec.size() - start
                                                      : comma - start);
    if (!name.empty()) {
      const auto id = deferral::metric_from_name(name);
      if (!id) throw deferral::InputError("unknown metric '" + name + "'");
      ids.insert(*id);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (ids.empty()) throw deferral::InputError("empty metric list");
  return deferral::MetricSelector::of(std::move(ids));
}

deferral::MetricId parse_single_metric(const std::string& name) {
  const auto id = deferral::metric_from_name(name);
  if (!id) throw deferral::InputError("unknown metric '" + name + "'");
  return *id;
}

deferral::PolicySpec parse_policy(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw deferral::InputError("policy must look like coverage:0.8, risk:0.05 or "
                               "threshold:0.7");
  const auto mode = deferral::policy_mode_from_string(spec.substr(0, colon));
  if (!mode)
    throw deferral::InputError("unknown policy mode '" + spec.substr(0, colon) + "'");
  deferral::PolicySpec out;
  out.mode = *mode;
  try {
    std::size_t used = 0;
    out.target = std::stod(spec.substr(colon + 1), &used);
    if (used != spec.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw deferral::InputError("policy target '" + spec.substr(colon + 1) +
                               "' is not a number");
  }
  out.validate();
  return out;
}

// Splits for fitting: explicit split fields win; otherwise a fraction+seed
// assignment is required.
deferral::Dataset ensure_splits(deferral::Dataset dataset, double fraction,
                                std::uint64_t seed, bool fraction_given) {
  if (dataset.has_splits()) {
    if (fraction_given)
      throw deferral::InputError(
          "--calibration-fraction given but the log already carries split fields");
    if (!dataset.fully_split())
      throw deferral::InputError("log mixes split-annotated and bare records");
    if (dataset.calibration_ids().empty() || dataset.evaluation_ids().empty())
      throw deferral::InputError("both splits must be nonempty before fitting");
    return dataset;
  }
  if (!fraction_given)
    throw deferral::InputError(
        "log has no split fields; pass --calibration-fraction (with --seed) "
        "to assign them");
  return deferral::assign_splits(dataset, fraction, seed);
}

struct MetricColumn {
  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> ids;
};

// Stored confidence value when the log was scored, else computed on the fly.
double confidence_of(const deferral::PredictionRecord& rec,
                     deferral::MetricId metric, double tau) {
  const auto it =
      rec.uncertainty_confidence.find(std::string(deferral::metric_name(metric)));
  if (it != rec.uncertainty_confidence.end()) return it->second;
  const auto set =
      deferral::score_record(rec, deferral::MetricSelector::of({metric}), tau);
  return set.confidence.at(metric);
}

// Confidence values of one metric over every record it applies to.
MetricColumn metric_column(const std::vector<deferral::PredictionRecord>& records,
                           deferral::MetricId metric, double tau) {
  MetricColumn col;
  for (const auto& rec : records) {
    if (!deferral::metric_applicable(metric, rec)) continue;
    col.values.push_back(confidence_of(rec, metric, tau));
    col.labels.push_back(rec.label_correct ? 1 : 0);
    col.ids.push_back(rec.id);
  }
  return col;
}

int cmd_validate(const std::string& input, const std::string& output) {
  echo_config({{"subcommand", "validate"}, {"input", input}, {"output", output}});
  const auto dataset = deferral::load_log(input);
  const auto report = deferral::validate_dataset(dataset);
  emit(output, report.to_json().dump(2) + "\n");
  if (!report.ok()) {
    std::cerr << "error: dataset has " << report.violations.size()
              << " invariant violation(s)\n";
    return 1;
  }
  return 0;
}

int cmd_score(const std::string& input, const std::string& output,
              const std::string& metrics, double tau) {
  echo_config({{"subcommand", "score"},
               {"input", input},
               {"output", output},
               {"metrics", metrics.empty() ? "all-applicable" : metrics},
               {"tau", tau}});
  const auto selector = parse_metric_selector(metrics);
  auto dataset = deferral::load_log(input);
  for (auto& rec : dataset.records) {
    const auto scores = deferral::score_record(rec, selector, tau);
    rec.uncertainty_raw = scores.raw_by_name();
    rec.uncertainty_confidence = scores.confidence_by_name();
  }
  deferral::save_log(dataset, output);
  return 0;
}

int cmd_fit(const std::string& input, const std::string& output,
            const std::string& method, const std::string& metric,
            const std::string& neg_weight, double lambda, double tau,
            double fraction, bool fraction_given, std::uint64_t seed) {
  echo_config({{"subcommand", "fit"},
               {"input", input},
               {"output", output},
               {"method", method},
               {"metric", metric},
               {"neg_weight", neg_weight},
               {"lambda", lambda},
               {"tau", tau},
               {"calibration_fraction", fraction_given ? ordered_json(fraction)
                                                       : ordered_json(nullptr)},
               {"seed", seed}});

  const auto kind = deferral::calibrator_kind_from_string(method);
  if (!kind) throw deferral::InputError("unknown fit method '" + method + "'");

  auto dataset = ensure_splits(deferral::load_log(input), fraction, seed,
                               fraction_given);
  const auto cal_records = dataset.split_records(deferral::Split::calibration);

  deferral::Calibrator calibrator;
  deferral::FitDiagnostics diagnostics;

  switch (*kind) {
    case deferral::CalibratorKind::temperature: {
      auto [c, d] = deferral::fit_temperature(cal_records);
      calibrator = std::move(c);
      diagnostics = d;
      break;
    }
    case deferral::CalibratorKind::platt:
    case deferral::CalibratorKind::isotonic:
    case deferral::CalibratorKind::weighted_platt: {
      if (metric.empty())
        throw deferral::InputError("--metric is required for method " + method);
      const auto id = parse_single_metric(metric);
      const auto col = metric_column(cal_records, id, tau);
      if (*kind == deferral::CalibratorKind::platt) {
        auto [c, d] = deferral::fit_platt(col.values, col.labels, metric);
        calibrator = std::move(c);
        diagnostics = d;
      } else if (*kind == deferral::CalibratorKind::weighted_platt) {
        double w = deferral::kNegWeightAuto;
        if (!neg_weight.empty() && neg_weight != "auto") {
          try {
            w = std::stod(neg_weight);
          } catch (const std::exception&) {
            throw deferral::InputError("--neg-weight must be a number or 'auto'");
          }
        }
        auto [c, d] = deferral::fit_weighted_platt(col.values, col.labels, w, metric);
        calibrator = std::move(c);
        diagnostics = d;
      } else {
        calibrator = deferral::fit_isotonic(col.values, col.labels, metric);
        // Isotonic is a direct projection; report its squared error.
        double sse = 0.0;
        const auto& params = std::get<deferral::IsotonicParams>(calibrator.params);
        for (std::size_t i = 0; i < col.values.size(); ++i) {
          const double fitted =
              deferral::interpolate_knots(params.knots, col.values[i]);
          const double d = fitted - (col.labels[i] != 0 ? 1.0 : 0.0);
          sse += d * d;
        }
        diagnostics = {0, sse, 0.0, true};
      }
      break;
    }
    case deferral::CalibratorKind::logit_feature: {
      auto [c, d] = deferral::fit_logit_feature(cal_records, lambda);
      calibrator = std::move(c);
      diagnostics = d;
      break;
    }
    case deferral::CalibratorKind::variance_aware: {
      calibrator = deferral::fit_variance_aware(cal_records);
      double sse = 0.0;
      const auto& params = std::get<deferral::IsotonicParams>(calibrator.params);
      for (const auto& rec : cal_records) {
        if (rec.task != deferral::Task::generation) continue;
        const auto set = deferral::sampling_metrics(rec.samples);
        const double fitted = deferral::interpolate_knots(
            params.knots,
            set.confidence.at(deferral::MetricId::sample_logprob_dispersion));
        const double d = fitted - (rec.label_correct ? 1.0 : 0.0);
        sse += d * d;
      }
      diagnostics = {0, sse, 0.0, true};
      break;
    }
  }

  deferral::save_calibrator(calibrator, output);
  std::cerr << diagnostics.to_json().dump() << "\n";
  return 0;
}

int cmd_apply(const std::string& input, const std::string& calibrator_path,
              const std::string& output) {
  echo_config({{"subcommand", "apply"},
               {"input", input},
               {"calibrator", calibrator_path},
               {"output", output}});
  const auto calibrator = deferral::load_calibrator(calibrator_path);
  auto dataset = deferral::load_log(input);
  for (auto& rec : dataset.records)
    rec.calibrated_probability = deferral::apply_calibrator(calibrator, rec);
  deferral::save_log(dataset, output);
  return 0;
}

int cmd_eval(const std::string& input, const std::string& output,
             const std::string& csv_path, const std::string& method,
             const std::string& probs_from, const std::string& rank_metric,
             int bins, const std::string& scheme_name,
             std::vector<double> coverages, const std::string& split_name,
             double tau) {
  echo_config({{"subcommand", "eval"},
               {"input", input},
               {"output", output},
               {"csv", csv_path},
               {"method", method},
               {"probs_from", probs_from},
               {"rank_metric", rank_metric},
               {"bins", bins},
               {"scheme", scheme_name},
               {"coverages", coverages},
               {"split", split_name}});

  const auto scheme = deferral::bin_scheme_from_string(scheme_name);
  if (!scheme) throw deferral::InputError("unknown scheme '" + scheme_name + "'");
  if (bins < 1) throw deferral::InputError("--bins must be >= 1");

  auto dataset = deferral::load_log(input);
  std::vector<deferral::PredictionRecord> records;
  if (split_name == "all") {
    records = dataset.records;
  } else {
    const auto split = deferral::split_from_string(split_name);
    if (!split) throw deferral::InputError("unknown split '" + split_name + "'");
    records = dataset.split_records(*split);
    if (records.empty())
      throw deferral::InputError("no records in split '" + split_name + "'");
  }

  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> ids;
  std::string provenance;
  if (probs_from == "calibrated") {
    provenance = "calibrated_probability";
    for (const auto& rec : records) {
      if (!rec.calibrated_probability)
        throw deferral::InputError("record '" + rec.id +
                                   "' has no calibrated_probability; run `apply` "
                                   "first or use --probs-from metric:<name>");
      probs.push_back(*rec.calibrated_probability);
      labels.push_back(rec.label_correct ? 1 : 0);
      ids.push_back(rec.id);
    }
  } else if (probs_from.rfind("metric:", 0) == 0) {
    const auto id = parse_single_metric(probs_from.substr(7));
    provenance = probs_from.substr(7);
    for (const auto& rec : records) {
      if (!deferral::metric_applicable(id, rec))
        throw deferral::InputError("metric " + provenance +
                                   " inapplicable to record '" + rec.id + "'");
      const double value = confidence_of(rec, id, tau);
      if (value < 0.0 || value > 1.0)
        throw deferral::InputError(
            "metric " + provenance + " value " + deferral::format_double(value) +
            " of record '" + rec.id + "' is not a probability; calibrate it first");
      probs.push_back(value);
      labels.push_back(rec.label_correct ? 1 : 0);
      ids.push_back(rec.id);
    }
  } else {
    throw deferral::InputError("--probs-from must be 'calibrated' or 'metric:<name>'");
  }

  std::vector<double> confidence = probs;
  if (!rank_metric.empty()) {
    const auto id = parse_single_metric(rank_metric);
    confidence.clear();
    for (const auto& rec : records) {
      if (!deferral::metric_applicable(id, rec))
        throw deferral::InputError("metric " + rank_metric +
                                   " inapplicable to record '" + rec.id + "'");
      confidence.push_back(confidence_of(rec, id, tau));
    }
    provenance += "|ranked_by:" + rank_metric;
  }

  const auto report = deferral::build_report(
      method.empty() ? provenance : method, provenance, probs, confidence, labels,
      ids, coverages, bins, *scheme);

  emit(output, report.to_json().dump(2) + "\n");
  if (!csv_path.empty())
    deferral::write_file_atomic(csv_path,
                                report.csv_header() + "\n" + report.csv_row() + "\n");
  return 0;
}

int cmd_decide(const std::string& input, const std::string& output,
               const std::string& policy_spec, const std::string& calibration_path,
               double fraction, bool fraction_given, std::uint64_t seed) {
  echo_config({{"subcommand", "decide"},
               {"input", input},
               {"output", output},
               {"policy", policy_spec},
               {"calibration", calibration_path},
               {"calibration_fraction", fraction_given ? ordered_json(fraction)
                                                       : ordered_json(nullptr)},
               {"seed", seed}});

  const auto spec = parse_policy(policy_spec);
  auto dataset = deferral::load_log(input);

  // The policy is fitted on an explicit calibration file when given, else on
  // the input's calibration split; threshold mode needs no data at all.
  std::vector<double> cal_probs;
  std::vector<std::uint8_t> cal_labels;
  auto collect = [&](const std::vector<deferral::PredictionRecord>& records) {
    for (const auto& rec : records) {
      if (!rec.calibrated_probability)
        throw deferral::InputError("calibration record '" + rec.id +
                                   "' has no calibrated_probability; run `apply` "
                                   "first");
      cal_probs.push_back(*rec.calibrated_probability);
      cal_labels.push_back(rec.label_correct ? 1 : 0);
    }
  };
  if (!calibration_path.empty()) {
    collect(deferral::load_log(calibration_path).records);
  } else if (spec.mode != deferral::PolicyMode::threshold) {
    auto with_splits = ensure_splits(dataset, fraction, seed, fraction_given);
    collect(with_splits.split_records(deferral::Split::calibration));
  }

  const auto policy = deferral::fit_policy(cal_probs, cal_labels, spec);
  if (!policy.warning.empty()) std::cerr << "warning: " << policy.warning << "\n";

  std::vector<deferral::ScoredRecord> scored;
  scored.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    if (!rec.calibrated_probability)
      throw deferral::InputError("record '" + rec.id +
                                 "' has no calibrated_probability; run `apply` first");
    scored.push_back({rec.id, *rec.calibrated_probability});
  }
  const auto batch = deferral::decide_batch(policy, scored);

  std::string out;
  for (const auto& d : batch.decisions) {
    ordered_json line;
    line["id"] = d.record_id;
    line["probability"] = d.calibrated_probability;
    line["action"] = deferral::to_string(d.action);
    out += line.dump();
    out += '\n';
  }
  emit(output, out);

  ordered_json summary;
  summary["policy"] = policy.to_json();
  summary["records"] = batch.decisions.size();
  summary["achieved_coverage"] = batch.achieved_coverage;
  std::cerr << summary.dump() << "\n";
  return 0;
}

int cmd_recover(const std::string& input, const std::string& decisions_path,
                const std::string& registry_path, const std::string& output,
                int jobs) {
  echo_config({{"subcommand", "recover"},
               {"input", input},
               {"decisions", decisions_path},
               {"registry", registry_path},
               {"output", output},
               {"jobs", jobs}});
  if (jobs < 1) throw deferral::InputError("--jobs must be >= 1");

  const auto dataset = deferral::load_log(input);
  const auto registry = deferral::load_registry(registry_path);

  std::vector<deferral::Decision> decisions;
  {
    const std::string content = deferral::read_file(decisions_path);
    std::size_t start = 0;
    int line_no = 0;
    while (start < content.size()) {
      auto end = content.find('\n', start);
      if (end == std::string::npos) end = content.size();
      const std::string line = content.substr(start, end - start);
      start = end + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw deferral::ParseError(std::string("malformed decision: ") + e.what(),
                                   line_no);
      }
      deferral::Decision d;
      try {
        d.record_id = doc.at("id").get<std::string>();
        d.calibrated_probability = doc.at("probability").get<double>();
        const auto action = doc.at("action").get<std::string>();
        if (action == "accept") d.action = deferral::Action::accept;
        else if (action == "abstain") d.action = deferral::Action::abstain;
        else throw deferral::ParseError("unknown action '" + action + "'", line_no);
      } catch (const nlohmann::json::exception& e) {
        throw deferral::ParseError(std::string("malformed decision: ") + e.what(),
                                   line_no);
      }
      decisions.push_back(std::move(d));
    }
  }

  const auto outcomes =
      deferral::recover_batch(decisions, dataset.records, registry, jobs);

  std::string out;
  std::size_t accepted = 0, recovered = 0, definitive = 0;
  for (const auto& o : outcomes) {
    out += o.to_json().dump();
    out += '\n';
    switch (o.state) {
      case deferral::OutcomeState::accepted_by_model: ++accepted; break;
      case deferral::OutcomeState::recovered: ++recovered; break;
      case deferral::OutcomeState::abstained_definitively: ++definitive; break;
    }
  }
  emit(output, out);

  ordered_json summary;
  summary["accepted_by_model"] = accepted;
  summary["recovered"] = recovered;
  summary["abstained_definitively"] = definitive;
  std::cerr << summary.dump() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format,
               const std::string& output) {
  echo_config({{"subcommand", "report"},
               {"inputs", inputs},
               {"format", format},
               {"output", output}});
  if (inputs.empty()) throw deferral::InputError("need at least one report file");
  if (format != "table" && format != "csv" && format != "json")
    throw deferral::InputError("--format must be table, csv or json");

  std::vector<deferral::EvaluationReport> reports;
  for (const auto& path : inputs) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(deferral::read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw deferral::ParseError("malformed report '" + path + "': " + e.what());
    }
    reports.push_back(deferral::EvaluationReport::from_json(doc));
  }

  for (const auto& rep : reports) {
    if (rep.selective.size() != reports.front().selective.size())
      throw deferral::InputError("reports carry incompatible coverage lists");
    for (std::size_t i = 0; i < rep.selective.size(); ++i) {
      if (rep.selective[i].coverage != reports.front().selective[i].coverage)
        throw deferral::InputError("reports carry incompatible coverage lists");
    }
  }

  std::size_t best_brier = 0, best_ece = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].brier < reports[best_brier].brier) best_brier = i;
    if (reports[i].ece < reports[best_ece].ece) best_ece = i;
  }

  std::string rendered;
  if (format == "csv") {
    rendered = reports.front().csv_header() + "\n";
    for (const auto& rep : reports) rendered += rep.csv_row() + "\n";
  } else if (format == "json") {
    ordered_json doc;
    auto rows = ordered_json::array();
    for (const auto& rep : reports) {
      ordered_json row;
      row["method"] = rep.method;
      row["metric"] = rep.metric;
      row["brier"] = rep.brier;
      row["ece"] = rep.ece;
      row["auroc"] = rep.auroc;
      auto sel = ordered_json::array();
      for (const auto& s : rep.selective)
        sel.push_back({{"coverage", s.coverage}, {"accuracy", s.accuracy}});
      row["selective_accuracy"] = std::move(sel);
      rows.push_back(std::move(row));
    }
    doc["reports"] = std::move(rows);
    doc["best_brier"] = reports[best_brier].method;
    doc["best_ece"] = reports[best_ece].method;
    rendered = doc.dump(2) + "\n";
  } else {
    // Fixed-width table; the lowest Brier and ECE are flagged with '*'.
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"method", "brier", "ece", "auroc"};
    for (const auto& s : reports.front().selective)
      header.push_back("sel@" + deferral::format_double(s.coverage));
    rows.push_back(header);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& rep = reports[i];
      std::vector<std::string> row = {
          rep.method,
          deferral::format_double(rep.brier) + (i == best_brier ? "*" : ""),
          deferral::format_double(rep.ece) + (i == best_ece ? "*" : ""),
          deferral::format_double(rep.auroc)};
      for (const auto& s : rep.selective)
        row.push_back(deferral::format_double(s.accuracy));
      rows.push_back(std::move(row));
    }
    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c)
        widths[c] = std::max(widths[c], row[c].size());
    for (const auto& row : rows) {
      std::string line;
      for (std::size_t c = 0; c < row.size(); ++c) {
        line += row[c];
        if (c + 1 < row.size())
          line += std::string(widths[c] - row[c].size() + 2, ' ');
      }
      rendered += line + "\n";
    }
  }
  emit(output, rendered);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration and selective-abstention toolkit for code-model "
               "prediction logs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(deferral::kToolkitVersion));

  std::string input, output, csv_path, calibrator_path, calibration_path;
  std::string decisions_path, registry_path;
  std::string metrics, metric, method, neg_weight = "auto", policy_spec;
  std::string scheme = "equal_width", split = "all", format = "table";
  std::string probs_from = "calibrated", rank_metric;
  std::vector<std::string> report_inputs;
  double tau = deferral::kDefaultLowConfTau;
  double lambda = deferral::kDefaultLogitFeatureLambda;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  int bins = 10;
  int jobs = 1;
  std::vector<double> coverages;

  auto* validate = app.add_subcommand("validate", "Parse and validate a log");
  validate->add_option("--input", input, "input JSONL log")->required();
  validate->add_option("--output", output, "report path (default: stdout)");

  auto* score = app.add_subcommand("score", "Compute uncertainty metrics per record");
  score->add_option("--input", input)->required();
  score->add_option("--output", output, "augmented JSONL log")->required();
  score->add_option("--metrics", metrics,
                    "all-applicable (default) or comma-separated metric names");
  score->add_option("--tau", tau, "low-confidence token threshold");

  auto* fit = app.add_subcommand("fit", "Fit a calibrator on the calibration split");
  fit->add_option("--input", input)->required();
  fit->add_option("--output", output, "calibrator JSON path")->required();
  fit->add_option("--method", method,
                  "temperature|platt|weighted_platt|isotonic|logit_feature|"
                  "variance_aware")
      ->required();
  fit->add_option("--metric", metric, "input metric for platt/weighted_platt/isotonic");
  fit->add_option("--neg-weight", neg_weight, "weight on incorrect records, or 'auto'");
  fit->add_option("--lambda", lambda, "L2 strength for logit_feature");
  fit->add_option("--tau", tau, "low-confidence token threshold");
  auto* fit_fraction = fit->add_option("--calibration-fraction", fraction,
                                       "assign splits with this calibration share");
  fit->add_option("--seed", seed, "split-assignment seed");

  auto* apply = app.add_subcommand("apply", "Apply a calibrator to every record");
  apply->add_option("--input", input)->required();
  apply->add_option("--calibrator", calibrator_path)->required();
  apply->add_option("--output", output, "augmented JSONL log")->required();

  auto* eval = app.add_subcommand("eval", "Calibration + selective-prediction report");
  eval->add_option("--input", input)->required();
  eval->add_option("--output", output, "report JSON path (default: stdout)");
  eval->add_option("--csv", csv_path, "also write a one-row CSV");
  eval->add_option("--method", method, "method label for the report");
  eval->add_option("--probs-from", probs_from, "calibrated (default) or metric:<name>");
  eval->add_option("--rank-metric", rank_metric,
                   "rank by this raw metric instead of the probabilities");
  eval->add_option("--bins", bins, "reliability bins (default 10)");
  eval->add_option("--scheme", scheme, "equal_width|equal_mass");
  eval->add_option("--coverages", coverages, "selective-accuracy coverages")
      ->delimiter(',');
  eval->add_option("--split", split, "all (default), calibration or evaluation");
  eval->add_option("--tau", tau, "low-confidence token threshold");

  auto* decide = app.add_subcommand("decide", "Fit a policy and emit decisions");
  decide->add_option("--input", input)->required();
  decide->add_option("--output", output, "decisions JSONL path")->required();
  decide->add_option("--policy", policy_spec, "coverage:0.8 | risk:0.05 | threshold:0.7")
      ->required();
  decide->add_option("--calibration", calibration_path,
                     "calibration log for policy fitting (default: the input's "
                     "calibration split)");
  auto* decide_fraction = decide->add_option("--calibration-fraction", fraction);
  decide->add_option("--seed", seed);

  auto* recover = app.add_subcommand("recover", "Route abstained records to tools");
  recover->add_option("--input", input)->required();
  recover->add_option("--decisions", decisions_path)->required();
  recover->add_option("--registry", registry_path)->required();
  recover->add_option("--output", output, "outcomes JSONL path")->required();
  recover->add_option("--jobs", jobs, "max concurrent tool invocations");

  auto* report = app.add_subcommand("report", "Render a method comparison");
  report->add_option("inputs", report_inputs, "evaluation report JSON files")
      ->required();
  report->add_option("--format", format, "table (default), csv or json");
  report->add_option("--output", output, "default: stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(validate)) return cmd_validate(input, output);
    if (app.got_subcommand(score)) return cmd_score(input, output, metrics, tau);
    if (app.got_subcommand(fit))
      return cmd_fit(input, output, method, metric, neg_weight, lambda, tau,
                     fraction, fit_fraction->count() > 0, seed);
    if (app.got_subcommand(apply)) return cmd_apply(input, calibrator_path, output);
    if (app.got_subcommand(eval))
      return cmd_eval(input, output, csv_path, method, probs_from, rank_metric,
                      bins, scheme, coverages, split, tau);
    if (app.got_subcommand(decide))
      return cmd_decide(input, output, policy_spec, calibration_path, fraction,
                        decide_fraction->count() > 0, seed);
    if (app.got_subcommand(recover))
      return cmd_recover(input, decisions_path, registry_path, output, jobs);
    if (app.got_subcommand(report)) return cmd_report(report_inputs, format, output);
    throw deferral::InvariantError("no subcommand dispatched");
  } catch (const deferral::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const deferral::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
