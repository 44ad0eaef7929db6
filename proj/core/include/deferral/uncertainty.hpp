#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deferral/prediction_log.hpp"

namespace deferral {

// The 16 uncertainty metrics. Classification metrics read logits, generation
// metrics read token log-probs, sampling metrics read repeated samples.
enum class MetricId {
  // classification
  msp,
  predictive_entropy,
  softmax_margin,
  logit_margin,
  negative_energy,
  least_confidence,
  // generation
  mean_token_logprob,
  sum_token_logprob,
  perplexity,
  min_token_prob,
  token_logprob_variance,
  low_conf_token_ratio,
  // sampling
  sample_agreement,
  sample_entropy,
  sample_logprob_dispersion,
  pairwise_match_rate,
};

inline constexpr std::size_t kMetricCount = 16;

enum class MetricFamily { classification, generation, sampling };

struct MetricInfo {
  MetricId id;
  std::string_view name;
  MetricFamily family;
  int orientation;  // +1: higher raw value = more confident; -1: lower = more confident
};

std::span<const MetricInfo> all_metrics();
const MetricInfo& metric_info(MetricId id);
std::string_view metric_name(MetricId id);
std::optional<MetricId> metric_from_name(std::string_view name);

// Task match for classification/generation families; sampling requires K >= 2.
bool metric_applicable(MetricId id, const PredictionRecord& record);

// Threshold for low_conf_token_ratio: a token counts as low-confidence when
// exp(logprob) < tau.
inline constexpr double kDefaultLowConfTau = 0.5;

struct UncertaintyScoreSet {
  std::string record_id;
  std::map<MetricId, double> raw;
  // raw value times the metric's orientation sign, so that higher confidence
  // always means "more likely correct".
  std::map<MetricId, double> confidence;

  std::map<std::string, double> raw_by_name() const;
  std::map<std::string, double> confidence_by_name() const;
};

// Shift-invariant softmax (max subtraction). Requires >= 2 finite entries.
std::vector<double> softmax(std::span<const double> logits);

UncertaintyScoreSet classification_metrics(std::span<const double> logits);
UncertaintyScoreSet generation_metrics(std::span<const double> token_logprobs,
                                       double low_conf_tau = kDefaultLowConfTau);
UncertaintyScoreSet sampling_metrics(std::span<const SampleRecord> samples);

struct MetricSelector {
  bool all = false;               // every metric applicable to the record
  std::set<MetricId> metrics;     // explicit set otherwise

  static MetricSelector all_applicable() { return {true, {}}; }
  static MetricSelector of(std::set<MetricId> ids) { return {false, std::move(ids)}; }
};

// Explicitly requested metrics that do not apply to the record are an error;
// the all_applicable selector silently restricts to what the record supports.
UncertaintyScoreSet score_record(const PredictionRecord& record,
                                 const MetricSelector& selector,
                                 double low_conf_tau = kDefaultLowConfTau);

}  // namespace deferral
