#include "deferral/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "deferral/errors.hpp"

namespace deferral {

namespace {

constexpr MetricInfo kMetrics[kMetricCount] = {
    {MetricId::msp, "msp", MetricFamily::classification, +1},
    {MetricId::predictive_entropy, "predictive_entropy", MetricFamily::classification, -1},
    {MetricId::softmax_margin, "softmax_margin", MetricFamily::classification, +1},
    {MetricId::logit_margin, "logit_margin", MetricFamily::classification, +1},
    {MetricId::negative_energy, "negative_energy", MetricFamily::classification, +1},
    {MetricId::least_confidence, "least_confidence", MetricFamily::classification, -1},
    {MetricId::mean_token_logprob, "mean_token_logprob", MetricFamily::generation, +1},
    {MetricId::sum_token_logprob, "sum_token_logprob", MetricFamily::generation, +1},
    {MetricId::perplexity, "perplexity", MetricFamily::generation, -1},
    {MetricId::min_token_prob, "min_token_prob", MetricFamily::generation, +1},
    {MetricId::token_logprob_variance, "token_logprob_variance", MetricFamily::generation, -1},
    {MetricId::low_conf_token_ratio, "low_conf_token_ratio", MetricFamily::generation, -1},
    {MetricId::sample_agreement, "sample_agreement", MetricFamily::sampling, +1},
    {MetricId::sample_entropy, "sample_entropy", MetricFamily::sampling, -1},
    {MetricId::sample_logprob_dispersion, "sample_logprob_dispersion", MetricFamily::sampling, -1},
    {MetricId::pairwise_match_rate, "pairwise_match_rate", MetricFamily::sampling, +1},
};

void put(UncertaintyScoreSet& set, MetricId id, double raw) {
  set.raw[id] = raw;
  set.confidence[id] = metric_info(id).orientation > 0 ? raw : -raw;
}

double population_variance(std::span<const double> xs) {
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return ss / n;
}

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

}  // namespace

std::span<const MetricInfo> all_metrics() { return kMetrics; }

const MetricInfo& metric_info(MetricId id) {
  return kMetrics[static_cast<std::size_t>(id)];
}

std::string_view metric_name(MetricId id) { return metric_info(id).name; }

std::optional<MetricId> metric_from_name(std::string_view name) {
  for (const auto& m : kMetrics)
    if (m.name == name) return m.id;
  return std::nullopt;
}

bool metric_applicable(MetricId id, const PredictionRecord& record) {
  switch (metric_info(id).family) {
    case MetricFamily::classification:
      return record.task == Task::classification;
    case MetricFamily::generation:
      return record.task == Task::generation;
    case MetricFamily::sampling:
      return record.samples.size() >= 2;
  }
  return false;
}

std::map<std::string, double> UncertaintyScoreSet::raw_by_name() const {
  std::map<std::string, double> out;
  for (const auto& [id, v] : raw) out[std::string(metric_name(id))] = v;
  return out;
}

std::map<std::string, double> UncertaintyScoreSet::confidence_by_name() const {
  std::map<std::string, double> out;
  for (const auto& [id, v] : confidence) out[std::string(metric_name(id))] = v;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw InputError("softmax requires at least 2 logits");
  for (double z : logits)
    if (!std::isfinite(z)) throw InputError("softmax input is not finite");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - m);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
  return probs;
}

UncertaintyScoreSet classification_metrics(std::span<const double> logits) {
  const auto probs = softmax(logits);

  double p1 = -1.0, p2 = -1.0;  // two largest probabilities
  for (double p : probs) {
    if (p > p1) { p2 = p1; p1 = p; }
    else if (p > p2) { p2 = p; }
  }
  double z1 = -std::numeric_limits<double>::infinity(), z2 = z1;
  for (double z : logits) {
    if (z > z1) { z2 = z1; z1 = z; }
    else if (z > z2) { z2 = z; }
  }

  double entropy = 0.0;
  for (double p : probs)
    if (p > 0.0) entropy -= p * std::log(p);

  UncertaintyScoreSet set;
  put(set, MetricId::msp, p1);
  put(set, MetricId::predictive_entropy, entropy);
  put(set, MetricId::softmax_margin, p1 - p2);
  put(set, MetricId::logit_margin, z1 - z2);
  put(set, MetricId::negative_energy, log_sum_exp(logits));
  put(set, MetricId::least_confidence, 1.0 - p1);
  return set;
}

UncertaintyScoreSet generation_metrics(std::span<const double> token_logprobs,
                                       double low_conf_tau) {
  if (token_logprobs.empty())
    throw InputError("generation metrics require at least 1 token log-prob");

  const auto t = static_cast<double>(token_logprobs.size());
  double sum = 0.0;
  double min_lp = token_logprobs[0];
  std::size_t low = 0;
  for (double lp : token_logprobs) {
    sum += lp;
    min_lp = std::min(min_lp, lp);
    if (std::exp(lp) < low_conf_tau) ++low;
  }
  const double mean = sum / t;

  UncertaintyScoreSet set;
  put(set, MetricId::mean_token_logprob, mean);
  put(set, MetricId::sum_token_logprob, sum);
  put(set, MetricId::perplexity, std::exp(-mean));
  put(set, MetricId::min_token_prob, std::exp(min_lp));
  put(set, MetricId::token_logprob_variance, population_variance(token_logprobs));
  put(set, MetricId::low_conf_token_ratio, static_cast<double>(low) / t);
  return set;
}

UncertaintyScoreSet sampling_metrics(std::span<const SampleRecord> samples) {
  if (samples.size() < 2)
    throw InputError("sampling metrics require at least 2 samples");

  const auto k = static_cast<double>(samples.size());
  std::map<std::string, std::size_t> counts;
  std::vector<double> sample_means;
  sample_means.reserve(samples.size());
  for (const auto& s : samples) {
    counts[s.output_key]++;
    double sum = 0.0;
    for (double lp : s.token_logprobs) sum += lp;
    sample_means.push_back(sum / static_cast<double>(s.token_logprobs.size()));
  }

  std::size_t modal = 0;
  double entropy = 0.0;
  double matched_pairs = 0.0;
  for (const auto& [key, c] : counts) {
    (void)key;
    modal = std::max(modal, c);
    const double f = static_cast<double>(c) / k;
    entropy -= f * std::log(f);
    matched_pairs += static_cast<double>(c) * static_cast<double>(c - 1) / 2.0;
  }
  const double total_pairs = k * (k - 1.0) / 2.0;

  UncertaintyScoreSet set;
  put(set, MetricId::sample_agreement, static_cast<double>(modal) / k);
  put(set, MetricId::sample_entropy, entropy);
  put(set, MetricId::sample_logprob_dispersion, std::sqrt(population_variance(sample_means)));
  put(set, MetricId::pairwise_match_rate, matched_pairs / total_pairs);
  return set;
}

UncertaintyScoreSet score_record(const PredictionRecord& record,
                                 const MetricSelector& selector, double low_conf_tau) {
  UncertaintyScoreSet out;
  out.record_id = record.id;

  const bool want_classification =
      record.task == Task::classification &&
      (selector.all || std::any_of(selector.metrics.begin(), selector.metrics.end(),
                                   [](MetricId m) {
                                     return metric_info(m).family ==
                                            MetricFamily::classification;
                                   }));
  const bool want_generation =
      record.task == Task::generation &&
      (selector.all || std::any_of(selector.metrics.begin(), selector.metrics.end(),
                                   [](MetricId m) {
                                     return metric_info(m).family ==
                                            MetricFamily::generation;
                                   }));
  const bool want_sampling =
      (selector.all && record.samples.size() >= 2) ||
      (!selector.all && std::any_of(selector.metrics.begin(), selector.metrics.end(),
                                    [](MetricId m) {
                                      return metric_info(m).family ==
                                             MetricFamily::sampling;
                                    }));

  if (!selector.all) {
    for (MetricId m : selector.metrics) {
      if (metric_applicable(m, record)) continue;
      if (metric_info(m).family == MetricFamily::sampling)
        throw InputError("metric " + std::string(metric_name(m)) +
                         " requires at least 2 samples (record '" + record.id + "')");
      throw InputError("metric " + std::string(metric_name(m)) + " inapplicable to " +
                       std::string(to_string(record.task)) + " (record '" + record.id +
                       "')");
    }
  }

  UncertaintyScoreSet family_scores;
  auto merge = [&out](const UncertaintyScoreSet& src) {
    out.raw.insert(src.raw.begin(), src.raw.end());
    out.confidence.insert(src.confidence.begin(), src.confidence.end());
  };
  if (want_classification) merge(classification_metrics(record.logits));
  if (want_generation) merge(generation_metrics(record.token_logprobs, low_conf_tau));
  if (want_sampling) merge(sampling_metrics(record.samples));

  if (!selector.all) {
    // Restrict to exactly what was requested.
    std::map<MetricId, double> raw, conf;
    for (MetricId m : selector.metrics) {
      raw[m] = out.raw.at(m);
      conf[m] = out.confidence.at(m);
    }
    out.raw = std::move(raw);
    out.confidence = std::move(conf);
  }
  return out;
}

}  // namespace deferral
