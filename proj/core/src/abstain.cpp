#include "deferral/abstain.hpp"

#include <algorithm>
#include <cmath>

#include "deferral/errors.hpp"
#include "deferral/io.hpp"

namespace deferral {

namespace {

void check_probability(double p, const std::string& where) {
  if (!(p >= 0.0 && p <= 1.0))
    throw InputError(where + " outside [0,1]: " + format_double(p));
}

}  // namespace

std::string_view to_string(PolicyMode mode) {
  switch (mode) {
    case PolicyMode::coverage: return "coverage";
    case PolicyMode::risk: return "risk";
    case PolicyMode::threshold: return "threshold";
  }
  return "?";
}

std::optional<PolicyMode> policy_mode_from_string(std::string_view name) {
  if (name == "coverage") return PolicyMode::coverage;
  if (name == "risk") return PolicyMode::risk;
  if (name == "threshold") return PolicyMode::threshold;
  return std::nullopt;
}

std::string_view to_string(Action action) {
  return action == Action::accept ? "accept" : "abstain";
}

void PolicySpec::validate() const {
  switch (mode) {
    case PolicyMode::coverage:
      if (!(target > 0.0 && target <= 1.0))
        throw InputError("coverage target must be in (0,1]");
      break;
    case PolicyMode::risk:
      if (!(target >= 0.0 && target < 1.0))
        throw InputError("risk target must be in [0,1)");
      break;
    case PolicyMode::threshold:
      if (!(target >= 0.0 && target <= 1.0))
        throw InputError("threshold must be in [0,1]");
      break;
  }
}

nlohmann::ordered_json FittedPolicy::to_json() const {
  nlohmann::ordered_json doc;
  doc["mode"] = to_string(spec.mode);
  doc["target"] = spec.target;
  doc["threshold"] = threshold;
  doc["abstain_all"] = abstain_all;
  doc["fitted_on"] = {{"digest", fitted_on_digest}, {"size", fitted_on_size}};
  doc["achieved_calibration_coverage"] = achieved_calibration_coverage;
  if (!warning.empty()) doc["warning"] = warning;
  return doc;
}

FittedPolicy fit_policy(std::span<const double> probs,
                        std::span<const std::uint8_t> labels, PolicySpec spec) {
  spec.validate();

  FittedPolicy policy;
  policy.spec = spec;

  if (spec.mode == PolicyMode::threshold) {
    policy.threshold = spec.target;
    policy.fitted_on_digest = "none";
    policy.fitted_on_size = 0;
    policy.achieved_calibration_coverage = 0.0;
    if (!probs.empty()) {
      std::size_t accepted = 0;
      for (double p : probs)
        if (p >= policy.threshold) ++accepted;
      policy.achieved_calibration_coverage =
          static_cast<double>(accepted) / static_cast<double>(probs.size());
      std::string buf;
      for (double p : probs) { buf += format_double(p); buf += '\n'; }
      policy.fitted_on_digest = fnv1a_hex(buf);
      policy.fitted_on_size = probs.size();
    }
    return policy;
  }

  if (probs.empty()) throw InputError("empty calibration set");
  for (double p : probs) check_probability(p, "calibration probability");

  const auto n = probs.size();
  std::string buf;
  for (std::size_t i = 0; i < n; ++i) {
    buf += format_double(probs[i]);
    if (spec.mode == PolicyMode::risk) buf += labels[i] != 0 ? ",1" : ",0";
    buf += '\n';
  }
  policy.fitted_on_digest = fnv1a_hex(buf);
  policy.fitted_on_size = n;

  std::vector<double> sorted(probs.begin(), probs.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  if (spec.mode == PolicyMode::coverage) {
    auto keep = static_cast<std::size_t>(
        std::ceil(spec.target * static_cast<double>(n)));
    keep = std::clamp<std::size_t>(keep, 1, n);
    policy.threshold = sorted[keep - 1];
  } else {
    // risk mode: smallest threshold among distinct probability values whose
    // empirical selective risk is <= target.
    if (labels.size() != n) throw InputError("probability and label lengths differ");
    bool pos = false, neg = false;
    for (auto y : labels) (y != 0 ? pos : neg) = true;
    if (!pos || !neg)
      throw InputError(std::string("degenerate labels: all ") +
                       (pos ? "correct" : "incorrect"));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

    bool found = false;
    double best = 0.0;
    std::size_t covered = 0, correct = 0;
    std::size_t i = 0;
    while (i < n) {
      const double threshold = probs[order[i]];
      while (i < n && probs[order[i]] == threshold) {
        ++covered;
        if (labels[order[i]] != 0) ++correct;
        ++i;
      }
      const double risk =
          1.0 - static_cast<double>(correct) / static_cast<double>(covered);
      if (risk <= spec.target) {
        best = threshold;  // keeps shrinking while the target is still met
        found = true;
      }
    }
    if (!found) {
      policy.abstain_all = true;
      policy.threshold = 1.0;
      policy.warning =
          "no threshold attains risk <= " + format_double(spec.target) +
          " on the calibration split; policy abstains on every record";
      policy.achieved_calibration_coverage = 0.0;
      return policy;
    }
    policy.threshold = best;
  }

  std::size_t accepted = 0;
  for (double p : probs)
    if (p >= policy.threshold) ++accepted;
  policy.achieved_calibration_coverage =
      static_cast<double>(accepted) / static_cast<double>(n);
  return policy;
}

BatchDecisions decide_batch(const FittedPolicy& policy,
                            std::span<const ScoredRecord> records) {
  if (records.empty()) throw InputError("empty decision batch");
  BatchDecisions out;
  out.decisions.reserve(records.size());
  std::size_t accepted = 0;
  for (const auto& r : records) {
    check_probability(r.probability, "record '" + r.id + "' probability");
    const bool accept = !policy.abstain_all && r.probability >= policy.threshold;
    if (accept) ++accepted;
    out.decisions.push_back(
        {r.id, r.probability, accept ? Action::accept : Action::abstain});
  }
  out.achieved_coverage =
      static_cast<double>(accepted) / static_cast<double>(records.size());
  return out;
}

}  // namespace deferral
