#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace deferral {

enum class PolicyMode { coverage, risk, threshold };

std::string_view to_string(PolicyMode mode);
std::optional<PolicyMode> policy_mode_from_string(std::string_view name);

struct PolicySpec {
  PolicyMode mode = PolicyMode::threshold;
  double target = 0.0;  // coverage in (0,1], risk in [0,1), threshold in [0,1]

  void validate() const;  // throws InputError when target is out of range
};

struct FittedPolicy {
  PolicySpec spec;
  double threshold = 0.0;   // accept iff probability >= threshold (ties accept)
  bool abstain_all = false; // unattainable risk target: abstain on everything
  std::string fitted_on_digest;
  std::size_t fitted_on_size = 0;
  double achieved_calibration_coverage = 0.0;
  std::string warning;  // nonempty when the abstain_all sentinel was hit

  nlohmann::ordered_json to_json() const;
};

enum class Action { accept, abstain };

std::string_view to_string(Action action);

struct Decision {
  std::string record_id;
  double calibrated_probability = 0.0;
  Action action = Action::abstain;
};

// coverage mode: threshold = the ceil(target*N)-th highest probability (ties
// can push achieved coverage above target; recorded). risk mode: smallest
// threshold among the distinct probability values whose empirical selective
// risk is <= target; when none qualifies the policy abstains on everything
// and carries a warning. threshold mode passes the target through. Labels are
// only consulted in risk mode.
FittedPolicy fit_policy(std::span<const double> probs,
                        std::span<const std::uint8_t> labels, PolicySpec spec);

struct ScoredRecord {
  std::string id;
  double probability = 0.0;
};

struct BatchDecisions {
  std::vector<Decision> decisions;  // input order
  double achieved_coverage = 0.0;
};

BatchDecisions decide_batch(const FittedPolicy& policy,
                            std::span<const ScoredRecord> records);

}  // namespace deferral
