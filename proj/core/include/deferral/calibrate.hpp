#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "deferral/prediction_log.hpp"
#include "deferral/uncertainty.hpp"

namespace deferral {

enum class CalibratorKind {
  temperature,
  platt,
  weighted_platt,
  isotonic,
  logit_feature,
  variance_aware,
};

std::string_view to_string(CalibratorKind kind);
std::optional<CalibratorKind> calibrator_kind_from_string(std::string_view name);

struct FitDiagnostics {
  int iterations = 0;
  double final_objective = 0.0;  // weighted NLL for logistic fits, SSE for isotonic
  double gradient_norm = 0.0;
  bool converged = false;

  nlohmann::ordered_json to_json() const;
};

struct TemperatureParams {
  double temperature = 1.0;  // > 0
  bool operator==(const TemperatureParams&) const = default;
};

struct PlattParams {
  double a = 0.0;
  double b = 0.0;
  double neg_weight = 1.0;  // weight on incorrect records; 1 for plain Platt
  bool operator==(const PlattParams&) const = default;
};

struct IsotonicKnot {
  double score = 0.0;
  double probability = 0.0;
  bool operator==(const IsotonicKnot&) const = default;
};

struct IsotonicParams {
  // Strictly increasing scores, nondecreasing probabilities in [0,1].
  std::vector<IsotonicKnot> knots;
  bool operator==(const IsotonicParams&) const = default;
};

struct LogitFeatureParams {
  int top_k = 0;                     // sorted logits kept (min(C,10) at fit time)
  std::vector<double> weights;       // length top_k + 3
  double intercept = 0.0;
  double lambda = 0.0;               // L2 strength on weights (not intercept)
  std::vector<double> feature_means; // calibration-split standardization stats
  std::vector<double> feature_stds;
  bool operator==(const LogitFeatureParams&) const = default;
};

using CalibratorParams =
    std::variant<TemperatureParams, PlattParams, IsotonicParams, LogitFeatureParams>;

struct FitMeta {
  std::size_t record_count = 0;
  double label_balance = 0.0;
  std::string data_digest;
  std::string toolkit_version;
  bool operator==(const FitMeta&) const = default;
};

// A fitted, serializable map from an uncertainty signal (or raw logits) to a
// correctness probability.
struct Calibrator {
  CalibratorKind kind = CalibratorKind::platt;
  // Metric name, "raw_logits" (temperature, logit_feature) or
  // "sample_dispersion" (variance_aware).
  std::string input_spec;
  CalibratorParams params;
  FitMeta fit_meta;

  bool operator==(const Calibrator&) const = default;
};

inline constexpr double kDefaultLogitFeatureLambda = 1e-2;

// --- fitting ---------------------------------------------------------------

// Minimizes the binary NLL of the argmax-class probability of
// softmax(logits/T) against label_correct, by golden-section search over
// T in [0.05, 20] to an interval of 1e-4. Argmax is unchanged for all T > 0.
// `converged` means the interval tolerance was reached at an interior point;
// gradient_norm is a central finite difference of the mean NLL.
std::pair<Calibrator, FitDiagnostics> fit_temperature(
    std::span<const PredictionRecord> records);

// Unweighted logistic fit sigmoid(a*s + b) by damped Newton; exits when the
// gradient norm is <= 1e-6 or after 100 iterations.
std::pair<Calibrator, FitDiagnostics> fit_platt(std::span<const double> scores,
                                                std::span<const std::uint8_t> labels,
                                                std::string input_spec = "score");

// Same, with weight `neg_weight` on incorrect records. neg_weight <= 0 is an
// error; kNegWeightAuto uses (#correct)/(#incorrect).
inline constexpr double kNegWeightAuto = 0.0;
std::pair<Calibrator, FitDiagnostics> fit_weighted_platt(
    std::span<const double> scores, std::span<const std::uint8_t> labels,
    double neg_weight, std::string input_spec = "score");

// Pool-adjacent-violators over (score, label) pairs; ties on score are
// pre-averaged into one weighted point. Application interpolates linearly
// between knots and clamps outside their range.
Calibrator fit_isotonic(std::span<const double> scores,
                        std::span<const std::uint8_t> labels,
                        std::string input_spec = "score");

// Weighted least-squares nondecreasing fit. `points` sorted by strictly
// increasing x; returns the fitted value per point. Exposed so independent
// oracles can exercise the core routine directly.
struct WeightedPoint {
  double x = 0.0;
  double y = 0.0;
  double weight = 1.0;
};
std::vector<double> pool_adjacent_violators(std::span<const WeightedPoint> points);

// L2-regularized logistic regression on raw-logit features: sorted logits
// truncated/padded to top_k = min(C,10), plus predictive_entropy,
// logit_margin and negative_energy, standardized with fit-set statistics.
std::pair<Calibrator, FitDiagnostics> fit_logit_feature(
    std::span<const PredictionRecord> records,
    double lambda = kDefaultLogitFeatureLambda);

// Feature vector used by logit_feature (before standardization). Records with
// fewer than top_k logits are padded with their smallest logit.
std::vector<double> logit_feature_vector(const PredictionRecord& record, int top_k);

// Isotonic fit of label on the confidence-oriented sample dispersion
// (-population std of per-sample mean token log-probs).
Calibrator fit_variance_aware(std::span<const PredictionRecord> records);

// --- application -----------------------------------------------------------

// Maps one record to a correctness probability in [0,1]. `scores` may carry
// precomputed metric values; otherwise the needed metric is looked up in the
// record's confidence map or computed from the record.
double apply_calibrator(const Calibrator& calibrator, const PredictionRecord& record,
                        const UncertaintyScoreSet* scores = nullptr);

// Piecewise-linear evaluation with clamping beyond the first/last knot.
double interpolate_knots(std::span<const IsotonicKnot> knots, double score);

// --- persistence -----------------------------------------------------------

nlohmann::ordered_json calibrator_to_json(const Calibrator& calibrator);
Calibrator calibrator_from_json(const nlohmann::json& doc);

void save_calibrator(const Calibrator& calibrator, const std::string& path);
Calibrator load_calibrator(const std::string& path);

}  // namespace deferral
