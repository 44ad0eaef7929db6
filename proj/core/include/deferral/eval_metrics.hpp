#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace deferral {

using Labels = std::vector<std::uint8_t>;  // 0/1 correctness

enum class BinScheme { equal_width, equal_mass };

std::string_view to_string(BinScheme scheme);
std::optional<BinScheme> bin_scheme_from_string(std::string_view name);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 when count == 0
  double accuracy = 0.0;         // 0 when count == 0
};

struct RiskCoveragePoint {
  double coverage = 0.0;
  double selective_risk = 0.0;
  double threshold = 0.0;
};

// Mean of (p - y)^2, reduced in record order.
double brier(std::span<const double> probs, std::span<const std::uint8_t> labels);

struct EceResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

// ECE = sum_b (n_b/N) |acc_b - conf_b|. equal_width partitions [0,1] into
// `bins` intervals, last bin closed above; equal_mass bins by probability
// quantiles with ties kept together. Empty bins contribute 0.
EceResult ece(std::span<const double> probs, std::span<const std::uint8_t> labels,
              int bins, BinScheme scheme);

// Probability that a random correct record outranks a random incorrect one,
// ties counted 1/2 (Mann-Whitney). O(N log N).
double auroc(std::span<const double> confidence, std::span<const std::uint8_t> labels);

// Accuracy over the ceil(coverage*N) records with highest confidence; ties
// broken by ascending record id. With empty `ids`, the record index is the id.
double selective_accuracy(std::span<const double> confidence,
                          std::span<const std::uint8_t> labels, double coverage,
                          std::span<const std::string> ids = {});

// One point per distinct confidence value, thresholds descending; the final
// point has coverage 1 and risk equal to the overall error rate.
std::vector<RiskCoveragePoint> risk_coverage_curve(
    std::span<const double> confidence, std::span<const std::uint8_t> labels);

struct SelectivePoint {
  double coverage = 0.0;
  double accuracy = 0.0;
};

struct EvaluationReport {
  std::string method;
  std::string metric;  // provenance of the confidence signal
  std::size_t n = 0;
  double label_balance = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  double auroc = 0.0;
  int bin_count = 0;
  BinScheme scheme = BinScheme::equal_width;
  std::vector<SelectivePoint> selective;  // requested coverages, input order
  std::vector<ReliabilityBin> bins;
  std::vector<RiskCoveragePoint> risk_coverage;

  nlohmann::ordered_json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& doc);

  // "method,brier,ece,auroc,sel@0.8,..." — bit-exact header contract.
  std::string csv_header() const;
  std::string csv_row() const;
};

// `probs` feed Brier/ECE, `confidence` feeds AUROC/selective measures (pass
// the same span when they coincide).
EvaluationReport build_report(std::string method, std::string metric,
                              std::span<const double> probs,
                              std::span<const double> confidence,
                              std::span<const std::uint8_t> labels,
                              std::span<const std::string> ids,
                              std::span<const double> coverages, int bins,
                              BinScheme scheme);

}  // namespace deferral
