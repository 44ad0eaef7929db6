#include "deferral/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deferral/errors.hpp"
#include "deferral/io.hpp"

namespace deferral {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw InputError("probability and label lengths differ");
  if (a == 0) throw InputError("empty input");
}

void check_both_labels(std::span<const std::uint8_t> labels) {
  bool pos = false, neg = false;
  for (auto y : labels) (y != 0 ? pos : neg) = true;
  if (!pos || !neg)
    throw InputError(std::string("degenerate labels: all ") +
                     (pos ? "correct" : "incorrect"));
}

// Indices ordered by confidence descending, ties by ascending id. With no
// ids, the record index acts as the id, so ties resolve to input order.
std::vector<std::size_t> ranking(std::span<const double> confidence,
                                 std::span<const std::string> ids) {
  if (!ids.empty() && ids.size() != confidence.size())
    throw InputError("id and confidence lengths differ");
  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (confidence[a] != confidence[b]) return confidence[a] > confidence[b];
    if (ids.empty()) return a < b;
    return ids[a] < ids[b];
  });
  return order;
}

}  // namespace

std::string_view to_string(BinScheme scheme) {
  return scheme == BinScheme::equal_width ? "equal_width" : "equal_mass";
}

std::optional<BinScheme> bin_scheme_from_string(std::string_view name) {
  if (name == "equal_width") return BinScheme::equal_width;
  if (name == "equal_mass") return BinScheme::equal_mass;
  return std::nullopt;
}

double brier(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  check_lengths(probs.size(), labels.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d = probs[i] - (labels[i] != 0 ? 1.0 : 0.0);
    sum += d * d;
  }
  return sum / static_cast<double>(probs.size());
}

EceResult ece(std::span<const double> probs, std::span<const std::uint8_t> labels,
              int bins, BinScheme scheme) {
  check_lengths(probs.size(), labels.size());
  if (bins < 1) throw InputError("bins must be >= 1");
  const auto n = static_cast<double>(probs.size());

  EceResult res;
  if (scheme == BinScheme::equal_width) {
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    std::vector<std::size_t> correct(static_cast<std::size_t>(bins), 0);
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      auto b = static_cast<long>(probs[i] * bins);
      b = std::clamp<long>(b, 0, bins - 1);  // p == 1 lands in the last bin
      const auto bi = static_cast<std::size_t>(b);
      ++count[bi];
      if (labels[i] != 0) ++correct[bi];
      conf_sum[bi] += probs[i];
    }
    for (int b = 0; b < bins; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      ReliabilityBin bin;
      bin.lower = static_cast<double>(b) / bins;
      bin.upper = static_cast<double>(b + 1) / bins;
      bin.count = count[bi];
      if (count[bi] > 0) {
        bin.mean_confidence = conf_sum[bi] / static_cast<double>(count[bi]);
        bin.accuracy = static_cast<double>(correct[bi]) / static_cast<double>(count[bi]);
        res.ece += static_cast<double>(count[bi]) / n *
                   std::abs(bin.accuracy - bin.mean_confidence);
      }
      res.bins.push_back(bin);
    }
    return res;
  }

  // equal_mass: group identical probabilities, then fill bins greedily so that
  // ties never straddle a boundary.
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

  struct Group {
    double value;
    std::size_t count;
    std::size_t correct;
  };
  std::vector<Group> groups;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    Group g{probs[order[i]], 0, 0};
    while (j < order.size() && probs[order[j]] == g.value) {
      ++g.count;
      if (labels[order[j]] != 0) ++g.correct;
      ++j;
    }
    groups.push_back(g);
    i = j;
  }

  std::size_t remaining = probs.size();
  int remaining_bins = bins;
  std::size_t gi = 0;
  double lower = 0.0;
  while (gi < groups.size()) {
    const std::size_t target =
        (remaining + static_cast<std::size_t>(remaining_bins) - 1) /
        static_cast<std::size_t>(remaining_bins);
    ReliabilityBin bin;
    bin.lower = lower;
    std::size_t cnt = 0, cor = 0;
    double conf_sum = 0.0;
    double max_value = groups[gi].value;
    while (gi < groups.size() &&
           (cnt < target || remaining_bins == 1)) {
      cnt += groups[gi].count;
      cor += groups[gi].correct;
      conf_sum += groups[gi].value * static_cast<double>(groups[gi].count);
      max_value = groups[gi].value;
      ++gi;
    }
    const bool last = gi >= groups.size();
    bin.upper = last ? 1.0 : (max_value + groups[gi].value) / 2.0;
    bin.count = cnt;
    bin.mean_confidence = conf_sum / static_cast<double>(cnt);
    bin.accuracy = static_cast<double>(cor) / static_cast<double>(cnt);
    res.ece += static_cast<double>(cnt) / n *
               std::abs(bin.accuracy - bin.mean_confidence);
    res.bins.push_back(bin);
    lower = bin.upper;
    remaining -= cnt;
    if (remaining_bins > 1) --remaining_bins;
  }
  return res;
}

double auroc(std::span<const double> confidence, std::span<const std::uint8_t> labels) {
  check_lengths(confidence.size(), labels.size());
  check_both_labels(labels);

  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidence[a] < confidence[b];
  });

  // Average ranks over tie groups (Mann-Whitney with ties counted 1/2).
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && confidence[order[j]] == confidence[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const auto n_neg = confidence.size() - n_pos;
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double selective_accuracy(std::span<const double> confidence,
                          std::span<const std::uint8_t> labels, double coverage,
                          std::span<const std::string> ids) {
  check_lengths(confidence.size(), labels.size());
  if (!(coverage > 0.0 && coverage <= 1.0))
    throw InputError("coverage must be in (0,1]");

  const auto n = confidence.size();
  auto keep = static_cast<std::size_t>(
      std::ceil(coverage * static_cast<double>(n)));
  keep = std::clamp<std::size_t>(keep, 1, n);

  const auto order = ranking(confidence, ids);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < keep; ++k)
    if (labels[order[k]] != 0) ++correct;
  return static_cast<double>(correct) / static_cast<double>(keep);
}

std::vector<RiskCoveragePoint> risk_coverage_curve(
    std::span<const double> confidence, std::span<const std::uint8_t> labels) {
  check_lengths(confidence.size(), labels.size());
  const auto n = static_cast<double>(confidence.size());

  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidence[a] > confidence[b];
  });

  std::vector<RiskCoveragePoint> curve;
  std::size_t covered = 0, correct = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = confidence[order[i]];
    while (i < order.size() && confidence[order[i]] == threshold) {
      ++covered;
      if (labels[order[i]] != 0) ++correct;
      ++i;
    }
    RiskCoveragePoint point;
    point.coverage = static_cast<double>(covered) / n;
    point.selective_risk =
        1.0 - static_cast<double>(correct) / static_cast<double>(covered);
    point.threshold = threshold;
    curve.push_back(point);
  }
  return curve;
}

EvaluationReport build_report(std::string method, std::string metric,
                              std::span<const double> probs,
                              std::span<const double> confidence,
                              std::span<const std::uint8_t> labels,
                              std::span<const std::string> ids,
                              std::span<const double> coverages, int bins,
                              BinScheme scheme) {
  EvaluationReport rep;
  rep.method = std::move(method);
  rep.metric = std::move(metric);
  rep.n = probs.size();
  std::size_t n_correct = 0;
  for (auto y : labels)
    if (y != 0) ++n_correct;
  rep.label_balance = static_cast<double>(n_correct) / static_cast<double>(labels.size());
  rep.brier = brier(probs, labels);
  auto e = ece(probs, labels, bins, scheme);
  rep.ece = e.ece;
  rep.bins = std::move(e.bins);
  rep.bin_count = bins;
  rep.scheme = scheme;
  rep.auroc = auroc(confidence, labels);
  for (double c : coverages)
    rep.selective.push_back({c, selective_accuracy(confidence, labels, c, ids)});
  rep.risk_coverage = risk_coverage_curve(confidence, labels);
  return rep;
}

nlohmann::ordered_json EvaluationReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["method"] = method;
  doc["metric"] = metric;
  doc["n"] = n;
  doc["label_balance"] = label_balance;
  doc["brier"] = brier;
  doc["ece"] = ece;
  doc["auroc"] = auroc;
  doc["bin_scheme"] = to_string(scheme);
  doc["bin_count"] = bin_count;
  auto sel = nlohmann::ordered_json::array();
  for (const auto& s : selective)
    sel.push_back({{"coverage", s.coverage}, {"accuracy", s.accuracy}});
  doc["selective_accuracy"] = std::move(sel);
  auto bin_table = nlohmann::ordered_json::array();
  for (const auto& b : bins) {
    bin_table.push_back({{"lower", b.lower},
                         {"upper", b.upper},
                         {"count", b.count},
                         {"mean_confidence", b.mean_confidence},
                         {"accuracy", b.accuracy}});
  }
  doc["bins"] = std::move(bin_table);
  auto curve = nlohmann::ordered_json::array();
  for (const auto& p : risk_coverage) {
    curve.push_back({{"coverage", p.coverage},
                     {"selective_risk", p.selective_risk},
                     {"threshold", p.threshold}});
  }
  doc["risk_coverage"] = std::move(curve);
  return doc;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& doc) {
  EvaluationReport rep;
  try {
    rep.method = doc.at("method").get<std::string>();
    rep.metric = doc.value("metric", std::string());
    rep.n = doc.at("n").get<std::size_t>();
    rep.label_balance = doc.at("label_balance").get<double>();
    rep.brier = doc.at("brier").get<double>();
    rep.ece = doc.at("ece").get<double>();
    rep.auroc = doc.at("auroc").get<double>();
    const auto scheme = bin_scheme_from_string(doc.value("bin_scheme", "equal_width"));
    rep.scheme = scheme.value_or(BinScheme::equal_width);
    rep.bin_count = doc.value("bin_count", 0);
    for (const auto& s : doc.value("selective_accuracy", nlohmann::json::array()))
      rep.selective.push_back(
          {s.at("coverage").get<double>(), s.at("accuracy").get<double>()});
    for (const auto& b : doc.value("bins", nlohmann::json::array())) {
      rep.bins.push_back({b.at("lower").get<double>(), b.at("upper").get<double>(),
                          b.at("count").get<std::size_t>(),
                          b.at("mean_confidence").get<double>(),
                          b.at("accuracy").get<double>()});
    }
    for (const auto& p : doc.value("risk_coverage", nlohmann::json::array())) {
      rep.risk_coverage.push_back({p.at("coverage").get<double>(),
                                   p.at("selective_risk").get<double>(),
                                   p.at("threshold").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed evaluation report: ") + e.what());
  }
  return rep;
}

std::string EvaluationReport::csv_header() const {
  std::string header = "method,brier,ece,auroc";
  for (const auto& s : selective) {
    header += ",sel@";
    header += format_double(s.coverage);
  }
  return header;
}

std::string EvaluationReport::csv_row() const {
  std::string row = method;
  row += ',';
  row += format_double(brier);
  row += ',';
  row += format_double(ece);
  row += ',';
  row += format_double(auroc);
  for (const auto& s : selective) {
    row += ',';
    row += format_double(s.accuracy);
  }
  return row;
}

}  // namespace deferral
