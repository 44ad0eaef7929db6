#include "deferral/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "deferral/errors.hpp"
#include "deferral/io.hpp"
#include "deferral/version.hpp"

namespace deferral {

namespace {

// log(1 - e^x) for x < 0, stable near both ends.
double log1mexp(double x) {
  if (x >= 0.0) return -std::numeric_limits<double>::infinity();
  if (x > -std::numbers::ln2) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^-|z|) + branch: stable logistic loss.
double logistic_nll(double z, bool y) {
  const double soft = std::log1p(std::exp(-std::abs(z)));
  if (y) return z >= 0.0 ? soft : soft - z;
  return z >= 0.0 ? soft + z : soft;
}

struct GoldenResult {
  double x = 0.0;
  int iterations = 0;
  bool interval_converged = false;
};

template <typename F>
GoldenResult golden_section_minimize(F f, double lo, double hi, double tol,
                                     int max_iter = 200) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  int iter = 0;
  while (b - a > tol && iter < max_iter) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
    ++iter;
  }
  return {(a + b) / 2.0, iter, b - a <= tol};
}

// Cholesky solve of the SPD system H x = g; returns false when H is not
// positive definite even after a small diagonal boost.
bool solve_spd(std::vector<double> h, std::vector<double> g, std::size_t d,
               std::vector<double>& x) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::vector<double> l(d * d, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < d && ok; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double sum = h[i * d + j];
        for (std::size_t k = 0; k < j; ++k) sum -= l[i * d + k] * l[j * d + k];
        if (i == j) {
          if (sum <= 0.0) { ok = false; break; }
          l[i * d + i] = std::sqrt(sum);
        } else {
          l[i * d + j] = sum / l[j * d + j];
        }
      }
    }
    if (ok) {
      std::vector<double> y(d);
      for (std::size_t i = 0; i < d; ++i) {
        double sum = g[i];
        for (std::size_t k = 0; k < i; ++k) sum -= l[i * d + k] * y[k];
        y[i] = sum / l[i * d + i];
      }
      x.assign(d, 0.0);
      for (std::size_t ii = d; ii-- > 0;) {
        double sum = y[ii];
        for (std::size_t k = ii + 1; k < d; ++k) sum -= l[k * d + ii] * x[k];
        x[ii] = sum / l[ii * d + ii];
      }
      return true;
    }
    double max_diag = 0.0;
    for (std::size_t i = 0; i < d; ++i) max_diag = std::max(max_diag, h[i * d + i]);
    const double boost = std::max(1e-12, 1e-10 * max_diag);
    for (std::size_t i = 0; i < d; ++i) h[i * d + i] += boost;
  }
  return false;
}

// Damped Newton for weighted, optionally L2-regularized logistic regression.
// Rows of `features` have length d (last column is the intercept carrier 1).
// The L2 penalty 0.5*lambda*||theta||^2 covers every component except the
// intercept. Objective and gradient are sums over records.
struct NewtonFit {
  std::vector<double> theta;
  FitDiagnostics diag;
};

NewtonFit newton_logistic(const std::vector<std::vector<double>>& features,
                          std::span<const std::uint8_t> labels,
                          std::span<const double> sample_weights, double lambda,
                          double tol, int max_iter) {
  const std::size_t n = features.size();
  const std::size_t d = features.front().size();

  std::vector<double> theta(d, 0.0);

  auto objective = [&](const std::vector<double>& th) {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += th[j] * features[i][j];
      obj += sample_weights[i] * logistic_nll(z, labels[i] != 0);
    }
    for (std::size_t j = 0; j + 1 < d; ++j) obj += 0.5 * lambda * th[j] * th[j];
    return obj;
  };

  NewtonFit fit;
  double obj = objective(theta);
  std::vector<double> grad(d), hess(d * d), step;

  int iter = 0;
  double grad_norm = 0.0;
  bool converged = false;
  for (; iter < max_iter; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += theta[j] * features[i][j];
      const double p = sigmoid(z);
      const double r = sample_weights[i] * (p - (labels[i] != 0 ? 1.0 : 0.0));
      const double w = sample_weights[i] * p * (1.0 - p);
      for (std::size_t j = 0; j < d; ++j) {
        grad[j] += r * features[i][j];
        for (std::size_t k = 0; k <= j; ++k)
          hess[j * d + k] += w * features[i][j] * features[i][k];
      }
    }
    for (std::size_t j = 0; j + 1 < d; ++j) {
      grad[j] += lambda * theta[j];
      hess[j * d + j] += lambda;
    }
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = j + 1; k < d; ++k) hess[j * d + k] = hess[k * d + j];

    grad_norm = std::sqrt(
        std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
    if (grad_norm <= tol) { converged = true; break; }

    if (!solve_spd(hess, grad, d, step)) break;

    // Halve the step until the objective decreases.
    double t = 1.0;
    bool improved = false;
    std::vector<double> trial(d);
    for (int h = 0; h < 60; ++h) {
      for (std::size_t j = 0; j < d; ++j) trial[j] = theta[j] - t * step[j];
      const double trial_obj = objective(trial);
      if (trial_obj < obj) {
        theta = trial;
        obj = trial_obj;
        improved = true;
        break;
      }
      t /= 2.0;
    }
    if (!improved) break;  // numerically stuck; diagnostics tell the story
  }

  if (!converged) {
    // Report the gradient at the exit point, not at the last line-search start.
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += theta[j] * features[i][j];
      const double r = sample_weights[i] * (sigmoid(z) - (labels[i] != 0 ? 1.0 : 0.0));
      for (std::size_t j = 0; j < d; ++j) grad[j] += r * features[i][j];
    }
    for (std::size_t j = 0; j + 1 < d; ++j) grad[j] += lambda * theta[j];
    grad_norm = std::sqrt(
        std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
  }

  fit.theta = std::move(theta);
  fit.diag.iterations = iter;
  fit.diag.final_objective = obj;
  fit.diag.gradient_norm = grad_norm;
  fit.diag.converged = converged;
  return fit;
}

void check_binary_labels(std::span<const std::uint8_t> labels) {
  bool any_pos = false, any_neg = false;
  for (auto y : labels) (y != 0 ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw FitError(std::string("degenerate labels: all ") +
                   (any_pos ? "correct" : "incorrect"));
}

std::string digest_pairs(std::span<const double> scores,
                         std::span<const std::uint8_t> labels) {
  std::string buf;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    buf += format_double(scores[i]);
    buf += labels[i] != 0 ? ",1\n" : ",0\n";
  }
  return fnv1a_hex(buf);
}

std::string digest_records(std::span<const PredictionRecord> records) {
  std::string buf;
  for (const auto& r : records) {
    buf += r.id;
    buf += r.label_correct ? ",1\n" : ",0\n";
  }
  return fnv1a_hex(buf);
}

FitMeta make_meta(std::size_t n, std::size_t n_correct, std::string digest) {
  FitMeta meta;
  meta.record_count = n;
  meta.label_balance = n > 0 ? static_cast<double>(n_correct) / static_cast<double>(n) : 0.0;
  meta.data_digest = std::move(digest);
  meta.toolkit_version = std::string(kToolkitVersion);
  return meta;
}

std::pair<Calibrator, FitDiagnostics> fit_platt_impl(
    std::span<const double> scores, std::span<const std::uint8_t> labels,
    double neg_weight, CalibratorKind kind, std::string input_spec) {
  if (scores.size() != labels.size())
    throw InputError("scores and labels lengths differ");
  if (scores.size() < 10) throw FitError("need at least 10 pairs");
  check_binary_labels(labels);
  if (std::all_of(scores.begin(), scores.end(),
                  [&](double s) { return s == scores[0]; }))
    throw FitError("constant scores");
  if (neg_weight <= 0.0) throw FitError("neg_weight must be positive");

  std::vector<std::vector<double>> features(scores.size());
  std::vector<double> weights(scores.size());
  std::size_t n_correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    features[i] = {scores[i], 1.0};
    weights[i] = labels[i] != 0 ? 1.0 : neg_weight;
    if (labels[i] != 0) ++n_correct;
  }

  NewtonFit fit = newton_logistic(features, labels, weights, 0.0, 1e-6, 100);

  Calibrator cal;
  cal.kind = kind;
  cal.input_spec = std::move(input_spec);
  cal.params = PlattParams{fit.theta[0], fit.theta[1], neg_weight};
  cal.fit_meta = make_meta(scores.size(), n_correct, digest_pairs(scores, labels));
  return {std::move(cal), fit.diag};
}

double lookup_metric_confidence(const Calibrator& cal, const PredictionRecord& record,
                                const UncertaintyScoreSet* scores) {
  std::string_view spec = cal.input_spec;
  if (spec == "sample_dispersion") spec = "sample_logprob_dispersion";
  const auto id = metric_from_name(spec);
  if (!id)
    throw InputError("calibrator input_spec '" + cal.input_spec +
                     "' does not name a metric");
  if (scores) {
    const auto it = scores->confidence.find(*id);
    if (it != scores->confidence.end()) return it->second;
  }
  const auto it = record.uncertainty_confidence.find(std::string(spec));
  if (it != record.uncertainty_confidence.end()) return it->second;
  const auto computed = score_record(record, MetricSelector::of({*id}));
  return computed.confidence.at(*id);
}

}  // namespace

std::string_view to_string(CalibratorKind kind) {
  switch (kind) {
    case CalibratorKind::temperature: return "temperature";
    case CalibratorKind::platt: return "platt";
    case CalibratorKind::weighted_platt: return "weighted_platt";
    case CalibratorKind::isotonic: return "isotonic";
    case CalibratorKind::logit_feature: return "logit_feature";
    case CalibratorKind::variance_aware: return "variance_aware";
  }
  return "?";
}

std::optional<CalibratorKind> calibrator_kind_from_string(std::string_view name) {
  for (auto kind : {CalibratorKind::temperature, CalibratorKind::platt,
                    CalibratorKind::weighted_platt, CalibratorKind::isotonic,
                    CalibratorKind::logit_feature, CalibratorKind::variance_aware})
    if (to_string(kind) == name) return kind;
  return std::nullopt;
}

nlohmann::ordered_json FitDiagnostics::to_json() const {
  nlohmann::ordered_json doc;
  doc["iterations"] = iterations;
  doc["final_objective"] = final_objective;
  doc["gradient_norm"] = gradient_norm;
  doc["converged"] = converged;
  return doc;
}

std::pair<Calibrator, FitDiagnostics> fit_temperature(
    std::span<const PredictionRecord> records) {
  std::vector<const PredictionRecord*> cls;
  for (const auto& r : records)
    if (r.task == Task::classification) cls.push_back(&r);
  if (cls.empty()) throw FitError("no classification records");
  if (cls.size() < 10) throw FitError("need at least 10 classification records");
  for (const auto* r : cls) {
    if (r->logits.size() < 2)
      throw FitError("record '" + r->id + "' has fewer than 2 logits");
  }

  std::vector<std::uint8_t> labels;
  labels.reserve(cls.size());
  std::size_t n_correct = 0;
  for (const auto* r : cls) {
    labels.push_back(r->label_correct ? 1 : 0);
    if (r->label_correct) ++n_correct;
  }
  check_binary_labels(labels);

  // Mean binary NLL of the predicted-class probability under softmax(z/T).
  auto nll = [&](double temp) {
    double total = 0.0;
    for (const auto* r : cls) {
      const auto& z = r->logits;
      const int pc = r->predicted_class ? *r->predicted_class
                                        : static_cast<int>(std::distance(
                                              z.begin(),
                                              std::max_element(z.begin(), z.end())));
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp((v - m) / temp);
      const double logp = (z[static_cast<std::size_t>(pc)] - m) / temp - std::log(sum);
      total += r->label_correct ? -logp : -log1mexp(logp);
    }
    return total / static_cast<double>(cls.size());
  };

  const double lo = 0.05, hi = 20.0, tol = 1e-4;
  const GoldenResult res = golden_section_minimize(nll, lo, hi, tol);

  const double h = 1e-6 * std::max(1.0, res.x);
  const double grad = (nll(res.x + h) - nll(res.x - h)) / (2.0 * h);
  const bool interior = res.x - lo > 10.0 * tol && hi - res.x > 10.0 * tol;

  FitDiagnostics diag;
  diag.iterations = res.iterations;
  diag.final_objective = nll(res.x);
  diag.gradient_norm = std::abs(grad);
  diag.converged = res.interval_converged && interior;

  Calibrator cal;
  cal.kind = CalibratorKind::temperature;
  cal.input_spec = "raw_logits";
  cal.params = TemperatureParams{res.x};
  std::vector<PredictionRecord> copies;  // digest over the classification subset
  copies.reserve(cls.size());
  for (const auto* r : cls) copies.push_back(*r);
  cal.fit_meta = make_meta(cls.size(), n_correct, digest_records(copies));
  return {std::move(cal), diag};
}

std::pair<Calibrator, FitDiagnostics> fit_platt(std::span<const double> scores,
                                                std::span<const std::uint8_t> labels,
                                                std::string input_spec) {
  return fit_platt_impl(scores, labels, 1.0, CalibratorKind::platt,
                        std::move(input_spec));
}

std::pair<Calibrator, FitDiagnostics> fit_weighted_platt(
    std::span<const double> scores, std::span<const std::uint8_t> labels,
    double neg_weight, std::string input_spec) {
  if (neg_weight == kNegWeightAuto) {
    std::size_t pos = 0;
    for (auto y : labels)
      if (y != 0) ++pos;
    const std::size_t neg = labels.size() - pos;
    if (neg == 0 || pos == 0) check_binary_labels(labels);  // throws
    neg_weight = static_cast<double>(pos) / static_cast<double>(neg);
  }
  return fit_platt_impl(scores, labels, neg_weight, CalibratorKind::weighted_platt,
                        std::move(input_spec));
}

std::vector<double> pool_adjacent_violators(std::span<const WeightedPoint> points) {
  struct Block {
    double value;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(points.size());
  for (const auto& p : points) {
    blocks.push_back({p.y, p.weight, 1});
    while (blocks.size() >= 2 &&
           blocks[blocks.size() - 2].value >= blocks.back().value) {
      const Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double w = prev.weight + top.weight;
      prev.value = (prev.value * prev.weight + top.value * top.weight) / w;
      prev.weight = w;
      prev.count += top.count;
    }
  }
  std::vector<double> fitted;
  fitted.reserve(points.size());
  for (const auto& b : blocks)
    fitted.insert(fitted.end(), b.count, b.value);
  return fitted;
}

Calibrator fit_isotonic(std::span<const double> scores,
                        std::span<const std::uint8_t> labels,
                        std::string input_spec) {
  if (scores.size() != labels.size())
    throw InputError("scores and labels lengths differ");
  if (scores.size() < 2) throw FitError("need at least 2 pairs");
  check_binary_labels(labels);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Pre-average ties into single weighted points.
  std::vector<WeightedPoint> points;
  std::size_t i = 0;
  std::size_t n_correct = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      sum += labels[order[j]] != 0 ? 1.0 : 0.0;
      ++j;
    }
    const auto count = static_cast<double>(j - i);
    points.push_back({scores[order[i]], sum / count, count});
    i = j;
  }
  for (auto y : labels)
    if (y != 0) ++n_correct;

  const std::vector<double> fitted = pool_adjacent_violators(points);

  IsotonicParams params;
  params.knots.reserve(points.size());
  for (std::size_t k = 0; k < points.size(); ++k)
    params.knots.push_back({points[k].x, fitted[k]});

  Calibrator cal;
  cal.kind = CalibratorKind::isotonic;
  cal.input_spec = std::move(input_spec);
  cal.params = std::move(params);
  cal.fit_meta = make_meta(scores.size(), n_correct, digest_pairs(scores, labels));
  return cal;
}

std::vector<double> logit_feature_vector(const PredictionRecord& record, int top_k) {
  if (record.logits.size() < 2)
    throw InputError("logit features require at least 2 logits (record '" +
                     record.id + "')");
  std::vector<double> sorted(record.logits.begin(), record.logits.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(top_k) + 3);
  for (int j = 0; j < top_k; ++j) {
    x.push_back(j < static_cast<int>(sorted.size())
                    ? sorted[static_cast<std::size_t>(j)]
                    : sorted.back());
  }
  const auto set = classification_metrics(record.logits);
  x.push_back(set.raw.at(MetricId::predictive_entropy));
  x.push_back(set.raw.at(MetricId::logit_margin));
  x.push_back(set.raw.at(MetricId::negative_energy));
  return x;
}

std::pair<Calibrator, FitDiagnostics> fit_logit_feature(
    std::span<const PredictionRecord> records, double lambda) {
  if (lambda < 0.0) throw FitError("lambda must be nonnegative");
  std::vector<const PredictionRecord*> cls;
  for (const auto& r : records)
    if (r.task == Task::classification) cls.push_back(&r);
  if (cls.size() < 20) throw FitError("need at least 20 classification records");

  std::size_t max_c = 0;
  for (const auto* r : cls) max_c = std::max(max_c, r->logits.size());
  const int top_k = static_cast<int>(std::min<std::size_t>(max_c, 10));
  const std::size_t dim = static_cast<std::size_t>(top_k) + 3;

  std::vector<std::vector<double>> raw_features;
  std::vector<std::uint8_t> labels;
  raw_features.reserve(cls.size());
  labels.reserve(cls.size());
  std::size_t n_correct = 0;
  for (const auto* r : cls) {
    raw_features.push_back(logit_feature_vector(*r, top_k));
    labels.push_back(r->label_correct ? 1 : 0);
    if (r->label_correct) ++n_correct;
  }
  check_binary_labels(labels);

  std::vector<double> means(dim, 0.0), stds(dim, 0.0);
  for (const auto& x : raw_features)
    for (std::size_t j = 0; j < dim; ++j) means[j] += x[j];
  for (auto& m : means) m /= static_cast<double>(raw_features.size());
  for (const auto& x : raw_features)
    for (std::size_t j = 0; j < dim; ++j)
      stds[j] += (x[j] - means[j]) * (x[j] - means[j]);
  for (auto& s : stds) {
    s = std::sqrt(s / static_cast<double>(raw_features.size()));
    if (s == 0.0) s = 1.0;  // constant feature: leave it centered
  }

  std::vector<std::vector<double>> features(raw_features.size());
  for (std::size_t idx = 0; idx < raw_features.size(); ++idx) {
    auto& row = features[idx];
    row.resize(dim + 1);
    for (std::size_t j = 0; j < dim; ++j)
      row[j] = (raw_features[idx][j] - means[j]) / stds[j];
    row[dim] = 1.0;
  }

  const std::vector<double> unit_weights(features.size(), 1.0);
  NewtonFit fit = newton_logistic(features, labels, unit_weights, lambda, 1e-6, 200);

  LogitFeatureParams params;
  params.top_k = top_k;
  params.weights.assign(fit.theta.begin(), fit.theta.begin() + static_cast<long>(dim));
  params.intercept = fit.theta[dim];
  params.lambda = lambda;
  params.feature_means = std::move(means);
  params.feature_stds = std::move(stds);

  Calibrator cal;
  cal.kind = CalibratorKind::logit_feature;
  cal.input_spec = "raw_logits";
  std::vector<PredictionRecord> copies;
  copies.reserve(cls.size());
  for (const auto* r : cls) copies.push_back(*r);
  cal.fit_meta = make_meta(cls.size(), n_correct, digest_records(copies));
  cal.params = std::move(params);
  return {std::move(cal), fit.diag};
}

Calibrator fit_variance_aware(std::span<const PredictionRecord> records) {
  std::vector<const PredictionRecord*> gen;
  for (const auto& r : records)
    if (r.task == Task::generation) gen.push_back(&r);
  if (gen.empty()) throw FitError("no generation records");

  std::vector<double> feature;
  std::vector<std::uint8_t> labels;
  feature.reserve(gen.size());
  labels.reserve(gen.size());
  for (const auto* r : gen) {
    if (r->samples.size() < 2)
      throw FitError("record '" + r->id + "' lacks the 2+ samples required for "
                     "variance-aware calibration");
    const auto set = sampling_metrics(r->samples);
    feature.push_back(set.confidence.at(MetricId::sample_logprob_dispersion));
    labels.push_back(r->label_correct ? 1 : 0);
  }

  Calibrator cal = fit_isotonic(feature, labels, "sample_dispersion");
  cal.kind = CalibratorKind::variance_aware;
  return cal;
}

double interpolate_knots(std::span<const IsotonicKnot> knots, double score) {
  if (knots.empty()) throw InvariantError("isotonic calibrator has no knots");
  if (score <= knots.front().score) return knots.front().probability;
  if (score >= knots.back().score) return knots.back().probability;
  // Invariant: strictly increasing knot scores.
  const auto it = std::lower_bound(
      knots.begin(), knots.end(), score,
      [](const IsotonicKnot& k, double s) { return k.score < s; });
  const auto& k0 = *(it - 1);
  const auto& k1 = *it;
  const double t = (score - k0.score) / (k1.score - k0.score);
  return k0.probability + t * (k1.probability - k0.probability);
}

double apply_calibrator(const Calibrator& calibrator, const PredictionRecord& record,
                        const UncertaintyScoreSet* scores) {
  double p = 0.0;
  switch (calibrator.kind) {
    case CalibratorKind::temperature: {
      if (record.logits.size() < 2)
        throw InputError("temperature calibrator needs logits (record '" + record.id +
                         "')");
      const auto& params = std::get<TemperatureParams>(calibrator.params);
      std::vector<double> scaled(record.logits.size());
      for (std::size_t i = 0; i < scaled.size(); ++i)
        scaled[i] = record.logits[i] / params.temperature;
      const auto probs = softmax(scaled);
      p = *std::max_element(probs.begin(), probs.end());
      break;
    }
    case CalibratorKind::platt:
    case CalibratorKind::weighted_platt: {
      const auto& params = std::get<PlattParams>(calibrator.params);
      const double s = lookup_metric_confidence(calibrator, record, scores);
      p = sigmoid(params.a * s + params.b);
      break;
    }
    case CalibratorKind::isotonic:
    case CalibratorKind::variance_aware: {
      const auto& params = std::get<IsotonicParams>(calibrator.params);
      const double s = lookup_metric_confidence(calibrator, record, scores);
      p = interpolate_knots(params.knots, s);
      break;
    }
    case CalibratorKind::logit_feature: {
      const auto& params = std::get<LogitFeatureParams>(calibrator.params);
      const auto x = logit_feature_vector(record, params.top_k);
      double z = params.intercept;
      for (std::size_t j = 0; j < x.size(); ++j)
        z += params.weights[j] * (x[j] - params.feature_means[j]) /
             params.feature_stds[j];
      p = sigmoid(z);
      break;
    }
  }
  return std::clamp(p, 0.0, 1.0);
}

nlohmann::ordered_json calibrator_to_json(const Calibrator& calibrator) {
  nlohmann::ordered_json doc;
  doc["version"] = kFormatVersion;
  doc["kind"] = to_string(calibrator.kind);
  doc["input_spec"] = calibrator.input_spec;

  nlohmann::ordered_json params;
  switch (calibrator.kind) {
    case CalibratorKind::temperature:
      params["temperature"] = std::get<TemperatureParams>(calibrator.params).temperature;
      break;
    case CalibratorKind::platt:
    case CalibratorKind::weighted_platt: {
      const auto& p = std::get<PlattParams>(calibrator.params);
      params["a"] = p.a;
      params["b"] = p.b;
      if (calibrator.kind == CalibratorKind::weighted_platt)
        params["neg_weight"] = p.neg_weight;
      break;
    }
    case CalibratorKind::isotonic:
    case CalibratorKind::variance_aware: {
      auto knots = nlohmann::ordered_json::array();
      for (const auto& k : std::get<IsotonicParams>(calibrator.params).knots)
        knots.push_back({k.score, k.probability});
      params["knots"] = std::move(knots);
      break;
    }
    case CalibratorKind::logit_feature: {
      const auto& p = std::get<LogitFeatureParams>(calibrator.params);
      params["top_k"] = p.top_k;
      params["weights"] = p.weights;
      params["intercept"] = p.intercept;
      params["lambda"] = p.lambda;
      params["feature_means"] = p.feature_means;
      params["feature_stds"] = p.feature_stds;
      break;
    }
  }
  doc["parameters"] = std::move(params);
  doc["fit_meta"] = {{"record_count", calibrator.fit_meta.record_count},
                     {"label_balance", calibrator.fit_meta.label_balance},
                     {"data_digest", calibrator.fit_meta.data_digest},
                     {"toolkit_version", calibrator.fit_meta.toolkit_version}};
  return doc;
}

Calibrator calibrator_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("calibrator file is not a JSON object");
  if (!doc.contains("version") || !doc["version"].is_number_integer())
    throw ParseError("calibrator file missing integer 'version'");
  if (doc["version"].get<int>() != kFormatVersion)
    throw ParseError("unsupported calibrator version " +
                     std::to_string(doc["version"].get<int>()));
  if (!doc.contains("kind") || !doc["kind"].is_string())
    throw ParseError("calibrator file missing 'kind'");
  const auto kind = calibrator_kind_from_string(doc["kind"].get<std::string>());
  if (!kind)
    throw ParseError("unknown calibrator kind '" + doc["kind"].get<std::string>() + "'");
  if (!doc.contains("input_spec") || !doc["input_spec"].is_string())
    throw ParseError("calibrator file missing 'input_spec'");
  if (!doc.contains("parameters") || !doc["parameters"].is_object())
    throw ParseError("calibrator file missing 'parameters'");

  Calibrator cal;
  cal.kind = *kind;
  cal.input_spec = doc["input_spec"].get<std::string>();
  const auto& params = doc["parameters"];

  try {
    switch (cal.kind) {
      case CalibratorKind::temperature: {
        TemperatureParams p{params.at("temperature").get<double>()};
        if (!(p.temperature > 0.0)) throw ParseError("temperature must be > 0");
        cal.params = p;
        break;
      }
      case CalibratorKind::platt:
      case CalibratorKind::weighted_platt: {
        PlattParams p;
        p.a = params.at("a").get<double>();
        p.b = params.at("b").get<double>();
        p.neg_weight = params.value("neg_weight", 1.0);
        if (!(p.neg_weight > 0.0)) throw ParseError("neg_weight must be > 0");
        cal.params = p;
        break;
      }
      case CalibratorKind::isotonic:
      case CalibratorKind::variance_aware: {
        IsotonicParams p;
        for (const auto& k : params.at("knots")) {
          if (!k.is_array() || k.size() != 2)
            throw ParseError("knot is not a [score, probability] pair");
          p.knots.push_back({k[0].get<double>(), k[1].get<double>()});
        }
        if (p.knots.empty()) throw ParseError("isotonic calibrator has no knots");
        for (std::size_t i = 0; i < p.knots.size(); ++i) {
          const auto& k = p.knots[i];
          if (!std::isfinite(k.score) || k.probability < 0.0 || k.probability > 1.0)
            throw ParseError("knot out of range");
          if (i > 0 && (k.score <= p.knots[i - 1].score ||
                        k.probability < p.knots[i - 1].probability))
            throw ParseError("knots must have increasing scores and nondecreasing "
                             "probabilities");
        }
        cal.params = std::move(p);
        break;
      }
      case CalibratorKind::logit_feature: {
        LogitFeatureParams p;
        p.top_k = params.at("top_k").get<int>();
        p.weights = params.at("weights").get<std::vector<double>>();
        p.intercept = params.at("intercept").get<double>();
        p.lambda = params.at("lambda").get<double>();
        p.feature_means = params.at("feature_means").get<std::vector<double>>();
        p.feature_stds = params.at("feature_stds").get<std::vector<double>>();
        const auto dim = static_cast<std::size_t>(p.top_k) + 3;
        if (p.top_k < 1 || p.weights.size() != dim || p.feature_means.size() != dim ||
            p.feature_stds.size() != dim)
          throw ParseError("logit_feature parameter lengths are inconsistent");
        cal.params = std::move(p);
        break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed calibrator parameters: ") + e.what());
  }

  if (doc.contains("fit_meta") && doc["fit_meta"].is_object()) {
    const auto& m = doc["fit_meta"];
    cal.fit_meta.record_count = m.value("record_count", std::size_t{0});
    cal.fit_meta.label_balance = m.value("label_balance", 0.0);
    cal.fit_meta.data_digest = m.value("data_digest", std::string());
    cal.fit_meta.toolkit_version = m.value("toolkit_version", std::string());
  }
  return cal;
}

void save_calibrator(const Calibrator& calibrator, const std::string& path) {
  write_file_atomic(path, calibrator_to_json(calibrator).dump(2) + "\n");
}

Calibrator load_calibrator(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed calibrator file '" + path + "': " + e.what());
  }
  return calibrator_from_json(doc);
}

}  // namespace deferral
