#pragma once

// Deterministic synthetic-data generators for tests. All distributions are
// hand-rolled on top of mt19937_64 so the streams are identical on every
// platform and standard library.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "deferral/prediction_log.hpp"

namespace synth {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  double exponential() { return -std::log1p(-uniform()); }

  // Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Integer shape parameters only: Beta(a,b) = G_a / (G_a + G_b) with
  // gamma variates as sums of exponentials.
  double beta(int alpha, int beta) {
    double ga = 0.0, gb = 0.0;
    for (int i = 0; i < alpha; ++i) ga += exponential();
    for (int i = 0; i < beta; ++i) gb += exponential();
    return ga / (ga + gb);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct ScoredSample {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

// label ~ Bernoulli(sigmoid(2s - 1)), s uniform on [-3, 3].
inline ScoredSample platt_recovery_sample(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ScoredSample out;
  out.scores.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.uniform(-3.0, 3.0);
    out.scores.push_back(s);
    out.labels.push_back(rng.bernoulli(sigmoid(2.0 * s - 1.0)) ? 1 : 0);
  }
  return out;
}

// Overconfident generative log: confidence s ~ Beta(5,2),
// correct ~ Bernoulli(0.55*s + 0.2).
inline ScoredSample overconfident_sample(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ScoredSample out;
  out.scores.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.beta(5, 2);
    out.scores.push_back(s);
    out.labels.push_back(rng.bernoulli(0.55 * s + 0.2) ? 1 : 0);
  }
  return out;
}

// Classification records with logits ~ N(0, I_C) and label_correct drawn as
// "argmax is the true class" under softmax(logits / true_temperature).
inline std::vector<deferral::PredictionRecord> temperature_log(
    std::size_t n, int num_classes, double true_temperature, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<deferral::PredictionRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    deferral::PredictionRecord rec;
    rec.id = "t" + std::to_string(i);
    rec.task = deferral::Task::classification;
    rec.logits.resize(static_cast<std::size_t>(num_classes));
    for (auto& z : rec.logits) z = rng.normal();

    int argmax = 0;
    for (int c = 1; c < num_classes; ++c)
      if (rec.logits[static_cast<std::size_t>(c)] >
          rec.logits[static_cast<std::size_t>(argmax)])
        argmax = c;
    rec.predicted_class = argmax;

    double max_z = rec.logits[static_cast<std::size_t>(argmax)];
    std::vector<double> probs(rec.logits.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
      probs[c] = std::exp((rec.logits[c] - max_z) / true_temperature);
      sum += probs[c];
    }
    const double u = rng.uniform() * sum;
    double acc = 0.0;
    int true_class = static_cast<int>(probs.size()) - 1;
    for (std::size_t c = 0; c < probs.size(); ++c) {
      acc += probs[c];
      if (u < acc) {
        true_class = static_cast<int>(c);
        break;
      }
    }
    rec.label_correct = true_class == argmax;
    records.push_back(std::move(rec));
  }
  return records;
}

// Perfectly calibrated stream: p ~ U[0,1], y ~ Bernoulli(p).
inline ScoredSample calibrated_stream(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ScoredSample out;
  out.scores.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = rng.uniform();
    out.scores.push_back(p);
    out.labels.push_back(rng.bernoulli(p) ? 1 : 0);
  }
  return out;
}

}  // namespace synth
