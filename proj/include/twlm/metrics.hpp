// Task metrics on the percent scale, including entity-level F1 for BIO
// tagging, and the marginal-performance comparison statistic.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace twlm {

enum class Metric { accuracy, precision, recall, f1, pearson };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);

struct MetricValue {
  Metric metric = Metric::accuracy;
  double value = 0.0;  // percent; Pearson is stored x100
};

MetricValue accuracy(const std::vector<std::string>& predictions,
                     const std::vector<std::string>& gold);

struct PrfResult {
  MetricValue precision, recall, f1;
  // Set when no positives were predicted; precision is then defined as 0.
  bool zero_predicted_positives = false;
};

// Binary precision/recall/F1 against one positive label.
PrfResult precision_recall_f1(const std::vector<std::string>& predictions,
                              const std::vector<std::string>& gold,
                              const std::string& positive_label);

// Entity-level scoring: BIO tags are decoded into spans and a predicted span
// counts as a true positive only when boundaries and type both match.
PrfResult entity_prf(
    const std::vector<std::vector<std::string>>& predicted_tags,
    const std::vector<std::vector<std::string>>& gold_tags);

// Pearson correlation x100.  Throws DataError when either side has zero
// variance or fewer than two points.
MetricValue pearson(const std::vector<double>& predictions,
                    const std::vector<double>& gold);

/// Marginal performance: (new_value - ref_value) / (100 - ref_value) * 100.
/// Positive means the target model outperformed the reference.  Requires
/// ref_value < 100; both arguments live on the percent scale.
double marginal_performance(double ref_value, double new_value);

// BIO span decoding shared by entity_prf and its tests.  Lenient: an I-X
// without a compatible predecessor opens a new span.
struct Span {
  std::size_t sentence = 0;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::string type;
  bool operator==(const Span&) const = default;
};
std::vector<Span> decode_bio_spans(
    const std::vector<std::vector<std::string>>& tags);

}  // namespace twlm
