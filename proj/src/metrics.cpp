#include "twlm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "twlm/error.hpp"

namespace twlm {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::accuracy:
      return "A";
    case Metric::precision:
      return "P";
    case Metric::recall:
      return "R";
    case Metric::f1:
      return "F";
    case Metric::pearson:
      return "PC";
  }
  return "A";
}

Metric metric_from_string(const std::string& s) {
  if (s == "A") return Metric::accuracy;
  if (s == "P") return Metric::precision;
  if (s == "R") return Metric::recall;
  if (s == "F") return Metric::f1;
  if (s == "PC") return Metric::pearson;
  throw DataError("unknown metric code: " + s);
}

MetricValue accuracy(const std::vector<std::string>& predictions,
                     const std::vector<std::string>& gold) {
  if (predictions.size() != gold.size() || gold.empty()) {
    throw UsageError("accuracy needs equal-length non-empty inputs");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predictions[i] == gold[i]) ++hit;
  }
  return {Metric::accuracy,
          100.0 * static_cast<double>(hit) / static_cast<double>(gold.size())};
}

namespace {

PrfResult prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  PrfResult r;
  r.zero_predicted_positives = (tp + fp) == 0;
  const double p =
      r.zero_predicted_positives
          ? 0.0
          : 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double rec =
      (tp + fn) == 0
          ? 0.0
          : 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double f = (p + rec) == 0.0 ? 0.0 : 2.0 * p * rec / (p + rec);
  r.precision = {Metric::precision, p};
  r.recall = {Metric::recall, rec};
  r.f1 = {Metric::f1, f};
  return r;
}

}  // namespace

PrfResult precision_recall_f1(const std::vector<std::string>& predictions,
                              const std::vector<std::string>& gold,
                              const std::string& positive_label) {
  if (predictions.size() != gold.size() || gold.empty()) {
    throw UsageError("precision_recall_f1 needs equal-length non-empty inputs");
  }
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predictions[i] == positive_label;
    const bool g = gold[i] == positive_label;
    if (p && g) ++tp;
    if (p && !g) ++fp;
    if (!p && g) ++fn;
  }
  return prf_from_counts(tp, fp, fn);
}

std::vector<Span> decode_bio_spans(
    const std::vector<std::vector<std::string>>& tags) {
  std::vector<Span> spans;
  for (std::size_t s = 0; s < tags.size(); ++s) {
    const auto& sent = tags[s];
    std::size_t i = 0;
    while (i < sent.size()) {
      const std::string& tag = sent[i];
      if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
        const std::string type = tag.substr(2);
        const std::size_t begin = i;
        ++i;
        while (i < sent.size() && sent[i].size() > 2 && sent[i][0] == 'I' &&
               sent[i][1] == '-' && sent[i].substr(2) == type) {
          ++i;
        }
        spans.push_back({s, begin, i, type});
      } else {
        ++i;
      }
    }
  }
  return spans;
}

PrfResult entity_prf(
    const std::vector<std::vector<std::string>>& predicted_tags,
    const std::vector<std::vector<std::string>>& gold_tags) {
  if (predicted_tags.size() != gold_tags.size()) {
    throw UsageError("entity_prf needs one tag sequence per sentence on both "
                     "sides");
  }
  const auto pred = decode_bio_spans(predicted_tags);
  const auto gold = decode_bio_spans(gold_tags);
  std::int64_t tp = 0;
  for (const Span& sp : pred) {
    if (std::find(gold.begin(), gold.end(), sp) != gold.end()) ++tp;
  }
  const std::int64_t fp = static_cast<std::int64_t>(pred.size()) - tp;
  const std::int64_t fn = static_cast<std::int64_t>(gold.size()) - tp;
  return prf_from_counts(tp, fp, fn);
}

MetricValue pearson(const std::vector<double>& predictions,
                    const std::vector<double>& gold) {
  if (predictions.size() != gold.size() || predictions.size() < 2) {
    throw DataError("pearson needs >=2 paired points");
  }
  const double n = static_cast<double>(predictions.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    mx += predictions[i];
    my += gold[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double dx = predictions[i] - mx;
    const double dy = gold[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw DataError("undefined correlation: zero variance");
  }
  return {Metric::pearson, 100.0 * sxy / std::sqrt(sxx * syy)};
}

double marginal_performance(double ref_value, double new_value) {
  if (ref_value < 0.0 || ref_value > 100.0 || new_value < 0.0 ||
      new_value > 100.0) {
    throw UsageError("marginal_performance expects percent-scale inputs");
  }
  if (ref_value == 100.0) {
    throw UsageError("undefined marginal performance: reference at 100");
  }
  return (new_value - ref_value) / (100.0 - ref_value) * 100.0;
}

}  // namespace twlm
