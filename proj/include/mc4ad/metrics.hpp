#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mc4ad/geometry.hpp"
#include "mc4ad/scoring.hpp"

namespace mc4ad {

namespace detail {

inline void check_labels(std::size_t scores, const Labels& labels, const char* what) {
  if (scores != labels.size()) {
    throw DataError(std::string(what) + ": " + std::to_string(scores) + " scores vs " + std::to_string(labels.size()) +
                    " labels");
  }
}

}  // namespace detail

/// Mann-Whitney AUROC: P(score of a random positive > score of a random
/// negative), ties counted one half.
inline double auroc(const std::vector<double>& scores, const Labels& labels) {
  detail::check_labels(scores.size(), labels, "auroc");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw DataError("auroc: labels contain a single class; skip this group");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum += avg_rank;
    }
    i = j;
  }
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Area under the precision-recall curve: step-wise sum of precision times
/// recall increments over a descending threshold sweep, equal scores taken
/// as one block.
inline double aupr(const std::vector<double>& scores, const Labels& labels) {
  detail::check_labels(scores.size(), labels, "aupr");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  if (pos == 0) throw DataError("aupr: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0;
  double fp = 0.0;
  double prev_recall = 0.0;
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / pos;
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return area;
}

/// Mean rank per method (rows) over categories (columns); higher metric is
/// better, ties share the average of their rank positions.
inline std::vector<double> mean_rank(const std::vector<std::vector<double>>& table) {
  if (table.empty() || table.front().empty()) throw DataError("mean_rank: empty table");
  const std::size_t methods = table.size();
  const std::size_t categories = table.front().size();
  for (const auto& row : table) {
    if (row.size() != categories) throw DataError("mean_rank: table is not rectangular");
  }
  std::vector<double> total(methods, 0.0);
  std::vector<std::size_t> order(methods);
  for (std::size_t c = 0; c < categories; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return table[a][c] > table[b][c]; });
    for (std::size_t i = 0; i < methods;) {
      std::size_t j = i;
      while (j < methods && table[order[j]][c] == table[order[i]][c]) ++j;
      const double avg = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t k = i; k < j; ++k) total[order[k]] += avg;
      i = j;
    }
  }
  for (auto& t : total) t /= static_cast<double>(categories);
  return total;
}

struct TestSample {
  std::string category;
  std::string name;
  PointCloud cloud;
  std::optional<Labels> mask;  // per-point ground truth
  std::uint8_t label = 0;      // object label
};

enum class PointPooling {
  per_category,  // concatenate all points of a category, one curve
  per_sample,    // one curve per sample, averaged over samples with both classes
};

struct EvalOptions {
  PointPooling pooling = PointPooling::per_category;
};

struct CategoryResult {
  std::string category;
  std::optional<double> o_auroc;
  std::optional<double> p_auroc;
  std::optional<double> o_aupr;
  std::optional<double> p_aupr;
  std::size_t n_samples = 0;
  std::size_t n_points = 0;
  double fps = 0.0;
  std::vector<std::string> notes;
};

struct EvalResult {
  std::vector<CategoryResult> categories;
  std::optional<double> o_auroc;  // unweighted category means over categories where defined
  std::optional<double> p_auroc;
  std::optional<double> o_aupr;
  std::optional<double> p_aupr;
  std::size_t n_samples = 0;
  std::size_t n_points = 0;
  double fps = 0.0;
};

namespace detail {

inline std::optional<double> try_metric(double (*metric)(const std::vector<double>&, const Labels&),
                                        const std::vector<double>& s, const Labels& l, const std::string& what,
                                        std::vector<std::string>& notes) {
  try {
    return metric(s, l);
  } catch (const DataError& e) {
    notes.push_back(what + " skipped: " + e.what());
    return std::nullopt;
  }
}

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& v) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& x : v) {
    if (x) {
      sum += *x;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace detail

/// Scores every test sample with the scorer of its category and reports
/// object- and point-level AUROC/AUPR plus scoring throughput.
inline EvalResult evaluate(const std::vector<TestSample>& test_set,
                           const std::function<Scorer(const std::string&)>& scorer_for,
                           const EvalOptions& options = {}) {
  if (test_set.empty()) throw DataError("evaluate: empty test set");
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < test_set.size(); ++i) by_category[test_set[i].category].push_back(i);

  EvalResult result;
  double total_seconds = 0.0;
  for (const auto& [category, indices] : by_category) {
    const Scorer scorer = scorer_for(category);
    CategoryResult cr;
    cr.category = category;
    cr.n_samples = indices.size();
    std::vector<double> object_scores;
    Labels object_labels;
    std::vector<double> point_scores;
    Labels point_labels;
    std::vector<std::optional<double>> sample_p_auroc;
    std::vector<std::optional<double>> sample_p_aupr;
    bool masks_complete = true;
    double seconds = 0.0;
    for (std::size_t i : indices) {
      const auto& s = test_set[i];
      const auto t0 = std::chrono::steady_clock::now();
      const ScoreResult r = scorer(s.cloud);
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      object_scores.push_back(r.object_score);
      object_labels.push_back(s.label);
      cr.n_points += s.cloud.size();
      if (!s.mask) {
        masks_complete = false;
        continue;
      }
      if (s.mask->size() != r.point_scores.size()) {
        throw DataError("evaluate: mask of " + s.name + " has " + std::to_string(s.mask->size()) + " entries for " +
                        std::to_string(r.point_scores.size()) + " points");
      }
      if (options.pooling == PointPooling::per_category) {
        point_scores.insert(point_scores.end(), r.point_scores.begin(), r.point_scores.end());
        point_labels.insert(point_labels.end(), s.mask->begin(), s.mask->end());
      } else {
        std::vector<std::string> ignored;
        sample_p_auroc.push_back(detail::try_metric(auroc, r.point_scores, *s.mask, "P-AUROC", ignored));
        sample_p_aupr.push_back(detail::try_metric(aupr, r.point_scores, *s.mask, "P-AUPR", ignored));
      }
    }
    cr.o_auroc = detail::try_metric(auroc, object_scores, object_labels, "O-AUROC", cr.notes);
    cr.o_aupr = detail::try_metric(aupr, object_scores, object_labels, "O-AUPR", cr.notes);
    if (!masks_complete) {
      cr.notes.push_back("point-level metrics skipped: missing masks");
    } else if (options.pooling == PointPooling::per_category) {
      cr.p_auroc = detail::try_metric(auroc, point_scores, point_labels, "P-AUROC", cr.notes);
      cr.p_aupr = detail::try_metric(aupr, point_scores, point_labels, "P-AUPR", cr.notes);
    } else {
      cr.p_auroc = detail::mean_of(sample_p_auroc);
      cr.p_aupr = detail::mean_of(sample_p_aupr);
    }
    // Clock resolution floor keeps fps finite for trivially fast scorers.
    seconds = std::max(seconds, 1e-9);
    cr.fps = static_cast<double>(indices.size()) / seconds;
    total_seconds += seconds;
    result.n_samples += cr.n_samples;
    result.n_points += cr.n_points;
    result.categories.push_back(std::move(cr));
  }

  const auto collect = [&](auto member) {
    std::vector<std::optional<double>> v;
    for (const auto& c : result.categories) v.push_back(c.*member);
    return detail::mean_of(v);
  };
  result.o_auroc = collect(&CategoryResult::o_auroc);
  result.p_auroc = collect(&CategoryResult::p_auroc);
  result.o_aupr = collect(&CategoryResult::o_aupr);
  result.p_aupr = collect(&CategoryResult::p_aupr);
  result.fps = static_cast<double>(result.n_samples) / total_seconds;
  return result;
}

inline std::string eval_csv(const EvalResult& r) {
  std::ostringstream os;
  os.precision(9);
  const auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("nan");
    std::ostringstream s;
    s.precision(9);
    s << *v;
    return s.str();
  };
  os << "category,o_auroc,p_auroc,o_aupr,p_aupr,n_samples,n_points,fps\n";
  for (const auto& c : r.categories) {
    os << c.category << ',' << cell(c.o_auroc) << ',' << cell(c.p_auroc) << ',' << cell(c.o_aupr) << ','
       << cell(c.p_aupr) << ',' << c.n_samples << ',' << c.n_points << ',' << c.fps << '\n';
  }
  os << "mean," << cell(r.o_auroc) << ',' << cell(r.p_auroc) << ',' << cell(r.o_aupr) << ',' << cell(r.p_aupr) << ','
     << r.n_samples << ',' << r.n_points << ',' << r.fps << '\n';
  return os.str();
}

}  // namespace mc4ad
