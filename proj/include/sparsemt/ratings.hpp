#pragma once

#include <map>
#include <string>
#include <vector>

namespace sparsemt {

// One crowd rating of one system's translation of one item, 6-point scale.
struct RatingRecord {
  std::string item_id;
  std::string system;  // "dense" or "sparse"
  std::string rater_id;
  int rating = 0;  // 1..6
};

struct RatingSummary {
  // mean over items of the per-item median across raters
  double dense_mean_of_medians = 0.0;
  double sparse_mean_of_medians = 0.0;
  int items = 0;     // items rated for both systems
  int excluded = 0;  // items missing one system entirely
  double dense_win_pct = 0.0;
  double neither_pct = 0.0;
  double sparse_win_pct = 0.0;
};

// Medians across raters per (item, system); items lacking either system are
// excluded and counted. Wins compare per-item medians.
RatingSummary aggregate_ratings(const std::vector<RatingRecord>& records);

// CSV {item_id, system, rater_id, rating}; a leading header row is allowed.
std::vector<RatingRecord> load_ratings_csv(const std::string& path);

}  // namespace sparsemt
