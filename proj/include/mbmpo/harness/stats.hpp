#ifndef MBMPO_HARNESS_STATS_HPP_
#define MBMPO_HARNESS_STATS_HPP_

#include <optional>
#include <vector>

namespace mbmpo {

// 1-based ranks; tied values share the mean of their ranks
std::vector<double> average_ranks(const std::vector<double>& values);

// nullopt when either series is constant (correlation undefined)
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

double mean(const std::vector<double>& values);
// population standard deviation
double stddev(const std::vector<double>& values);

}  // namespace mbmpo

#endif  // MBMPO_HARNESS_STATS_HPP_
