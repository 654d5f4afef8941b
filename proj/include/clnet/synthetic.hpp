#pragma once

// Deterministic generators for the robust line-fitting benchmark and for
// synthetic calibrated two-view correspondences, plus the line-delimited
// dataset file format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "clnet/geometry.hpp"

namespace clnet::data {

enum class Task { kLine, kTwoView };

std::string task_name(Task task);
Task parse_task(const std::string& name);

// One generated instance. For the line task `set.items` is N x 2 and the
// ground truth is a LineModel; for the two-view task it is N x 4 in
// normalized camera coordinates with an EssentialMatrix and pose.
struct Sample {
  Task task = Task::kLine;
  geometry::MatchSet set;
  std::optional<geometry::Pose> gt_pose;
  double outlier_ratio = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

inline constexpr std::size_t kLinePoints = 1000;
inline constexpr double kLineExtent = 5.0;

// Inlier count round(n * (1 - outlier_ratio)).
std::size_t inlier_count(std::size_t n, double outlier_ratio);

Sample gen_line_sample(std::uint64_t seed, std::uint64_t index, double outlier_ratio,
                       std::size_t n_points = kLinePoints);
std::vector<Sample> gen_line_dataset(std::size_t count, double outlier_ratio, std::uint64_t seed,
                                     std::size_t n_points = kLinePoints);

struct TwoViewOptions {
  std::size_t n_points = 1000;
  double outlier_ratio = 0.5;
  double noise = 0.0;           // Gaussian std in normalized image units
  double max_rotation_deg = 30.0;
  double outlier_min_distance = 1e-4;  // outliers are kept at least this far (symmetric distance)
};

Sample gen_two_view_sample(std::uint64_t seed, std::uint64_t index, const TwoViewOptions& options);
std::vector<Sample> gen_two_view_dataset(std::size_t count, const TwoViewOptions& options, std::uint64_t seed);

inline constexpr int kDatasetVersion = 1;

void write_dataset(std::ostream& out, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

// Distances of every item to the ground-truth model (point-line or symmetric epipolar).
std::vector<double> gt_distances(const Sample& sample);

}  // namespace clnet::data
