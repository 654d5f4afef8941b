#include "clnet/synthetic.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>

#include "clnet/errors.hpp"

namespace clnet::data {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based stream: sample i depends only on (seed, i).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream)
{
  return std::mt19937_64(splitmix64(splitmix64(seed ^ (stream * 0x632be59bd9b4e019ULL)) + index));
}

void check_ratio(double outlier_ratio)
{
  if (!(outlier_ratio >= 0.0 && outlier_ratio < 1.0)) throw DomainError("outlier ratio must be in [0, 1)");
}

// Shuffles rows and labels together.
void shuffle_items(geometry::RowMatrix& items, std::vector<bool>& labels, std::mt19937_64& rng)
{
  std::vector<std::size_t> perm(labels.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  geometry::RowMatrix shuffled(items.rows(), items.cols());
  std::vector<bool> relabeled(labels.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.row(static_cast<Eigen::Index>(i)) = items.row(static_cast<Eigen::Index>(perm[i]));
    relabeled[i] = labels[perm[i]];
  }
  items = std::move(shuffled);
  labels = std::move(relabeled);
}

geometry::Vec3 random_unit(std::mt19937_64& rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    geometry::Vec3 v(normal(rng), normal(rng), normal(rng));
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

}  // namespace

std::string task_name(Task task) { return task == Task::kLine ? "line" : "twoview"; }

Task parse_task(const std::string& name)
{
  if (name == "line") return Task::kLine;
  if (name == "twoview") return Task::kTwoView;
  throw FormatError("unknown task '" + name + "' (expected line or twoview)");
}

std::size_t inlier_count(std::size_t n, double outlier_ratio)
{
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - outlier_ratio)));
}

Sample gen_line_sample(std::uint64_t seed, std::uint64_t index, double outlier_ratio, std::size_t n_points)
{
  check_ratio(outlier_ratio);
  if (n_points < 1) throw DomainError("line sample needs at least one point");
  auto rng = sample_rng(seed, index, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> coord(-kLineExtent, kLineExtent);

  // Coefficients are drawn until the line has b != 0 and crosses the square
  // with an x-interval on which y also stays in range.
  double a = 0.0, b = 0.0, c = 0.0, x_lo = 0.0, x_hi = 0.0;
  for (;;) {
    a = unit(rng);
    b = unit(rng);
    c = unit(rng);
    if (b == 0.0) continue;
    // y = -(a x + c) / b lies in [-E, E]  <=>  a x in [-E b - c, E b - c].
    x_lo = -kLineExtent;
    x_hi = kLineExtent;
    if (a > 0.0) {
      x_lo = std::max(x_lo, (-kLineExtent * b - c) / a);
      x_hi = std::min(x_hi, (kLineExtent * b - c) / a);
    } else if (std::abs(c) > kLineExtent * b) {
      continue;
    }
    if (x_hi > x_lo) break;
  }

  const std::size_t inliers = inlier_count(n_points, outlier_ratio);
  Sample s;
  s.task = Task::kLine;
  s.outlier_ratio = outlier_ratio;
  s.seed = seed;
  s.index = index;
  s.set.items.resize(static_cast<Eigen::Index>(n_points), 2);
  s.set.labels.assign(n_points, false);
  std::uniform_real_distribution<double> along(x_lo, x_hi);
  for (std::size_t i = 0; i < n_points; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (i < inliers) {
      const double x = along(rng);
      s.set.items(r, 0) = x;
      s.set.items(r, 1) = std::clamp(-(a * x + c) / b, -kLineExtent, kLineExtent);
      s.set.labels[i] = true;
    } else {
      s.set.items(r, 0) = coord(rng);
      s.set.items(r, 1) = coord(rng);
    }
  }
  shuffle_items(s.set.items, s.set.labels, rng);
  s.set.gt_model = geometry::make_line(a, b, c);
  return s;
}

std::vector<Sample> gen_line_dataset(std::size_t count, double outlier_ratio, std::uint64_t seed,
                                     std::size_t n_points)
{
  check_ratio(outlier_ratio);
  if (count < 1) throw DomainError("dataset count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_line_sample(seed, i, outlier_ratio, n_points));
  return out;
}

Sample gen_two_view_sample(std::uint64_t seed, std::uint64_t index, const TwoViewOptions& options)
{
  check_ratio(options.outlier_ratio);
  if (options.n_points < 20) throw DomainError("two-view sample needs at least 20 correspondences");
  if (options.noise < 0.0) throw DomainError("noise must be non-negative");
  auto rng = sample_rng(seed, index, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  geometry::Pose pose;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    const geometry::Vec3 axis = random_unit(rng);
    const double angle = unit(rng) * options.max_rotation_deg * std::numbers::pi / 180.0;
    pose.R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    std::normal_distribution<double> normal(0.0, 1.0);
    const geometry::Vec3 t(normal(rng), normal(rng), normal(rng));
    if (t.norm() > 1e-3) {
      pose.t = t.normalized();
      ok = true;
    }
  }
  if (!ok) throw DegenerateError("two-view generator: no usable translation after 100 attempts");
  const geometry::Mat3 e = geometry::essential_from_pose(pose);

  const std::size_t inliers = inlier_count(options.n_points, options.outlier_ratio);
  Sample s;
  s.task = Task::kTwoView;
  s.outlier_ratio = options.outlier_ratio;
  s.noise = options.noise;
  s.seed = seed;
  s.index = index;
  s.set.items.resize(static_cast<Eigen::Index>(options.n_points), 4);
  s.set.labels.assign(options.n_points, false);
  std::uniform_real_distribution<double> image(-0.6, 0.6);
  std::uniform_real_distribution<double> depth(4.0, 8.0);
  std::uniform_real_distribution<double> second(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, options.noise > 0.0 ? options.noise : 1.0);
  for (std::size_t i = 0; i < options.n_points; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    geometry::Vec3 x1, x2;
    for (;;) {
      const double u = image(rng), v = image(rng), z = depth(rng);
      const geometry::Vec3 world(u * z, v * z, z);
      const geometry::Vec3 cam2 = pose.R * world + pose.t;
      if (cam2.z() < 0.5) continue;
      x1 = {u, v, 1.0};
      x2 = cam2 / cam2.z();
      break;
    }
    if (i < inliers) {
      if (options.noise > 0.0) {
        x1.x() += noise(rng);
        x1.y() += noise(rng);
        x2.x() += noise(rng);
        x2.y() += noise(rng);
      }
      s.set.labels[i] = true;
    } else {
      for (;;) {
        x2 = {second(rng), second(rng), 1.0};
        const std::array<double, 4> c{x1.x(), x1.y(), x2.x(), x2.y()};
        if (geometry::symmetric_epipolar_distance(e, c) >= options.outlier_min_distance) break;
      }
    }
    s.set.items.row(r) << x1.x(), x1.y(), x2.x(), x2.y();
  }
  shuffle_items(s.set.items, s.set.labels, rng);
  s.set.gt_model = geometry::EssentialMatrix{e / e.norm()};
  s.gt_pose = pose;
  return s;
}

std::vector<Sample> gen_two_view_dataset(std::size_t count, const TwoViewOptions& options, std::uint64_t seed)
{
  if (count < 1) throw DomainError("dataset count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_two_view_sample(seed, i, options));
  return out;
}

// ---- file format ------------------------------------------------------------------

namespace {

json sample_to_json(const Sample& s)
{
  json j;
  j["task"] = task_name(s.task);
  j["seed"] = s.seed;
  j["index"] = s.index;
  j["outlier_ratio"] = s.outlier_ratio;
  j["noise"] = s.noise;
  json items = json::array();
  for (Eigen::Index r = 0; r < s.set.items.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < s.set.items.cols(); ++c) row.push_back(s.set.items(r, c));
    items.push_back(std::move(row));
  }
  j["items"] = std::move(items);
  json labels = json::array();
  for (bool l : s.set.labels) labels.push_back(l ? 1 : 0);
  j["labels"] = std::move(labels);
  if (s.set.gt_model) {
    if (const auto* line = std::get_if<geometry::LineModel>(&*s.set.gt_model)) {
      j["model"] = {{"line", {line->a, line->b, line->c}}};
    } else {
      const auto& m = std::get<geometry::EssentialMatrix>(*s.set.gt_model).m;
      json e = json::array();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e.push_back(m(r, c));
      j["model"] = {{"essential", std::move(e)}};
    }
  }
  if (s.gt_pose) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot.push_back(s.gt_pose->R(r, c));
    j["pose"] = {{"R", std::move(rot)}, {"t", {s.gt_pose->t.x(), s.gt_pose->t.y(), s.gt_pose->t.z()}}};
  }
  return j;
}

Sample sample_from_json(const json& j)
{
  Sample s;
  s.task = parse_task(j.at("task").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.index = j.at("index").get<std::uint64_t>();
  s.outlier_ratio = j.at("outlier_ratio").get<double>();
  s.noise = j.at("noise").get<double>();
  const auto& items = j.at("items");
  const std::size_t dim = s.task == Task::kLine ? 2 : 4;
  s.set.items.resize(static_cast<Eigen::Index>(items.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < items.size(); ++r) {
    const auto& row = items.at(r);
    if (row.size() != dim) throw FormatError("item " + std::to_string(r) + " has " + std::to_string(row.size()) + " values");
    for (std::size_t c = 0; c < dim; ++c)
      s.set.items(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row.at(c).get<double>();
  }
  for (const auto& l : j.at("labels")) s.set.labels.push_back(l.get<int>() != 0);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("line")) {
      const auto& v = m.at("line");
      s.set.gt_model = geometry::LineModel{v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()};
    } else {
      const auto& v = m.at("essential");
      geometry::Mat3 e;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e(r, c) = v.at(static_cast<std::size_t>(r * 3 + c)).get<double>();
      s.set.gt_model = geometry::EssentialMatrix{e};
    }
  }
  if (j.contains("pose")) {
    geometry::Pose pose;
    const auto& rot = j.at("pose").at("R");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) pose.R(r, c) = rot.at(static_cast<std::size_t>(r * 3 + c)).get<double>();
    const auto& t = j.at("pose").at("t");
    pose.t = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
    s.gt_pose = pose;
  }
  s.set.validate();
  return s;
}

}  // namespace

void write_dataset(std::ostream& out, const std::vector<Sample>& samples)
{
  out << json{{"format", "clnet-dataset"}, {"version", kDatasetVersion}}.dump() << '\n';
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

std::vector<Sample> read_dataset(std::istream& in)
{
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": malformed record (" + e.what() + ")");
    }
    if (!header) {
      if (!j.is_object() || j.value("format", "") != "clnet-dataset")
        throw FormatError("dataset line " + std::to_string(line_no) + ": missing dataset header");
      if (j.value("version", -1) != kDatasetVersion)
        throw FormatError("dataset line " + std::to_string(line_no) + ": unsupported version " +
                          j.value("version", json(-1)).dump());
      header = true;
      continue;
    }
    try {
      out.push_back(sample_from_json(j));
    } catch (const std::exception& e) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_dataset(out, samples);
  if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_dataset(in);
}

std::vector<double> gt_distances(const Sample& sample)
{
  if (!sample.set.gt_model) throw FormatError("sample has no ground-truth model");
  if (const auto* line = std::get_if<geometry::LineModel>(&*sample.set.gt_model))
    return geometry::point_line_distances(*line, sample.set.items);
  return geometry::symmetric_epipolar_distances(std::get<geometry::EssentialMatrix>(*sample.set.gt_model).m,
                                                sample.set.items);
}

}  // namespace clnet::data
