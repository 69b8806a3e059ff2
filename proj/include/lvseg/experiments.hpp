#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvseg/evalstats.hpp"
#include "lvseg/phantom.hpp"
#include "lvseg/pipeline.hpp"

namespace lvseg::experiments {

/// One experimental arm: per-sample metrics against the phantom truth.
struct Group {
  std::string label;
  std::vector<FrameMetrics> samples;

  std::vector<double> values(const std::string& metric) const;
};

struct MetricTest {
  std::string metric;  ///< d_m, d_H, dice or volume
  eval::KruskalWallisResult kw;
};

struct ExperimentResult {
  std::string name;
  std::string phantom;
  std::vector<Group> groups;
  std::vector<MetricTest> tests;
  nlohmann::json extra = nlohmann::json::object();
  pipeline::Diagnostics diagnostics;

  const Group& group(const std::string& label) const;
  const MetricTest& test(const std::string& metric) const;
};

struct Settings {
  /// Every n-th frame of the phantom is one sample; 0 picks the experiment default.
  int frame_stride = 0;
  pipeline::Options options;
  std::function<void(const std::string&)> progress;
};

/// Spatial segmentation of sampled frames at 1, 5, 10 and 15 degrees (beating phantom).
ExperimentResult angular_spacing(const Settings& s);
/// Unperturbed axis plus the six elemental pi/32 rotations, seeds retraced on the new planes.
ExperimentResult axis_perturbation(const Settings& s);
/// Seeds eroded, unchanged and dilated by 1 mm.
ExperimentResult contour_perturbation(const Settings& s);
/// Pipeline against the truncated-ellipsoid model on the bent phantom, plus the
/// model's volume error on the spheroid (extra.spheroid_volume).
ExperimentResult ellipsoid_baseline(const Settings& s);
/// Full 4D study of the beating phantom with the moving-mesh engine and with
/// classical demons; `proposed` receives the moving-mesh study when given.
ExperimentResult method_comparison(const Settings& s, pipeline::StudyResult* proposed = nullptr);

const std::vector<std::string>& names();
/// Throws ValidationError (experiment.unknown) for names outside names().
ExperimentResult run(const std::string& name, const Settings& s);

/// Writes result.json, samples.csv, kruskal_wallis.csv and table.txt.
void write_result(const ExperimentResult& r, const std::filesystem::path& dir);
std::string format_table(const ExperimentResult& r);

}  // namespace lvseg::experiments
