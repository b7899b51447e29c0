#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stcalib/errors.hpp"
#include "stcalib/io/config.hpp"
#include "stcalib/io/formats.hpp"
#include "stcalib/pipeline.hpp"
#include "stcalib/simulator.hpp"

namespace {

constexpr double kRadToDeg = 57.29577951308232;

std::string histogram_path(const std::string& report_path) {
  const std::string suffix = ".json";
  if (report_path.size() > suffix.size() &&
      report_path.compare(report_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return report_path.substr(0, report_path.size() - suffix.size()) + "_histogram.csv";
  }
  return report_path + "_histogram.csv";
}

int run_simulate(const std::string& config_path, const std::string& prefix, bool has_seed,
                 uint64_t seed) {
  stcalib::ScenarioSpec spec =
      stcalib::io::parse_scenario_config(stcalib::io::read_text_file(config_path));
  if (has_seed) {
    spec.seed = seed;
  }
  const stcalib::GroundTruthBundle bundle = stcalib::generate(spec);

  const std::string cam0_path = prefix + "_cam0.jsonl";
  const std::string cam1_path = prefix + "_cam1.jsonl";
  const std::string truth_path = prefix + "_truth.json";
  stcalib::io::write_detection_file(cam0_path, stcalib::io::detection_file(bundle, 0));
  stcalib::io::write_detection_file(cam1_path, stcalib::io::detection_file(bundle, 1));
  stcalib::io::write_ground_truth(truth_path, bundle);

  for (int cam = 0; cam < 2; ++cam) {
    const auto& stream = bundle.cameras[static_cast<size_t>(cam)];
    std::cout << "camera " << cam << ": " << stream.frames.size() << " frames, "
              << stream.complete.size() << " complete patterns -> "
              << (cam == 0 ? cam0_path : cam1_path) << "\n";
  }
  std::cout << "ground truth -> " << truth_path << "\n";
  return 0;
}

int run_calibrate(const std::vector<std::string>& detection_paths,
                  const std::string& config_path, const std::string& report_path) {
  stcalib::io::DetectionFile first = stcalib::io::read_detection_file(detection_paths[0]);
  stcalib::io::DetectionFile second = stcalib::io::read_detection_file(detection_paths[1]);
  if (first.camera == second.camera) {
    throw stcalib::ParseError("both detection files claim camera " +
                              std::to_string(first.camera));
  }
  if (first.scenario_id != second.scenario_id) {
    throw stcalib::ParseError("detection files come from different scenarios: \"" +
                              first.scenario_id + "\" vs \"" + second.scenario_id + "\"");
  }
  if (first.board.rows != second.board.rows || first.board.cols != second.board.cols ||
      first.board.spacing != second.board.spacing) {
    throw stcalib::ParseError("board specs disagree between the detection files");
  }

  const stcalib::io::DetectionFile& cam0 = first.camera == 0 ? first : second;
  const stcalib::io::DetectionFile& cam1 = first.camera == 0 ? second : first;

  stcalib::CalibrationOptions options;
  if (!config_path.empty()) {
    options = stcalib::io::parse_calibration_config(stcalib::io::read_text_file(config_path));
  }

  stcalib::CalibrationInput input;
  input.scenario_id = cam0.scenario_id;
  input.board = cam0.board;
  input.cameras[0] = {cam0.intrinsics, cam0.frames, cam0.patterns};
  input.cameras[1] = {cam1.intrinsics, cam1.frames, cam1.patterns};

  const stcalib::CalibrationResult result = stcalib::run_calibration(input, options);

  stcalib::io::write_report(report_path, result);
  stcalib::io::write_histogram_csv(histogram_path(report_path), result.residual_stats);

  const Eigen::Vector3d euler = stcalib::euler_xyz(result.params.rotation) * kRadToDeg;
  const Eigen::Vector3d& t = result.params.translation;
  std::cout << "reference camera: " << result.reference_camera << "\n";
  std::cout << "rotation (xyz deg): " << euler.x() << " " << euler.y() << " " << euler.z()
            << "\n";
  std::cout << "translation (m): " << t.x() << " " << t.y() << " " << t.z() << "\n";
  std::cout << "time offset (ms): " << result.params.time_offset * 1000.0 << "\n";
  std::cout << "residual rms (px): " << result.residual_stats.rms_px << " over "
            << result.residual_stats.point_count << " points\n";
  std::cout << "report -> " << report_path << "\n";
  return 0;
}

int run_evaluate(const std::string& report_path, const std::string& truth_path,
                 const std::string& out_path) {
  const stcalib::io::ReportData report = stcalib::io::read_report(report_path);
  const stcalib::io::GroundTruthFile truth = stcalib::io::read_ground_truth(truth_path);
  if (report.scenario_id != truth.scenario_id) {
    throw stcalib::ParseError("scenario ids disagree: report \"" + report.scenario_id +
                              "\" vs truth \"" + truth.scenario_id + "\"");
  }
  const stcalib::ErrorMetrics metrics =
      stcalib::evaluate(report.params, report.reference_camera, truth.params);
  if (out_path.empty()) {
    stcalib::io::write_metrics(std::cout, report.scenario_id, metrics);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
      throw stcalib::ParseError(out_path + ": cannot open for writing");
    }
    stcalib::io::write_metrics(out, report.scenario_id, metrics);
    out.flush();
    if (!out) {
      throw stcalib::ParseError(out_path + ": write failed");
    }
    std::cout << "metrics -> " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal calibration of a stereo rig from circle-grid detections"};
  app.require_subcommand(1);

  std::string sim_config;
  std::string sim_prefix = "scenario";
  uint64_t seed = 0;
  CLI::App* simulate =
      app.add_subcommand("simulate", "Generate a synthetic recording plus ground truth");
  simulate->add_option("--config", sim_config, "Scenario description (JSON)")->required();
  CLI::Option* seed_option =
      simulate->add_option("--seed", seed, "Overrides the seed in the scenario config");
  simulate->add_option(
      "--out", sim_prefix,
      "Output prefix; writes <prefix>_cam0.jsonl, <prefix>_cam1.jsonl, <prefix>_truth.json");

  std::vector<std::string> detection_paths;
  std::string cal_config;
  std::string report_path = "report.json";
  CLI::App* calibrate =
      app.add_subcommand("calibrate", "Estimate extrinsics and time offset from detections");
  calibrate->add_option("--detections", detection_paths, "Two detection files, one per camera")
      ->required()
      ->expected(2);
  calibrate->add_option("--config", cal_config,
                        "Calibration options (JSON); library defaults when omitted");
  calibrate->add_option("--out", report_path,
                        "Report path; the residual histogram CSV lands next to it");

  std::string eval_report;
  std::string eval_truth;
  std::string eval_out;
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Score a calibration report against ground truth");
  evaluate->add_option("--report", eval_report, "Report written by calibrate")->required();
  evaluate->add_option("--truth", eval_truth, "Ground truth written by simulate")->required();
  evaluate->add_option("--out", eval_out, "Metrics JSON path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) {
      return run_simulate(sim_config, sim_prefix, seed_option->count() > 0, seed);
    }
    if (calibrate->parsed()) {
      return run_calibrate(detection_paths, cal_config, report_path);
    }
    return run_evaluate(eval_report, eval_truth, eval_out);
  } catch (const stcalib::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const stcalib::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stcalib::InvalidArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stcalib::ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stcalib::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
