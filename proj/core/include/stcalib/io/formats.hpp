#pragma once

#include <iosfwd>
#include <string>

#include "stcalib/pipeline.hpp"
#include "stcalib/simulator.hpp"

namespace stcalib::io {

// Detection stream of one camera: a JSON-lines file. The first record is a
// header carrying the format version, scenario id, camera index, intrinsics,
// and board layout; after it, "ellipse_frame" records (unordered centers) and
// "pattern" records (indexed points) follow in time order. Doubles are
// written with 17 significant digits so a round trip is exact.
struct DetectionFile {
  int version = 1;
  std::string scenario_id;
  int camera = 0;
  CameraIntrinsics intrinsics;
  BoardSpec board;
  std::vector<EllipseFrame> frames;
  PatternTrack patterns;
};

DetectionFile detection_file(const GroundTruthBundle& bundle, int camera);

void write_detection_file(const std::string& path, const DetectionFile& data);

// Throws ParseError with "path:line:" context on malformed input.
DetectionFile read_detection_file(const std::string& path);

struct GroundTruthFile {
  std::string scenario_id;
  SpatiotemporalParams params;  // camera 1 w.r.t. camera 0
};

void write_ground_truth(const std::string& path, const GroundTruthBundle& bundle);
GroundTruthFile read_ground_truth(const std::string& path);

// Full calibration report: parameters, stage summaries, residual statistics,
// and the fitted trajectory (control points included, so the report alone
// reproduces any pose).
void write_report(const std::string& path, const CalibrationResult& result);

// The slice of a report needed to score it against a ground truth file.
struct ReportData {
  std::string scenario_id;
  int reference_camera = 0;
  SpatiotemporalParams params;
  PiecewiseTrajectory trajectory;
};

ReportData read_report(const std::string& path);

// 50x50 residual histogram as "x_center_px,y_center_px,count" rows.
void write_histogram_csv(const std::string& path, const ResidualStats& stats);

void write_metrics(std::ostream& out, const std::string& scenario_id,
                   const ErrorMetrics& metrics);

}  // namespace stcalib::io
