#include "stcalib/io/formats.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "stcalib/errors.hpp"
#include "stcalib/io/config.hpp"
#include "stcalib/nlls.hpp"

namespace stcalib::io {

namespace {

using nlohmann::json;

// 17 significant digits: enough for an exact double round trip, written in a
// fixed style so every file looks the same.
std::string num(double v) {
  if (!std::isfinite(v)) {
    throw InvalidArgumentError("cannot serialize a non-finite number");
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  return buf;
}

std::string quoted(const std::string& s) { return json(s).dump(); }

[[noreturn]] void fail_at(const std::string& path, int line, const std::string& message) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + message);
}

double rec_number(const json& rec, const char* key, const std::string& path, int line) {
  if (!rec.contains(key) || !rec.at(key).is_number()) {
    fail_at(path, line, std::string("missing numeric \"") + key + "\"");
  }
  return rec.at(key).get<double>();
}

int rec_int(const json& rec, const char* key, const std::string& path, int line) {
  if (!rec.contains(key) || !rec.at(key).is_number_integer()) {
    fail_at(path, line, std::string("missing integer \"") + key + "\"");
  }
  return rec.at(key).get<int>();
}

void rec_keys(const json& rec, std::initializer_list<const char*> allowed,
              const std::string& path, int line) {
  for (auto it = rec.begin(); it != rec.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      fail_at(path, line, "unknown key \"" + it.key() + "\"");
    }
  }
}

std::ofstream open_for_writing(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ParseError(path + ": cannot open for writing");
  }
  return out;
}

void finish_writing(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) {
    throw ParseError(path + ": write failed");
  }
}

json vec_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

json quat_json(const Rotation& r) {
  const Eigen::Quaterniond& q = r.quaternion();
  return json::array({q.w(), q.x(), q.y(), q.z()});
}

Eigen::Vector3d vec_from(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() ||
      !v[2].is_number()) {
    throw ParseError(where + ": expected [x, y, z]");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

Rotation quat_from(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4 || !v[0].is_number() || !v[1].is_number() ||
      !v[2].is_number() || !v[3].is_number()) {
    throw ParseError(where + ": expected [w, x, y, z]");
  }
  try {
    return Rotation::from_quaternion(v[0].get<double>(), v[1].get<double>(), v[2].get<double>(),
                                     v[3].get<double>());
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
}

}  // namespace

DetectionFile detection_file(const GroundTruthBundle& bundle, int camera) {
  if (camera != 0 && camera != 1) {
    throw InvalidArgumentError("camera must be 0 or 1");
  }
  DetectionFile data;
  data.scenario_id = bundle.spec.id;
  data.camera = camera;
  data.intrinsics = bundle.spec.intrinsics[static_cast<size_t>(camera)];
  data.board = bundle.spec.board;
  data.frames = bundle.cameras[static_cast<size_t>(camera)].frames;
  data.patterns = bundle.cameras[static_cast<size_t>(camera)].complete;
  return data;
}

void write_detection_file(const std::string& path, const DetectionFile& data) {
  if (data.version != 1) {
    throw InvalidArgumentError("only detection format version 1 can be written");
  }
  if (data.camera != 0 && data.camera != 1) {
    throw InvalidArgumentError("camera must be 0 or 1");
  }
  data.board.validate();
  data.intrinsics.validate();

  std::ofstream out = open_for_writing(path);
  const CameraIntrinsics& k = data.intrinsics;
  out << "{\"record\":\"header\",\"version\":1,\"scenario\":" << quoted(data.scenario_id)
      << ",\"camera\":" << data.camera << ",\"intrinsics\":{\"fx\":" << num(k.fx)
      << ",\"fy\":" << num(k.fy) << ",\"cx\":" << num(k.cx) << ",\"cy\":" << num(k.cy)
      << ",\"width\":" << k.width << ",\"height\":" << k.height << ",\"distortion\":["
      << num(k.distortion.k1) << "," << num(k.distortion.k2) << "," << num(k.distortion.p1)
      << "," << num(k.distortion.p2) << "]},\"board\":{\"layout\":\"asymmetric\",\"rows\":"
      << data.board.rows << ",\"cols\":" << data.board.cols
      << ",\"spacing\":" << num(data.board.spacing) << "}}\n";

  // Frames and patterns each arrive time-ordered; interleave by timestamp,
  // frame first on ties so the raw detections precede what was made of them.
  size_t fi = 0, pi = 0;
  const auto& frames = data.frames;
  const auto& patterns = data.patterns.patterns;
  while (fi < frames.size() || pi < patterns.size()) {
    const bool take_frame =
        pi >= patterns.size() ||
        (fi < frames.size() && frames[fi].timestamp <= patterns[pi].timestamp);
    if (take_frame) {
      const EllipseFrame& frame = frames[fi++];
      out << "{\"record\":\"ellipse_frame\",\"t\":" << num(frame.timestamp) << ",\"centers\":[";
      for (size_t i = 0; i < frame.centers.size(); ++i) {
        if (i > 0) {
          out << ",";
        }
        out << "[" << num(frame.centers[i].x()) << "," << num(frame.centers[i].y()) << "]";
      }
      out << "]}\n";
    } else {
      const GridPattern& pattern = patterns[pi++];
      out << "{\"record\":\"pattern\",\"t\":" << num(pattern.timestamp)
          << ",\"complete\":" << (pattern.complete ? "true" : "false") << ",\"points\":[";
      for (size_t i = 0; i < pattern.points.size(); ++i) {
        if (i > 0) {
          out << ",";
        }
        out << "[" << pattern.points[i].circle_index << ","
            << num(pattern.points[i].image_point.x()) << ","
            << num(pattern.points[i].image_point.y()) << "]";
      }
      out << "]}\n";
    }
  }
  finish_writing(out, path);
}

DetectionFile read_detection_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(path + ": cannot open file");
  }

  DetectionFile data;
  std::vector<Eigen::Vector3d> object;
  bool have_header = false;
  double last_frame_t = 0.0, last_pattern_t = 0.0;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail_at(path, line_no, e.what());
    }
    if (!rec.is_object() || !rec.contains("record") || !rec.at("record").is_string()) {
      fail_at(path, line_no, "missing record type");
    }
    const std::string kind = rec.at("record").get<std::string>();

    if (!have_header) {
      if (kind != "header") {
        fail_at(path, line_no, "first record must be a header");
      }
      rec_keys(rec, {"record", "version", "scenario", "camera", "intrinsics", "board"}, path,
               line_no);
      data.version = rec_int(rec, "version", path, line_no);
      if (data.version != 1) {
        fail_at(path, line_no,
                "unsupported format version " + std::to_string(data.version));
      }
      if (!rec.contains("scenario") || !rec.at("scenario").is_string()) {
        fail_at(path, line_no, "missing string \"scenario\"");
      }
      data.scenario_id = rec.at("scenario").get<std::string>();
      data.camera = rec_int(rec, "camera", path, line_no);
      if (data.camera != 0 && data.camera != 1) {
        fail_at(path, line_no, "camera must be 0 or 1");
      }
      if (!rec.contains("intrinsics") || !rec.at("intrinsics").is_object()) {
        fail_at(path, line_no, "missing object \"intrinsics\"");
      }
      const json& k = rec.at("intrinsics");
      rec_keys(k, {"fx", "fy", "cx", "cy", "width", "height", "distortion"}, path, line_no);
      data.intrinsics.fx = rec_number(k, "fx", path, line_no);
      data.intrinsics.fy = rec_number(k, "fy", path, line_no);
      data.intrinsics.cx = rec_number(k, "cx", path, line_no);
      data.intrinsics.cy = rec_number(k, "cy", path, line_no);
      data.intrinsics.width = rec_int(k, "width", path, line_no);
      data.intrinsics.height = rec_int(k, "height", path, line_no);
      if (!k.contains("distortion") || !k.at("distortion").is_array() ||
          k.at("distortion").size() != 4) {
        fail_at(path, line_no, "intrinsics need a 4-entry distortion array");
      }
      const json& d = k.at("distortion");
      for (const auto& c : d) {
        if (!c.is_number()) {
          fail_at(path, line_no, "distortion coefficients must be numbers");
        }
      }
      data.intrinsics.distortion = {d[0].get<double>(), d[1].get<double>(), d[2].get<double>(),
                                    d[3].get<double>()};
      if (!rec.contains("board") || !rec.at("board").is_object()) {
        fail_at(path, line_no, "missing object \"board\"");
      }
      const json& b = rec.at("board");
      rec_keys(b, {"layout", "rows", "cols", "spacing"}, path, line_no);
      if (!b.contains("layout") || !b.at("layout").is_string() ||
          b.at("layout").get<std::string>() != "asymmetric") {
        fail_at(path, line_no, "board layout must be \"asymmetric\"");
      }
      data.board.rows = rec_int(b, "rows", path, line_no);
      data.board.cols = rec_int(b, "cols", path, line_no);
      data.board.spacing = rec_number(b, "spacing", path, line_no);
      try {
        data.board.validate();
        data.intrinsics.validate();
      } catch (const Error& e) {
        fail_at(path, line_no, e.what());
      }
      object = board_object_points(data.board);
      have_header = true;
      continue;
    }

    if (kind == "header") {
      fail_at(path, line_no, "duplicate header");
    }
    if (kind == "ellipse_frame") {
      rec_keys(rec, {"record", "t", "centers"}, path, line_no);
      EllipseFrame frame;
      frame.timestamp = rec_number(rec, "t", path, line_no);
      if (!data.frames.empty() && frame.timestamp <= last_frame_t) {
        fail_at(path, line_no, "ellipse frames must be strictly time-ordered");
      }
      last_frame_t = frame.timestamp;
      if (!rec.contains("centers") || !rec.at("centers").is_array()) {
        fail_at(path, line_no, "missing array \"centers\"");
      }
      for (const json& c : rec.at("centers")) {
        if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number()) {
          fail_at(path, line_no, "each center must be [x, y]");
        }
        frame.centers.emplace_back(c[0].get<double>(), c[1].get<double>());
      }
      data.frames.push_back(std::move(frame));
    } else if (kind == "pattern") {
      rec_keys(rec, {"record", "t", "complete", "points"}, path, line_no);
      GridPattern pattern;
      pattern.timestamp = rec_number(rec, "t", path, line_no);
      if (!data.patterns.patterns.empty() && pattern.timestamp <= last_pattern_t) {
        fail_at(path, line_no, "patterns must be strictly time-ordered");
      }
      last_pattern_t = pattern.timestamp;
      if (!rec.contains("complete") || !rec.at("complete").is_boolean()) {
        fail_at(path, line_no, "missing boolean \"complete\"");
      }
      pattern.complete = rec.at("complete").get<bool>();
      if (!rec.contains("points") || !rec.at("points").is_array()) {
        fail_at(path, line_no, "missing array \"points\"");
      }
      int last_index = -1;
      for (const json& p : rec.at("points")) {
        if (!p.is_array() || p.size() != 3 || !p[0].is_number_integer() || !p[1].is_number() ||
            !p[2].is_number()) {
          fail_at(path, line_no, "each point must be [index, x, y]");
        }
        PatternPoint point;
        point.circle_index = p[0].get<int>();
        if (point.circle_index <= last_index) {
          fail_at(path, line_no, "point indices must be strictly increasing");
        }
        if (point.circle_index < 0 || point.circle_index >= data.board.circle_count()) {
          fail_at(path, line_no, "point index outside the board");
        }
        last_index = point.circle_index;
        point.image_point = {p[1].get<double>(), p[2].get<double>()};
        point.board_point = object[static_cast<size_t>(point.circle_index)];
        pattern.points.push_back(point);
      }
      if (pattern.complete !=
          (static_cast<int>(pattern.points.size()) == data.board.circle_count())) {
        fail_at(path, line_no, "complete flag contradicts the point count");
      }
      data.patterns.patterns.push_back(std::move(pattern));
    } else {
      fail_at(path, line_no, "unknown record type \"" + kind + "\"");
    }
  }
  if (!have_header) {
    throw ParseError(path + ": no header record");
  }
  return data;
}

void write_ground_truth(const std::string& path, const GroundTruthBundle& bundle) {
  std::ofstream out = open_for_writing(path);
  const Eigen::Quaterniond& q = bundle.truth.rotation.quaternion();
  const Eigen::Vector3d& t = bundle.truth.translation;
  out << "{\n  \"scenario\": " << quoted(bundle.spec.id) << ",\n  \"rotation_wxyz\": ["
      << num(q.w()) << ", " << num(q.x()) << ", " << num(q.y()) << ", " << num(q.z())
      << "],\n  \"translation\": [" << num(t.x()) << ", " << num(t.y()) << ", " << num(t.z())
      << "],\n  \"time_offset\": " << num(bundle.truth.time_offset) << "\n}\n";
  finish_writing(out, path);
}

GroundTruthFile read_ground_truth(const std::string& path) {
  json root;
  try {
    root = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!root.is_object()) {
    throw ParseError(path + ": expected an object");
  }
  for (const char* key : {"scenario", "rotation_wxyz", "translation", "time_offset"}) {
    if (!root.contains(key)) {
      throw ParseError(path + ": missing key \"" + std::string(key) + "\"");
    }
  }
  GroundTruthFile truth;
  if (!root.at("scenario").is_string()) {
    throw ParseError(path + ": \"scenario\" must be a string");
  }
  truth.scenario_id = root.at("scenario").get<std::string>();
  truth.params.rotation = quat_from(root.at("rotation_wxyz"), path + ": rotation_wxyz");
  truth.params.translation = vec_from(root.at("translation"), path + ": translation");
  if (!root.at("time_offset").is_number()) {
    throw ParseError(path + ": \"time_offset\" must be a number");
  }
  truth.params.time_offset = root.at("time_offset").get<double>();
  return truth;
}

void write_report(const std::string& path, const CalibrationResult& result) {
  json report;
  report["scenario"] = result.scenario_id;
  report["reference_camera"] = result.reference_camera;
  report["parameters"] = {{"rotation_wxyz", quat_json(result.params.rotation)},
                          {"translation", vec_json(result.params.translation)},
                          {"time_offset", result.params.time_offset}};

  json tracking = json::array();
  for (const TrackingSummary& t : result.tracking) {
    tracking.push_back({{"frames", t.frames},
                        {"input_patterns", t.input_patterns},
                        {"complete_input", t.complete_input},
                        {"output_patterns", t.output_patterns},
                        {"complete_output", t.complete_output},
                        {"complete_rate_input", t.complete_rate_input},
                        {"complete_rate_output", t.complete_rate_output}});
  }
  report["tracking"] = tracking;

  json pnp = json::array();
  for (const PnpSummary& p : result.pnp) {
    pnp.push_back({{"attempted", p.attempted},
                   {"solved", p.solved},
                   {"failures", p.failures},
                   {"mean_rms_px", p.mean_rms_px}});
  }
  report["pnp"] = pnp;

  json segments = json::array();
  for (const SegmentSummary& s : result.segments) {
    segments.push_back({{"t_min", s.t_min},
                        {"t_max", s.t_max},
                        {"control_points", s.control_points},
                        {"rotation_rms_rad", s.rotation_rms_rad},
                        {"position_rms_m", s.position_rms_m}});
  }
  report["segments"] = segments;

  const HandEyeResult& init = result.initialization;
  report["initialization"] = {{"rotation_wxyz", quat_json(init.params.rotation)},
                              {"translation", vec_json(init.params.translation)},
                              {"time_offset", init.params.time_offset},
                              {"seed_cost", init.seed_cost},
                              {"refined_cost", init.refined_cost},
                              {"pairs_used", init.pairs_used},
                              {"conditioning_warning", init.conditioning_warning}};

  const nlls::SolveReport& ba = result.refinement;
  json group_rms = json::object();
  for (const auto& [tag, rms] : ba.group_rms) {
    group_rms[tag] = rms;
  }
  report["refinement"] = {{"initial_cost", ba.initial_cost},
                          {"final_cost", ba.final_cost},
                          {"iterations", ba.iterations},
                          {"rejected_steps", ba.rejected_steps},
                          {"termination", nlls::to_string(ba.termination)},
                          {"condition_estimate", ba.condition_estimate},
                          {"group_rms", group_rms}};

  const ResidualStats& rs = result.residual_stats;
  report["residuals"] = {{"points", rs.point_count},
                         {"mean_px", json::array({rs.mean.x(), rs.mean.y()})},
                         {"sigma_px", json::array({rs.sigma.x(), rs.sigma.y()})},
                         {"rms_px", rs.rms_px},
                         {"robust_cost", rs.robust_cost},
                         {"histogram_bins", ResidualStats::kBins},
                         {"histogram_bin_width_px", ResidualStats::kBinWidth}};
  report["excluded"] = {{"reference", result.excluded_reference},
                        {"target", result.excluded_target}};

  json traj_segments = json::array();
  for (const TrajectorySegment& seg : result.trajectory.segments()) {
    json rots = json::array();
    for (const Rotation& r : seg.rotation_spline().control_points()) {
      rots.push_back(quat_json(r));
    }
    json positions = json::array();
    for (const Eigen::Vector3d& p : seg.position_spline().control_points()) {
      positions.push_back(vec_json(p));
    }
    traj_segments.push_back({{"start_time", seg.rotation_spline().start_time()},
                             {"knot_spacing", seg.rotation_spline().knot_spacing()},
                             {"t_min", seg.t_min()},
                             {"t_max", seg.t_max()},
                             {"rotation_wxyz", rots},
                             {"positions", positions}});
  }
  report["trajectory"] = {{"segments", traj_segments}};

  std::ofstream out = open_for_writing(path);
  out << report.dump(2) << "\n";
  finish_writing(out, path);
}

ReportData read_report(const std::string& path) {
  json root;
  try {
    root = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!root.is_object()) {
    throw ParseError(path + ": expected an object");
  }
  ReportData data;
  if (!root.contains("scenario") || !root.at("scenario").is_string()) {
    throw ParseError(path + ": missing string \"scenario\"");
  }
  data.scenario_id = root.at("scenario").get<std::string>();
  if (!root.contains("reference_camera") || !root.at("reference_camera").is_number_integer()) {
    throw ParseError(path + ": missing integer \"reference_camera\"");
  }
  data.reference_camera = root.at("reference_camera").get<int>();
  if (!root.contains("parameters") || !root.at("parameters").is_object()) {
    throw ParseError(path + ": missing object \"parameters\"");
  }
  const json& params = root.at("parameters");
  if (!params.contains("rotation_wxyz") || !params.contains("translation") ||
      !params.contains("time_offset") || !params.at("time_offset").is_number()) {
    throw ParseError(path + ": incomplete \"parameters\"");
  }
  data.params.rotation = quat_from(params.at("rotation_wxyz"), path + ": rotation_wxyz");
  data.params.translation = vec_from(params.at("translation"), path + ": translation");
  data.params.time_offset = params.at("time_offset").get<double>();

  if (root.contains("trajectory")) {
    const json& traj = root.at("trajectory");
    if (!traj.is_object() || !traj.contains("segments") || !traj.at("segments").is_array()) {
      throw ParseError(path + ": malformed \"trajectory\"");
    }
    std::vector<TrajectorySegment> segments;
    for (const json& seg : traj.at("segments")) {
      for (const char* key :
           {"start_time", "knot_spacing", "t_min", "t_max", "rotation_wxyz", "positions"}) {
        if (!seg.contains(key)) {
          throw ParseError(path + ": trajectory segment missing \"" + std::string(key) + "\"");
        }
      }
      const double start = seg.at("start_time").get<double>();
      const double dt = seg.at("knot_spacing").get<double>();
      std::vector<Rotation> rots;
      for (const json& q : seg.at("rotation_wxyz")) {
        rots.push_back(quat_from(q, path + ": trajectory rotation"));
      }
      std::vector<Eigen::Vector3d> positions;
      for (const json& p : seg.at("positions")) {
        positions.push_back(vec_from(p, path + ": trajectory position"));
      }
      try {
        segments.emplace_back(RotationSpline(start, dt, std::move(rots)),
                              PositionSpline(start, dt, std::move(positions)),
                              seg.at("t_min").get<double>(), seg.at("t_max").get<double>());
      } catch (const Error& e) {
        throw ParseError(path + ": " + e.what());
      }
    }
    try {
      data.trajectory = PiecewiseTrajectory(std::move(segments));
    } catch (const Error& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
  return data;
}

void write_histogram_csv(const std::string& path, const ResidualStats& stats) {
  if (static_cast<int>(stats.histogram.size()) !=
      ResidualStats::kBins * ResidualStats::kBins) {
    throw InvalidArgumentError("residual stats carry no histogram");
  }
  std::ofstream out = open_for_writing(path);
  out << "x_center_px,y_center_px,count\n";
  char buf[64];
  for (int iy = 0; iy < ResidualStats::kBins; ++iy) {
    for (int ix = 0; ix < ResidualStats::kBins; ++ix) {
      const double x = -ResidualStats::kRange + (ix + 0.5) * ResidualStats::kBinWidth;
      const double y = -ResidualStats::kRange + (iy + 0.5) * ResidualStats::kBinWidth;
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%d\n", x, y,
                    stats.histogram[static_cast<size_t>(iy * ResidualStats::kBins + ix)]);
      out << buf;
    }
  }
  finish_writing(out, path);
}

void write_metrics(std::ostream& out, const std::string& scenario_id,
                   const ErrorMetrics& metrics) {
  out << "{\n  \"scenario\": " << quoted(scenario_id)
      << ",\n  \"geodesic_deg\": " << num(metrics.geodesic_deg) << ",\n  \"euler_error_deg\": ["
      << num(metrics.euler_error_deg.x()) << ", " << num(metrics.euler_error_deg.y()) << ", "
      << num(metrics.euler_error_deg.z()) << "],\n  \"translation_error_cm\": ["
      << num(metrics.translation_error_cm.x()) << ", " << num(metrics.translation_error_cm.y())
      << ", " << num(metrics.translation_error_cm.z())
      << "],\n  \"offset_error_ms\": " << num(metrics.offset_error_ms) << "\n}\n";
}

}  // namespace stcalib::io
